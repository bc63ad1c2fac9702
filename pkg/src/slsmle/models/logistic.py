# Logistic regression with fixed design: L(u) = -sum{Y_i s_i - phi(s_i)},
# s_i = <Psi_i, u>, phi(s) = log(1 + e^s).

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit
from scipy.linalg import cho_factor, cho_solve, solve_triangular, LinAlgError

from .._optim import newton_minimize
from ..errors import PreconditionError, ValidationError
from .base import ConditionConstants, SlsModel, as_rng

_SQRT_E = math.sqrt(math.e)


def logistic_phi_derivs(s):
    """phi and its first four derivatives, overflow-safe.

    With q = sigmoid(s): phi'' = q(1-q), phi''' = q(1-q)(1-2q),
    phi'''' = q(1-q)(1 - 6 q(1-q)).
    """
    s = np.asarray(s, dtype=float)
    q = expit(s)
    w = q * expit(-s)
    return (np.logaddexp(0.0, s), q, w, w * (1.0 - 2.0 * q),
            w * (1.0 - 6.0 * w))


class LogisticModel(SlsModel):
    kind = "logistic"
    v2_convention = "V^2 = D^2 (unit factor; no factor 2)"

    def __init__(self, designs, theta_star, truth=None):
        X = np.atleast_2d(np.asarray(designs, dtype=float))
        th = np.asarray(theta_star, dtype=float).ravel()
        if th.shape[0] != X.shape[0]:
            raise ValidationError("theta_star must have one entry per design row")
        if np.any(th <= 0) or np.any(th >= 1):
            raise ValidationError("theta_star must lie in (0, 1)")
        self.designs = X
        self.theta_star = th
        self.dim = X.shape[1]
        self.n_eff = float(X.shape[0])
        self._truth = None if truth is None else np.asarray(truth, float).copy()

    @classmethod
    def from_truth(cls, designs, upsilon_star):
        X = np.atleast_2d(np.asarray(designs, dtype=float))
        u = np.asarray(upsilon_star, dtype=float)
        return cls(X, expit(X @ u), truth=u)

    @property
    def n(self):
        return self.designs.shape[0]

    @property
    def truth(self):
        if self._truth is None:
            r = newton_minimize(self.pop_loss, self.pop_grad, self.pop_hess,
                                np.zeros(self.dim), tol=1e-13)
            self._truth = r["x"]
        return self._truth

    def _s(self, u):
        return self.designs @ np.asarray(u, dtype=float)

    def pop_loss(self, u):
        s = self._s(u)
        return float(-np.sum(self.theta_star * s - np.logaddexp(0.0, s)))

    def loss(self, u, data):
        s = self._s(u)
        return float(-np.sum(np.asarray(data) * s - np.logaddexp(0.0, s)))

    def pop_grad(self, u):
        return -self.designs.T @ (self.theta_star - expit(self._s(u)))

    def grad_zeta(self, data):
        return -self.designs.T @ (np.asarray(data, dtype=float) - self.theta_star)

    def weights(self, u):
        s = self._s(u)
        return expit(s) * expit(-s)

    def pop_hess(self, u):
        w = self.weights(u)
        return (self.designs * w[:, None]).T @ self.designs

    def var_grad_zeta(self):
        v = self.theta_star * (1.0 - self.theta_star)
        return (self.designs * v[:, None]).T @ self.designs

    def dir3(self, u, w):
        a = self.designs @ np.asarray(w, dtype=float)
        return float(np.sum(a ** 3 * logistic_phi_derivs(self._s(u))[3]))

    def dir4(self, u, w):
        a = self.designs @ np.asarray(w, dtype=float)
        return float(np.sum(a ** 4 * logistic_phi_derivs(self._s(u))[4]))

    def third_contract(self, u, w):
        a = self.designs @ np.asarray(w, dtype=float)
        return self.designs.T @ (a * a * logistic_phi_derivs(self._s(u))[3])

    def sample(self, rng):
        rng = as_rng(rng)
        return (rng.random(self.n) < self.theta_star).astype(float)

    def default_V2(self, D2=None):
        if D2 is None:
            return self.var_grad_zeta()
        return np.asarray(D2, dtype=float)


def logistic_loss_grad_hess(m: LogisticModel, u, labels=None):
    """(loss, grad, hess); population versions (theta* for Y) without labels."""
    if labels is None:
        return m.pop_loss(u), m.pop_grad(u), m.pop_hess(u)
    return m.loss(u, labels), m.grad(u, labels), m.hess(u, labels)


def logistic_dir_deriv(m: LogisticModel, u, w, order: int) -> float:
    """sum_i <Psi_i, w>^k phi^(k)(<Psi_i, u>) for k = 3 or 4."""
    if order == 3:
        return m.dir3(u, w)
    if order == 4:
        return m.dir4(u, w)
    raise ValueError("order must be 3 or 4")


def _chol(D2):
    try:
        return cho_factor(np.asarray(D2, dtype=float), lower=True)
    except (LinAlgError, ValueError) as exc:
        raise PreconditionError("D^2 is singular or not positive definite") from exc


def design_delta0(designs, D2):
    """max_i ||D^{-1} Psi_i||."""
    c, low = _chol(D2)
    Y = solve_triangular(c, np.asarray(designs, float).T, lower=low)
    return float(np.sqrt(np.max(np.sum(Y * Y, axis=0))))


def _quartic_ratio_max(X, w, D2, n_dirs, seed, steps=30):
    # max_z sum_i <Psi_i,z>^4 w_i / ||D z||^4 by random starts + power refinement
    c, low = _chol(D2)
    L = np.tril(c) if low else np.triu(c).T
    # z = L^{-T} v with ||v|| = 1 gives ||D z|| = 1
    A = solve_triangular(L, X.T, lower=True).T      # rows Psi_i' L^{-T}
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n_dirs, X.shape[1]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    best = 0.0
    for _ in range(steps + 1):
        a = V @ A.T                                  # (n_dirs, n)
        val = np.sum(a ** 4 * w, axis=1)
        best = max(best, float(val.max()))
        G = (a ** 3 * w) @ A
        nrm = np.linalg.norm(G, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        V = G / nrm
    return best


def logistic_conditions(m: LogisticModel, D2, r: float, center=None,
                        tighten: int = 0, seed: int = 0) -> ConditionConstants:
    """delta0, varkappa, tau3 = sqrt(e) varkappa, tau4 = sqrt(e) varkappa^2.

    varkappa defaults to the conservative varkappa^2 = sqrt(e) delta0^2; with
    ``tighten > 0`` that many random directions are used to maximize the
    quartic ratio at the center, and the smaller of the two is kept.
    """
    D2 = np.asarray(D2, dtype=float)
    d0 = design_delta0(m.designs, D2)
    kap_cons = math.sqrt(_SQRT_E) * d0
    kap = kap_cons
    notes = {"varkappa_conservative": kap_cons,
             "variability_ok": bool(d0 * r <= 0.5)}
    if tighten > 0:
        u0 = m.truth if center is None else np.asarray(center, float)
        ratio = _quartic_ratio_max(m.designs, m.weights(u0), D2, int(tighten), seed)
        kap_t = math.sqrt(_SQRT_E * ratio)
        notes["varkappa_sampled"] = kap_t
        kap = min(kap_t, kap_cons)
    return ConditionConstants(tau3=_SQRT_E * kap, tau4=_SQRT_E * kap * kap,
                              delta0=d0, varkappa=kap, radius=float(r),
                              notes=notes)


def logistic_variability(m: LogisticModel, center, D2, r, n_samples=200, seed=0):
    """Extreme eigenvalues of F(c)^{-1/2} F(u) F(c)^{-1/2} over sampled
    ||D(u - c)|| <= r."""
    center = np.asarray(center, dtype=float)
    F0 = m.fisher(center)
    c0, low0 = cho_factor(F0, lower=True)
    L0 = np.tril(c0)
    cD, lowD = _chol(D2)
    LD = np.tril(cD)
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, -np.inf
    for _ in range(n_samples):
        v = rng.standard_normal(m.dim)
        v *= r * rng.random() ** (1.0 / m.dim) / np.linalg.norm(v)
        u = center + solve_triangular(LD.T, v, lower=False)
        F = m.fisher(u)
        M = solve_triangular(L0, solve_triangular(L0, F, lower=True).T, lower=True)
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
    return float(lo), float(hi)
