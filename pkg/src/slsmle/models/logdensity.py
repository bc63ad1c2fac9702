# Linear log-density model on a 1-D quadrature grid.
# f(x) = exp(<Psi(x), u> - phi(u)) relative to a base measure mu0 that is
# discretized as nodes x_k with positive weights w_k.

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from ..errors import DomainExit, PreconditionError, ValidationError
from .base import ConditionConstants, SlsModel, as_rng


def _basis(name, p, a, b):
    if name == "poly":
        # shifted monomials on [-1, 1]
        def f(x):
            t = (2 * x - (a + b)) / (b - a)
            return np.stack([t ** (j + 1) for j in range(p)], axis=1)
    elif name == "cosine":
        def f(x):
            t = (x - a) / (b - a)
            return np.stack([np.sqrt(2) * np.cos(np.pi * (j + 1) * t)
                             for j in range(p)], axis=1)
    else:
        raise ValidationError(f"unknown basis {name!r}")
    return f


class LogDensity1D(SlsModel):
    kind = "logdensity"
    v2_convention = "V^2 = 2 n hess phi(u*) (factor 2)"

    def __init__(self, nodes, weights, design, truth, n):
        x = np.asarray(nodes, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        Psi = np.asarray(design, dtype=float)
        if Psi.ndim == 1:
            Psi = Psi[:, None]
        if not (x.size == w.size == Psi.shape[0]):
            raise ValidationError("nodes, weights and design rows must match")
        if np.any(w <= 0):
            raise ValidationError("quadrature weights must be positive")
        self.nodes, self.weights, self.design = x, w, Psi
        self._logw = np.log(w)
        self.dim = Psi.shape[1]
        self.n = int(n)
        self.n_eff = float(n)
        self._truth = np.asarray(truth, dtype=float).ravel()
        if self._truth.size != self.dim:
            raise ValidationError("truth has wrong length")
        _, self.psi_bar, h = self._moments(self._truth)
        self._hess_star = h

    @classmethod
    def trapezoid(cls, a, b, m, funcs, truth, n):
        """Composite trapezoid grid with m nodes on [a, b].

        ``funcs`` is a callable x -> (m, p) array or a basis name with p
        implied by len(truth) ("poly" or "cosine").
        """
        x = np.linspace(a, b, int(m))
        w = np.full(x.size, (b - a) / (x.size - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        if isinstance(funcs, str):
            funcs = _basis(funcs, len(truth), a, b)
        return cls(x, w, funcs(x), truth, n)

    @property
    def truth(self):
        return self._truth

    def _logits(self, u):
        return self._logw + self.design @ np.asarray(u, dtype=float)

    def tilted(self, u):
        """Node probabilities of the tilted measure P_u."""
        lg = self._logits(u)
        phi = logsumexp(lg)
        if not np.isfinite(phi):
            raise DomainExit(f"log-partition not finite at u={np.asarray(u)}")
        return phi, np.exp(lg - phi)

    def _moments(self, u):
        phi, pi = self.tilted(u)
        mean = pi @ self.design
        C = self.design - mean
        return phi, mean, (C * pi[:, None]).T @ C

    def phi(self, u):
        return self.tilted(u)[0]

    def pop_loss(self, u):
        return float(-self.n * (self.psi_bar @ u) + self.n * self.phi(u))

    def loss(self, u, data):
        return float(-(self.suff_stat(data) @ u) + self.n * self.phi(u))

    def suff_stat(self, data):
        idx = np.asarray(data, dtype=int)
        return self.design[idx].sum(axis=0)

    def pop_grad(self, u):
        return self.n * (self._moments(u)[1] - self.psi_bar)

    def grad_zeta(self, data):
        return -(self.suff_stat(data) - self.n * self.psi_bar)

    def pop_hess(self, u):
        return self.n * self._moments(u)[2]

    def var_grad_zeta(self):
        return self.n * self._hess_star

    def _dir_moments(self, u, w):
        _, pi = self.tilted(u)
        U = self.design @ np.asarray(w, dtype=float)
        c = U - pi @ U
        return pi, c, float(pi @ c ** 2), float(pi @ c ** 3), float(pi @ c ** 4)

    def dir3(self, u, w):
        return self.n * self._dir_moments(u, w)[3]

    def dir4(self, u, w):
        _, _, m2, _, m4 = self._dir_moments(u, w)
        return self.n * (m4 - 3 * m2 * m2)

    def third_contract(self, u, w):
        pi, c, _, _, _ = self._dir_moments(u, w)
        mean = pi @ self.design
        return self.n * ((self.design - mean) * (pi * c * c)[:, None]).sum(axis=0)

    def sample(self, rng):
        """Node indices drawn by inverse CDF of the tilted measure at u*."""
        rng = as_rng(rng)
        _, pi = self.tilted(self._truth)
        cdf = np.cumsum(pi)
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, rng.random(self.n), side="right")
        return np.minimum(idx, pi.size - 1)

    def default_V2(self, D2=None):
        return 2.0 * self.n * self._hess_star


def logdensity_phi(m: LogDensity1D, u):
    """(phi, grad, hess) of the discretized log-partition."""
    return m._moments(u)


def logdensity_moment_ratios(m: LogDensity1D, u, z):
    """(|E c^3| / (E c^2)^{3/2}, E c^4 / (E c^2)^2) for c = <Psi - E_u Psi, z>."""
    _, _, m2, m3, m4 = m._dir_moments(u, z)
    if m2 <= 0:
        raise PreconditionError("degenerate direction z")
    return abs(m3) / m2 ** 1.5, m4 / m2 ** 2


def _inv_sqrt(H):
    w, U = np.linalg.eigh(0.5 * (H + H.T))
    if w.min() <= 1e-14 * max(w.max(), 1e-300):
        raise PreconditionError("hess phi is singular; dictionary is degenerate")
    return (U / np.sqrt(w)) @ U.T


def logdensity_condition_constants(m: LogDensity1D, rho: float, n_samples: int,
                                   seed: int = 0) -> ConditionConstants:
    """Randomized sup-estimates of C_rho, C_Psi3, C_Psi4, then c3, c4, tau3, tau4.

    Samples u in the ellipsoid B_rho(u*), offsets with <hess phi(u), w^2> <= 4 rho^2
    and directions z; running maxima make the estimates nondecreasing in
    n_samples for a fixed seed.
    """
    if rho <= 0:
        raise PreconditionError("rho must be > 0")
    rng = np.random.default_rng(seed)
    p = m.dim
    R0 = _inv_sqrt(m._hess_star)
    C_rho, C3, C4 = 1.0, 0.0, 0.0
    for k in range(int(n_samples)):
        v = rng.standard_normal(p)
        t1 = 1.0 if k % 2 == 0 else rng.random() ** (1.0 / p)
        u = m.truth + rho * t1 * (R0 @ (v / np.linalg.norm(v)))
        phi_u, g_u, H_u = m._moments(u)
        Ru = _inv_sqrt(H_u)
        v2 = rng.standard_normal(p)
        t2 = 1.0 if k % 2 == 0 else rng.random()
        w = 2.0 * rho * t2 * (Ru @ (v2 / np.linalg.norm(v2)))
        try:
            ph = m.phi(u + w)
        except DomainExit as exc:
            raise DomainExit(f"sampling left the domain at u={u + w}") from exc
        C_rho = max(C_rho, math.exp(ph - phi_u - g_u @ w))
        z = rng.standard_normal(p)
        r3, r4 = logdensity_moment_ratios(m, u, z)
        C3, C4 = max(C3, r3), max(C4, r4)
    C4_used = max(C4, 3.0)
    c3 = C3 * (C4_used * C_rho) ** 0.75
    c4 = (C4_used - 3.0) * C4_used * C_rho
    return ConditionConstants(
        tau3=c3 / math.sqrt(m.n), tau4=c4 / m.n, c3=c3, c4=c4, C_rho=C_rho,
        C_psi3=C3, C_psi4=C4_used, radius=float(rho),
        notes={"C_psi4_estimate": C4, "n_samples": int(n_samples)})
