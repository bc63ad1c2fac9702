# Gaussian precision-matrix model.
# L(U) = 1/2 sum_i tr(A_i U) - (n/2) log det U, A_i = X_i X_i', U SPD.
# Inside the generic solver U is flattened by an isometric half-vectorization
# (off-diagonal entries times sqrt 2), so Frobenius inner products carry over.

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from ..errors import DomainExit, PreconditionError, ValidationError
from .base import ConditionConstants, SlsModel, as_rng

_R2 = math.sqrt(2.0)


def svec_dim(p):
    return p * (p + 1) // 2


def svec(A):
    A = np.asarray(A, dtype=float)
    i, j = np.triu_indices(A.shape[0])
    return np.where(i == j, 1.0, _R2) * A[i, j]


def smat(v, p=None):
    v = np.asarray(v, dtype=float)
    if p is None:
        p = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    i, j = np.triu_indices(p)
    vals = np.where(i == j, 1.0, 1.0 / _R2) * v
    A = np.zeros((p, p))
    A[i, j] = vals
    A[j, i] = vals
    return A


def _svec_matrix(p):
    # P with svec(A) = P vec(A) for symmetric A, P P' = I
    k = svec_dim(p)
    P = np.zeros((k, p * p))
    for r, (i, j) in enumerate(zip(*np.triu_indices(p))):
        if i == j:
            P[r, i * p + i] = 1.0
        else:
            P[r, i * p + j] = P[r, j * p + i] = 1.0 / _R2
    return P


def _chol(U):
    try:
        return cho_factor(U, lower=True)
    except (LinAlgError, ValueError) as exc:
        raise DomainExit("precision parameter is not positive definite") from exc


def _logdet(c):
    return 2.0 * float(np.sum(np.log(np.diag(c[0]))))


class PrecisionModel(SlsModel):
    kind = "precision"
    v2_convention = "V^2 = Var(grad zeta) (closed form)"

    def __init__(self, sigma, n):
        S = np.asarray(sigma, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
            raise ValidationError("sigma must be a symmetric matrix")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("sigma must be positive definite") from exc
        self.sigma = S
        self.p = S.shape[0]
        self.dim = svec_dim(self.p)
        self.n = int(n)
        self.n_eff = float(n)
        self._P = _svec_matrix(self.p)
        self._truth = svec(np.linalg.inv(S))

    @property
    def truth(self):
        return self._truth

    def as_matrix(self, u):
        return smat(u, self.p)

    def in_domain(self, u):
        try:
            np.linalg.cholesky(smat(u, self.p))
            return True
        except np.linalg.LinAlgError:
            return False

    def initial_point(self):
        return svec(np.diag(1.0 / np.diag(self.sigma)))

    def scatter(self, data):
        X = np.asarray(data, dtype=float)
        return X.T @ X

    def _value(self, u, A, scale):
        U = smat(u, self.p)
        c = _chol(U)
        return float(0.5 * scale * np.sum(A * U) - 0.5 * self.n * _logdet(c))

    def pop_loss(self, u):
        return self._value(u, self.sigma, self.n)

    def loss(self, u, data):
        return self._value(u, self.scatter(data), 1.0)

    def _inv(self, u):
        U = smat(u, self.p)
        c = _chol(U)
        return cho_solve(c, np.eye(self.p))

    def pop_grad(self, u):
        return svec(0.5 * self.n * (self.sigma - self._inv(u)))

    def grad_zeta(self, data):
        return svec(0.5 * (self.scatter(data) - self.n * self.sigma))

    def _kron_hess(self, Ui):
        return 0.5 * self.n * self._P @ np.kron(Ui, Ui) @ self._P.T

    def pop_hess(self, u):
        return self._kron_hess(self._inv(u))

    def var_grad_zeta(self):
        return self._kron_hess(self.sigma)

    def _ratio(self, u, w):
        U = smat(u, self.p)
        c = _chol(U)
        return cho_solve(c, smat(w, self.p))

    def dir3(self, u, w):
        A = self._ratio(u, w)
        return float(-self.n * np.trace(A @ A @ A))

    def dir4(self, u, w):
        A = self._ratio(u, w)
        A2 = A @ A
        return float(3.0 * self.n * np.trace(A2 @ A2))

    def third_contract(self, u, w):
        Ui = self._inv(u)
        Z = smat(w, self.p)
        M = Ui @ Z @ Ui @ Z @ Ui
        return svec(-self.n * 0.5 * (M + M.T))

    def sample(self, rng):
        rng = as_rng(rng)
        L = np.linalg.cholesky(self.sigma)
        return rng.standard_normal((self.n, self.p)) @ L.T


def precision_loss_grad_hess(m: PrecisionModel, U, data=None):
    """(loss, grad matrix, hess_apply) at an SPD matrix U.

    hess_apply(Z) = (n/2) U^{-1} Z U^{-1}; without data the population loss
    (n Sigma in place of the scatter matrix) is used.
    """
    U = np.asarray(U, dtype=float)
    c = _chol(U)
    Ui = cho_solve(c, np.eye(m.p))
    A = m.n * m.sigma if data is None else m.scatter(data)
    loss = float(0.5 * np.sum(A * U) - 0.5 * m.n * _logdet(c))
    grad = 0.5 * A - 0.5 * m.n * Ui

    def hess_apply(Z):
        return 0.5 * m.n * Ui @ np.asarray(Z, float) @ Ui
    return loss, grad, hess_apply


def precision_dir_derivs(m: PrecisionModel, U, Z):
    """Second, third, fourth derivatives of t -> E L(U + tZ) at t = 0:
    (n/2) tr W^2, -n tr W^3, 3n tr W^4 with W = U^{-1/2} Z U^{-1/2}."""
    c = _chol(np.asarray(U, float))
    A = cho_solve(c, np.asarray(Z, float))
    A2 = A @ A
    return (0.5 * m.n * np.trace(A2), -m.n * np.trace(A2 @ A),
            3.0 * m.n * np.trace(A2 @ A2))


def precision_constants(m: PrecisionModel, r: float) -> ConditionConstants:
    """tau3 = sqrt 8 (1 - sqrt(2 r^2/n))^{-3} n^{-1/2}, tau4 = 12 (...)^{-4} n^{-1}."""
    r = float(r)
    if r < 0 or r >= math.sqrt(m.n / 2.0):
        raise PreconditionError(f"need 0 <= r < sqrt(n/2) = {math.sqrt(m.n / 2):.6g}")
    f = 1.0 - math.sqrt(2.0 * r * r / m.n)
    return ConditionConstants(tau3=math.sqrt(8.0) / f ** 3 / math.sqrt(m.n),
                              tau4=12.0 / f ** 4 / m.n, radius=r)
