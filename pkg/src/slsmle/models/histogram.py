# Histogram (multinomial) log-density model with softmax log-partition.
# L(u) = -<S, u> + n phi(u), phi(u) = log sum_j exp(u_j).

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from ..errors import ValidationError
from .base import SlsModel, as_rng


def histogram_phi(u):
    """(phi, theta, hess): log-sum-exp, softmax, diag(theta) - theta theta'."""
    u = np.asarray(u, dtype=float)
    th = softmax(u)
    return float(logsumexp(u)), th, np.diag(th) - np.outer(th, th)


def _centered_moments(th, w):
    m1 = float(th @ w)
    c = w - m1
    return c, float(th @ c ** 2), float(th @ c ** 3), float(th @ c ** 4)


def histogram_third_dir(u, w) -> float:
    """<grad^3 phi(u), w^3> = E(W - EW)^3 for W = w_J, J ~ softmax(u)."""
    th = softmax(np.asarray(u, dtype=float))
    w = np.asarray(w, dtype=float)
    a1 = float(th @ w)
    a2 = float(th @ w ** 2)
    a3 = float(th @ w ** 3)
    return a3 - 3.0 * a1 * a2 + 2.0 * a1 ** 3


def histogram_third_bound(u, w, g2: float = 0.0) -> float:
    """||m w||^3 / (theta_min + g2)^{1/2} + 3 ||h w||^3 with h^2 = diag(theta),
    m^2 = h^2 + g2 I."""
    th = softmax(np.asarray(u, dtype=float))
    w = np.asarray(w, dtype=float)
    mw = float(np.sum((th + g2) * w * w)) ** 1.5
    hw = float(np.sum(th * w * w)) ** 1.5
    return mw / np.sqrt(th.min() + g2) + 3.0 * hw


class HistogramModel(SlsModel):
    kind = "histogram"
    v2_convention = "V^2 = 2 n hess phi(u*) (factor 2)"

    def __init__(self, theta_star, n):
        th = np.asarray(theta_star, dtype=float).ravel()
        if np.any(th <= 0) or abs(th.sum() - 1.0) > 1e-10:
            raise ValidationError("theta_star must be a positive probability vector")
        self.theta_star = th / th.sum()
        self.dim = th.size
        self.n = int(n)
        self.n_eff = float(n)
        lt = np.log(self.theta_star)
        self._truth = lt - lt.mean()

    @property
    def truth(self):
        return self._truth

    def null_space(self):
        return np.full((self.dim, 1), 1.0 / np.sqrt(self.dim))

    def pop_loss(self, u):
        return float(-self.n * (self.theta_star @ u) + self.n * logsumexp(u))

    def loss(self, u, data):
        return float(-(np.asarray(data, float) @ u) + self.n * logsumexp(u))

    def pop_grad(self, u):
        return self.n * (softmax(u) - self.theta_star)

    def grad_zeta(self, data):
        return -(np.asarray(data, dtype=float) - self.n * self.theta_star)

    def pop_hess(self, u):
        return self.n * histogram_phi(u)[2]

    def var_grad_zeta(self):
        th = self.theta_star
        return self.n * (np.diag(th) - np.outer(th, th))

    def dir3(self, u, w):
        return self.n * histogram_third_dir(u, w)

    def dir4(self, u, w):
        th = softmax(np.asarray(u, float))
        _, m2, _, m4 = _centered_moments(th, np.asarray(w, float))
        return self.n * (m4 - 3.0 * m2 * m2)

    def third_contract(self, u, w):
        th = softmax(np.asarray(u, float))
        c, m2, _, _ = _centered_moments(th, np.asarray(w, float))
        return self.n * th * (c * c - m2)

    def sample(self, rng):
        return as_rng(rng).multinomial(self.n, self.theta_star).astype(float)

    def default_V2(self, D2=None):
        return 2.0 * self.var_grad_zeta()
