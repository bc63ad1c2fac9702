# Gaussian linear model Y = X u* + sigma eps.  The loss is exactly quadratic,
# so all third and higher derivatives vanish; used as an exact reference.

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .base import ConditionConstants, SlsModel, as_rng


class QuadraticModel(SlsModel):
    kind = "quadratic"
    v2_convention = "V^2 = Var(grad zeta) = F"

    def __init__(self, design, truth, sigma=1.0):
        X = np.atleast_2d(np.asarray(design, dtype=float))
        u = np.asarray(truth, dtype=float).ravel()
        if u.size != X.shape[1]:
            raise ValidationError("truth length must match design columns")
        if sigma <= 0:
            raise ValidationError("sigma must be > 0")
        self.design = X
        self.sigma = float(sigma)
        self.dim = X.shape[1]
        self.n = X.shape[0]
        self.n_eff = float(X.shape[0])
        self._truth = u
        self._F = X.T @ X / self.sigma ** 2
        self._mean = X @ u

    @property
    def truth(self):
        return self._truth

    def pop_loss(self, u):
        r = self.design @ u - self._mean
        return float(0.5 * (r @ r) / self.sigma ** 2 + 0.5 * self.n)

    def loss(self, u, data):
        r = np.asarray(data, float) - self.design @ u
        return float(0.5 * (r @ r) / self.sigma ** 2)

    def pop_grad(self, u):
        return self._F @ (np.asarray(u, float) - self._truth)

    def grad_zeta(self, data):
        return -self.design.T @ (np.asarray(data, float) - self._mean) / self.sigma ** 2

    def pop_hess(self, u):
        return self._F.copy()

    def var_grad_zeta(self):
        return self._F.copy()

    def dir3(self, u, w):
        return 0.0

    def dir4(self, u, w):
        return 0.0

    def third_contract(self, u, w):
        return np.zeros(self.dim)

    def sample(self, rng):
        rng = as_rng(rng)
        return self._mean + self.sigma * rng.standard_normal(self.n)

    def constants(self, r=np.inf):
        return ConditionConstants(tau3=0.0, tau4=0.0, radius=float(r))
