"""Common contract for stochastically linear smooth models.

Parameters are flat vectors of length ``dim``.  The empirical loss is
L(u) = E L(u) + <grad_zeta, u> + const, with grad_zeta depending on data only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import Unsupported


@dataclass
class ConditionConstants:
    """Smoothness constants of a model in a local metric D."""
    tau3: float
    tau4: float
    delta0: float | None = None
    varkappa: float | None = None
    c3: float | None = None
    c4: float | None = None
    C_rho: float | None = None
    C_psi3: float | None = None
    C_psi4: float | None = None
    radius: float | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "tau3", "tau4", "delta0", "varkappa", "c3", "c4", "C_rho",
            "C_psi3", "C_psi4", "radius")}
        d["notes"] = dict(self.notes)
        return d


class SlsModel:
    """Base class; subclasses implement the population loss and data maps."""

    kind = "abstract"
    v2_convention = "V^2 = Var(grad zeta)"

    dim: int
    n_eff: float

    # population loss f(u) = E L(u)
    def pop_loss(self, u):
        raise NotImplementedError

    def pop_grad(self, u):
        raise NotImplementedError

    def pop_hess(self, u):
        raise NotImplementedError

    # empirical loss
    def loss(self, u, data):
        raise NotImplementedError

    def grad(self, u, data):
        return self.pop_grad(u) + self.grad_zeta(data)

    def hess(self, u, data):
        return self.pop_hess(u)

    def grad_zeta(self, data):
        raise NotImplementedError

    def var_grad_zeta(self):
        raise NotImplementedError

    def fisher(self, u):
        return self.pop_hess(u)

    # higher derivatives of the population loss
    def dir3(self, u, w):
        raise Unsupported(f"{self.kind}: no third derivative")

    def dir4(self, u, w):
        raise Unsupported(f"{self.kind}: no fourth derivative")

    def third_contract(self, u, w):
        """Vector <grad^3 f(u), w (x) w>."""
        raise Unsupported(f"{self.kind}: no third-derivative contraction")

    def in_domain(self, u):
        return bool(np.all(np.isfinite(u)))

    def initial_point(self):
        return np.zeros(self.dim)

    def null_space(self):
        """Orthonormal basis of directions the loss ignores, or None."""
        return None

    @property
    def truth(self):
        raise NotImplementedError

    def sample(self, rng):
        raise NotImplementedError

    def default_V2(self, D2=None):
        return self.var_grad_zeta()

    def describe(self):
        return {"kind": self.kind, "dim": int(self.dim), "n": float(self.n_eff)}


def as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
