"""Penalized MLE, population targets, and finite-sample certificates.

All certificate computations run in the coordinates actually fitted: the
identity for smooth penalties, the selected coordinate axes for projection
and cut-off penalties, and the orthogonal complement of the model null space
when the penalty does not fix the gauge (histogram without ridge).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, LinAlgError

from ._optim import newton_minimize
from ._parallel import run_indexed
from ._rng import replicate_rng
from .errors import (CertificateInapplicable, DomainEmpty, DomainExit,
                     NonConverged, PreconditionError,
                     ValidationError)
from .models.base import ConditionConstants, SlsModel
from .tailbounds import SpectralSummary, gaussian_quantile


# ---------------------------------------------------------------- penalties

class QuadPenalty:
    """Quadratic penalty ||G u||^2 / 2.

    kind is one of "dense", "diag", "ridge", "projection", "cutoff".
    Projection and cut-off penalties keep a coordinate subset free and
    remove the rest from the parameter space; they carry no curvature.
    """

    KINDS = ("dense", "diag", "ridge", "projection", "cutoff")

    def __init__(self, kind, value=0.0):
        if kind not in self.KINDS:
            raise ValidationError(f"unknown penalty kind {kind!r}")
        self.kind = kind
        if kind == "dense":
            G2 = np.atleast_2d(np.asarray(value, dtype=float))
            if G2.shape[0] != G2.shape[1] or not np.allclose(G2, G2.T, atol=1e-12):
                raise ValidationError("dense penalty must be a symmetric matrix")
            ev = np.linalg.eigvalsh(G2) if G2.size else np.zeros(1)
            if ev.min() < -1e-12 * max(1.0, abs(ev).max()):
                raise ValidationError("dense penalty must be PSD")
            value = 0.5 * (G2 + G2.T)
        elif kind == "diag":
            value = np.asarray(value, dtype=float).ravel()
            if np.any(value < 0) or not np.all(np.isfinite(value)):
                raise ValidationError("diagonal penalty entries must be finite and >= 0")
        elif kind == "ridge":
            value = float(value)
            if not (value >= 0 and math.isfinite(value)):
                raise ValidationError("ridge g^2 must be finite and >= 0")
        elif kind == "projection":
            idx = np.asarray(value, dtype=int).ravel()
            if idx.size == 0 or np.any(idx < 0) or np.unique(idx).size != idx.size:
                raise ValidationError("projection needs distinct nonnegative indices")
            value = np.sort(idx)
        else:
            value = int(value)
            if value < 1:
                raise ValidationError("cut-off J must be >= 1")
        self.value = value

    @classmethod
    def zero(cls):
        return cls("ridge", 0.0)

    @classmethod
    def ridge(cls, g2):
        return cls("ridge", g2)

    @classmethod
    def diag(cls, g2):
        return cls("diag", g2)

    @classmethod
    def dense(cls, G2):
        return cls("dense", G2)

    @classmethod
    def projection(cls, idx):
        return cls("projection", idx)

    @classmethod
    def cutoff(cls, J):
        return cls("cutoff", J)

    def scaled(self, c):
        if self.kind in ("projection", "cutoff"):
            return self
        return QuadPenalty(self.kind, c * self.value)

    def matrix(self, p):
        """G^2 as a p x p matrix (zero for subspace penalties)."""
        if self.kind == "ridge":
            return self.value * np.eye(p)
        if self.kind == "diag":
            if self.value.size != p:
                raise ValidationError("diagonal penalty has wrong length")
            return np.diag(self.value)
        if self.kind == "dense":
            if self.value.shape != (p, p):
                raise ValidationError("dense penalty has wrong shape")
            return self.value.copy()
        return np.zeros((p, p))

    def free_indices(self, p):
        if self.kind == "projection":
            if self.value.max() >= p:
                raise ValidationError("projection index out of range")
            return self.value
        if self.kind == "cutoff":
            if self.value > p:
                raise ValidationError("cut-off J exceeds dimension")
            return np.arange(self.value)
        return None

    def basis(self, p, null=None):
        """Orthonormal p x k basis of the fitted subspace, or None for all of R^p."""
        idx = self.free_indices(p)
        if idx is not None:
            return np.eye(p)[:, idx]
        if null is None:
            return None
        N = np.asarray(null, dtype=float)
        G2 = self.matrix(p)
        if np.linalg.norm(G2 @ N) > 1e-12 * (1.0 + np.linalg.norm(G2)):
            return None
        # complement of the null space
        U, _, _ = np.linalg.svd(np.hstack([N, np.eye(p)]), full_matrices=True)
        return U[:, N.shape[1]:]

    def value_at(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * float(u @ self.matrix(u.size) @ u)

    def to_dict(self):
        v = self.value
        return {"kind": self.kind,
                "value": v.tolist() if isinstance(v, np.ndarray) else v}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (int, float)):
            return cls.ridge(d)
        try:
            return cls(d["kind"], d.get("value", 0.0))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad penalty spec {d!r}") from exc


# ---------------------------------------------------------------- reports

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class FitResult:
    upsilon_hat: np.ndarray
    iters: int
    grad_norm: float
    hess_g: np.ndarray
    converged: bool
    objective: float = float("nan")
    reason: str = ""

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class ExpansionReport:
    fisher_lhs: float
    fisher_rhs: float
    wilks_lhs: float
    wilks_rhs: float
    bias_lhs: float
    bias_rhs: float
    on_omega: bool
    d_norm: float = 0.0
    r_d: float = 0.0
    b_d: float = 0.0
    tau3: float = 0.0
    kappa_metric: float = 1.0
    preconditions_ok: bool = True
    notes: dict = field(default_factory=dict)

    @property
    def fisher_ok(self):
        return self.fisher_lhs <= self.fisher_rhs

    @property
    def wilks_ok(self):
        return self.wilks_lhs <= self.wilks_rhs

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class RiskReport:
    dim_q: float
    bias_q: float
    R_Q: float
    alpha_Q: float
    sandwich_lo: float
    sandwich_hi: float
    dim_d: float
    b_d: float
    r_d: float
    dim_q_v2: float = float("nan")
    C4: float = float("nan")
    tau3: float = 0.0
    kappa_metric: float = 1.0
    binding: bool = True
    mc_reps: int = 0
    mc_mean: float = float("nan")
    mc_se: float = float("nan")
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable(asdict(self))


# ---------------------------------------------------------------- fitting

def check_data(model: SlsModel, data):
    """Shape and support checks; raises DomainEmpty."""
    kind = model.kind
    a = np.asarray(data)
    if a.size == 0:
        raise DomainEmpty("empty dataset")
    if kind == "logistic":
        if a.shape != (model.n,) or not np.all((a == 0) | (a == 1)):
            raise DomainEmpty(f"logistic labels must be {model.n} values in {{0,1}}")
    elif kind == "histogram":
        if a.shape != (model.dim,) or np.any(a < 0):
            raise DomainEmpty(f"histogram counts must be {model.dim} nonnegative values")
    elif kind == "logdensity":
        if a.ndim != 1 or np.any(a < 0) or np.any(a >= model.nodes.size):
            raise DomainEmpty("log-density data must be node indices")
    elif kind == "precision":
        if a.ndim != 2 or a.shape[1] != model.p:
            raise DomainEmpty(f"precision data must be n x {model.p}")
    elif kind == "quadratic":
        if a.shape != (model.n,):
            raise DomainEmpty(f"responses must have length {model.n}")
    if not np.all(np.isfinite(a.astype(float))):
        raise DomainEmpty("data contain non-finite values")


def _basis(model, pen):
    return pen.basis(model.dim, model.null_space())


def _objective(model, pen, data):
    p = model.dim
    G2 = pen.matrix(p)
    if data is None:
        f, g, h = model.pop_loss, model.pop_grad, model.pop_hess
    else:
        def f(u):
            return model.loss(u, data)

        def g(u):
            return model.grad(u, data)

        def h(u):
            return model.hess(u, data)

    def fG(u):
        return f(u) + 0.5 * float(u @ G2 @ u)

    def gG(u):
        return g(u) + G2 @ u

    def hG(u):
        return h(u) + G2
    return fG, gG, hG


def _solve(model, pen, data, tol, maxiter, x0):
    p = model.dim
    fG, gG, hG = _objective(model, pen, data)
    E = _basis(model, pen)
    if E is None:
        def lift(c):
            return c
        fr, gr, hr = fG, gG, hG
    else:
        def lift(c):
            return E @ c

        def fr(c):
            return fG(E @ c)

        def gr(c):
            return E.T @ gG(E @ c)

        def hr(c):
            return E.T @ hG(E @ c) @ E

    def safe_f(c):
        try:
            return fr(c)
        except DomainExit:
            return math.inf

    u0 = model.initial_point() if x0 is None else np.asarray(x0, dtype=float)
    c0 = u0 if E is None else E.T @ u0
    if not model.in_domain(lift(c0)):
        raise DomainExit("initial point outside the model domain")
    res = newton_minimize(safe_f, gr, hr, c0,
                          domain=lambda c: model.in_domain(lift(c)),
                          tol=tol, maxiter=maxiter)
    u = lift(res["x"])
    out = FitResult(upsilon_hat=u, iters=res["iters"], grad_norm=res["grad_norm"],
                    hess_g=hG(u), converged=res["converged"],
                    objective=res["f"], reason=res["reason"])
    if not out.converged:
        raise NonConverged(f"Newton stopped ({res['reason']}) with gradient norm "
                           f"{res['grad_norm']:.3e} after {res['iters']} iterations",
                           out)
    return out


def fit_pmle(model: SlsModel, pen: QuadPenalty, data, tol=1e-9, maxiter=200,
             x0=None) -> FitResult:
    """Minimize L(u) + ||G u||^2/2 by damped Newton."""
    check_data(model, data)
    return _solve(model, pen, data, tol, maxiter, x0)


def fit_population(model: SlsModel, pen: QuadPenalty, tol=1e-9, maxiter=200,
                   x0=None) -> FitResult:
    """Minimize E L(u) + ||G u||^2/2."""
    return _solve(model, pen, None, tol, maxiter, x0)


def penalized_loss(model, pen, u, data=None):
    f = model.pop_loss(u) if data is None else model.loss(u, data)
    return f + pen.value_at(u)


def _pinv_on(E, FGr):
    c = cho_factor(FGr, lower=True)
    if E is None:
        return cho_solve(c, np.eye(FGr.shape[0]))
    return E @ cho_solve(c, E.T)


def effective_dimension(F, pen: QuadPenalty, V2=None, basis=None):
    """dim_G = tr(F_G^{-1} F), or tr(F_G^{-1} V2) when V2 is given.

    Returns (dim_g, x -> sqrt(dim_g) + sqrt(2x)).
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    p = F.shape[0]
    E = pen.basis(p) if basis is None else basis
    FG = F + pen.matrix(p)
    FGr = FG if E is None else E.T @ FG @ E
    try:
        Finv = _pinv_on(E, FGr)
    except (LinAlgError, ValueError) as exc:
        raise PreconditionError("F_G is singular") from exc
    A = F if V2 is None else np.asarray(V2, dtype=float)
    dim_g = float(np.sum(Finv * A.T))

    def r_g(x):
        return math.sqrt(dim_g) + math.sqrt(2.0 * x)
    return dim_g, r_g


# ---------------------------------------------------------------- certificates

def _sym(A):
    return 0.5 * (A + A.T)


def _sqrtm_psd(A):
    w, U = np.linalg.eigh(_sym(A))
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.T


class PenalizedSetup:
    """Population quantities shared by all certificates of one (model, penalty).

    ``base`` selects where F_G is evaluated: "target" (u*_G, default) or
    "truth" (u*).  Both are computed; their log-spectral distance is kept.
    """

    def __init__(self, model: SlsModel, pen: QuadPenalty, D2=None, V2=None,
                 base="target", pop: FitResult | None = None):
        if base not in ("target", "truth"):
            raise ValidationError("base must be 'target' or 'truth'")
        self.model, self.pen, self.base = model, pen, base
        p = model.dim
        self.p = p
        self.G2 = pen.matrix(p)
        E = _basis(model, pen)
        self.E = np.eye(p) if E is None else E
        self.pop = fit_population(model, pen) if pop is None else pop
        self.target = self.pop.upsilon_hat
        self.truth = np.asarray(model.truth, dtype=float)
        self.F_target = model.fisher(self.target)
        self.F_truth = model.fisher(self.truth)
        Er = self.E
        self.FGr_target = _sym(Er.T @ (self.F_target + self.G2) @ Er)
        self.FGr_truth = _sym(Er.T @ (self.F_truth + self.G2) @ Er)
        try:
            ev = eigh(self.FGr_truth, self.FGr_target, eigvals_only=True)
            self.fg_distance = float(np.sqrt(np.sum(np.log(ev) ** 2)))
        except (LinAlgError, ValueError):
            self.fg_distance = float("nan")
        self.F_base = self.F_target if base == "target" else self.F_truth
        self.FGr = self.FGr_target if base == "target" else self.FGr_truth
        self.FG = self.F_base + self.G2
        try:
            self._c = cho_factor(self.FGr, lower=True)
        except (LinAlgError, ValueError) as exc:
            raise PreconditionError("F_G is singular on the fitted subspace") from exc
        self.Finv = Er @ cho_solve(self._c, Er.T)
        self.D2 = _sym(np.asarray(self.FG if D2 is None else D2, dtype=float))
        self.D2r = _sym(Er.T @ self.D2 @ Er)
        try:
            self._cD = cho_factor(self.D2r, lower=True)
        except (LinAlgError, ValueError) as exc:
            raise PreconditionError("D^2 is singular on the fitted subspace") from exc
        self.V2 = np.asarray(model.default_V2(self.D2) if V2 is None else V2, float)
        self.kappa_metric = float(math.sqrt(max(
            eigh(self.D2r, self.FGr, eigvals_only=True).max(), 0.0)))
        # B_D = D F_G^{-1} V^2 F_G^{-1} D, same spectrum as L' F^-1 V F^-1 L
        L = np.tril(self._cD[0])
        W = cho_solve(self._c, L)
        self.B_D = _sym(W.T @ (Er.T @ self.V2 @ Er) @ W)
        self.B_summary = SpectralSummary.from_matrix(self.B_D)
        self.bias_vec = self.bias_drive(self.F_base, self.Finv)
        self.b_D = self.d_norm_full(self.bias_vec)

    def bias_drive(self, F, Finv):
        """Generalized F_G^{-1} M_G = u* - F_G^{-1} F u* (= F_G^{-1} G^2 u* without
        subspace restriction)."""
        return self.truth - Finv @ (F @ self.truth)

    def solve_full(self, v):
        """E F_G^{-1} E' v."""
        return self.E @ cho_solve(self._c, self.E.T @ v)

    def d_norm_full(self, v):
        v = np.asarray(v, dtype=float)
        return float(math.sqrt(max(v @ self.D2 @ v, 0.0)))

    def dinv_fg_norm(self, w):
        """||D^{-1} F_G w|| for w in the fitted subspace."""
        y = self.FGr @ (self.E.T @ w)
        return float(math.sqrt(max(y @ cho_solve(self._cD, y), 0.0)))

    def r_d(self, x):
        return gaussian_quantile(self.B_summary, x)

    def dim_d(self):
        return self.B_summary.dim_a

    def notes(self):
        return {"v2_convention": self.model.v2_convention,
                "fg_base": self.base,
                "fg_log_spectral_distance": self.fg_distance}


def _setup(model, pen, D2, V2, setup):
    if setup is not None:
        return setup
    return PenalizedSetup(model, pen, D2=D2, V2=V2)


def expansion_certificate(model: SlsModel, pen: QuadPenalty, data,
                          constants: ConditionConstants, D2=None, x: float = 2.0,
                          V2=None, strict=False, setup: PenalizedSetup | None = None,
                          fit: FitResult | None = None) -> ExpansionReport:
    """Fisher, Wilks and bias expansions for one dataset.

    The report is always filled; with ``strict`` a failed precondition
    (tau3 kappa^2 r_D < 4/9, r >= 3/2 r_D) raises CertificateInapplicable.
    """
    st = _setup(model, pen, D2, V2, setup)
    if fit is None:
        fit = fit_pmle(model, pen, data)
    tau3 = float(constants.tau3)
    gz = model.grad_zeta(data)
    xi = st.solve_full(gz)
    d_norm = st.d_norm_full(xi)
    r_d = st.r_d(x)
    u_hat, u_g = fit.upsilon_hat, st.target

    fisher_lhs = st.dinv_fg_norm(u_hat - u_g + xi)
    fisher_rhs = 0.75 * tau3 * d_norm ** 2
    LG_hat = penalized_loss(model, pen, u_hat, data)
    LG_tgt = penalized_loss(model, pen, u_g, data)
    wilks_lhs = abs(2.0 * LG_hat - 2.0 * LG_tgt + float(gz @ xi))
    wilks_rhs = 0.5 * tau3 * d_norm ** 3
    bias_lhs = st.dinv_fg_norm(u_g - st.truth + st.bias_vec)
    bias_rhs = 0.75 * tau3 * st.b_D ** 2

    k2 = st.kappa_metric ** 2
    radius = constants.radius
    pre = tau3 * k2 * r_d < 4.0 / 9.0
    notes = st.notes()
    if radius is not None and math.isfinite(radius):
        notes["radius_ok"] = bool(radius >= 1.5 * r_d)
        pre = pre and notes["radius_ok"]
    notes["precondition_value"] = tau3 * k2 * r_d
    rep = ExpansionReport(fisher_lhs=fisher_lhs, fisher_rhs=fisher_rhs,
                          wilks_lhs=wilks_lhs, wilks_rhs=wilks_rhs,
                          bias_lhs=bias_lhs, bias_rhs=bias_rhs,
                          on_omega=bool(d_norm <= r_d), d_norm=d_norm, r_d=r_d,
                          b_d=st.b_D, tau3=tau3, kappa_metric=st.kappa_metric,
                          preconditions_ok=bool(pre), notes=notes)
    if strict and not pre:
        raise CertificateInapplicable(
            f"tau3 kappa^2 r_D = {notes['precondition_value']:.4g} (need < 4/9)", rep)
    return rep


def bias_expansion(model: SlsModel, pen: QuadPenalty, D2=None,
                   constants: ConditionConstants | None = None, V2=None,
                   strict=False, setup: PenalizedSetup | None = None):
    """(u*_G - u*, ||D^{-1} F_G (u*_G - u* + F_G^{-1} M_G)||, (3 tau3/4) b_D^2).

    With ``strict`` the condition tau3 kappa^2 b_D < 4/9 is enforced.
    """
    st = _setup(model, pen, D2, V2, setup)
    bias = st.target - st.truth
    lhs = st.dinv_fg_norm(bias + st.bias_vec)
    tau3 = 0.0 if constants is None else float(constants.tau3)
    rhs = 0.75 * tau3 * st.b_D ** 2
    if strict and not tau3 * st.kappa_metric ** 2 * st.b_D < 4.0 / 9.0:
        raise CertificateInapplicable("tau3 kappa^2 b_D >= 4/9",
                                      (bias, lhs, rhs))
    return bias, lhs, rhs


def bias_precondition(setup: PenalizedSetup, tau3: float) -> bool:
    return tau3 * setup.kappa_metric ** 2 * setup.b_D < 4.0 / 9.0


def fourth_order_correction(model: SlsModel, pen: QuadPenalty, grad_zeta,
                            setup: PenalizedSetup | None = None):
    """(phi_g, mu_g): second-order corrected stochastic and bias terms.

    phi_g = F_G^{-1} gz + F_G^{-1} T'(F_G^{-1} gz) with T' taken at u*_G and
    F_G = F_G(u*_G); mu_g = b + F_G^{-1} T'(b) with b the bias drive, T' at u*
    and F_G = F_G(u*).  T'(w) = <grad^3 f, w (x) w> / 2.
    """
    st = _setup(model, pen, None, None, setup)
    E = st.E
    c_t = cho_factor(st.FGr_target, lower=True)
    c_s = cho_factor(st.FGr_truth, lower=True)

    def solve(c, v):
        return E @ cho_solve(c, E.T @ v)

    xi = solve(c_t, np.asarray(grad_zeta, dtype=float))
    phi_g = xi + solve(c_t, 0.5 * model.third_contract(st.target, xi))
    b = st.bias_drive(st.F_truth, E @ cho_solve(c_s, E.T))
    mu_g = b + solve(c_s, 0.5 * model.third_contract(st.truth, b))
    return phi_g, mu_g


def fourth_order_residuals(model, pen, data, constants: ConditionConstants,
                           setup: PenalizedSetup | None = None, fit=None):
    """(res3, res4, bound4) for one dataset.

    res3 = ||D^{-1} F_G (u~ - u* + F_G^{-1} gz + b)||, res4 uses phi_g + mu_g,
    bound4 = (tau4/2 + kappa^2 tau3^2)(||D F_G^{-1} gz||^3 + b_D^3).
    """
    st = _setup(model, pen, None, None, setup)
    if fit is None:
        fit = fit_pmle(model, pen, data)
    gz = model.grad_zeta(data)
    phi_g, mu_g = fourth_order_correction(model, pen, gz, setup=st)
    xi = st.solve_full(gz)
    b = st.bias_drive(st.F_truth, st.E @ cho_solve(cho_factor(st.FGr_truth, lower=True), st.E.T))
    dev = fit.upsilon_hat - st.truth
    res3 = st.dinv_fg_norm(dev + xi + b)
    res4 = st.dinv_fg_norm(dev + phi_g + mu_g)
    k2 = st.kappa_metric ** 2
    bound4 = (0.5 * constants.tau4 + k2 * constants.tau3 ** 2) * (
        st.d_norm_full(xi) ** 3 + st.b_D ** 3)
    return res3, res4, bound4


# ---------------------------------------------------------------- risk

def default_constants(model: SlsModel, D2, r: float) -> ConditionConstants:
    """Smoothness constants for models with a closed-form recipe."""
    from .models import logistic_conditions, precision_constants
    if model.kind == "quadratic":
        return ConditionConstants(tau3=0.0, tau4=0.0, radius=float(r))
    if model.kind == "logistic":
        return logistic_conditions(model, D2, r)
    if model.kind == "precision":
        return precision_constants(model, min(r, 0.999 * math.sqrt(model.n / 2)))
    raise PreconditionError(f"no default constants for {model.kind}; pass them explicitly")


def risk_certificate(model: SlsModel, pen: QuadPenalty, Q=None, x: float = 1.0,
                     mc_reps: int = 0, seed: int = 0,
                     constants: ConditionConstants | None = None, D2=None,
                     V2=None, C4=None, threads: int = 1,
                     setup: PenalizedSetup | None = None) -> RiskReport:
    """Bias-variance sandwich (1 -+ alpha_Q)^2 R_Q for E||Q(u~_G - u*)||^2.

    Q defaults to F_G^{1/2}.  dim_q uses Var(grad zeta); the V^2 version is
    reported as dim_q_v2.  With mc_reps > 0 the empirical risk is estimated
    from independent replicates (seeded per replicate).
    """
    st = _setup(model, pen, D2, V2, setup)
    Q = _sqrtm_psd(st.FG) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.dim:
        raise ValidationError("Q must have dim columns")
    QF = Q @ st.Finv
    var = model.var_grad_zeta()
    dim_q = float(np.trace(QF @ var @ QF.T))
    dim_q_v2 = float(np.trace(QF @ st.V2 @ QF.T))
    bias_q = float(np.sum((Q @ st.bias_vec) ** 2))
    R_Q = dim_q + bias_q
    r_d = st.r_d(x)
    dim_d = st.dim_d()
    b_d = st.b_D
    C4 = r_d / math.sqrt(dim_d) if C4 is None else float(C4)
    if constants is None:
        constants = default_constants(model, st.D2, 1.5 * max(r_d, b_d))
    tau3 = float(constants.tau3)
    M = Q @ st.E @ cho_solve(st._c, np.eye(st.E.shape[1]))
    op = float(math.sqrt(max(np.linalg.eigvalsh(_sym(M @ st.D2r @ M.T)).max(), 0.0)))
    alpha = op * 0.75 * tau3 * (C4 * dim_d + b_d ** 2) / math.sqrt(R_Q) if R_Q > 0 else math.inf
    k2 = st.kappa_metric ** 2
    worst = max(r_d, b_d)
    binding = tau3 * k2 * worst < 4.0 / 9.0
    notes = st.notes()
    notes["precondition_value"] = tau3 * k2 * worst
    if constants.radius is not None:
        notes["radius"] = constants.radius
        binding = binding and constants.radius >= 1.5 * worst
    rep = RiskReport(dim_q=dim_q, bias_q=bias_q, R_Q=R_Q, alpha_Q=alpha,
                     sandwich_lo=(1 - alpha) ** 2 * R_Q if alpha < 1 else 0.0,
                     sandwich_hi=(1 + alpha) ** 2 * R_Q, dim_d=dim_d, b_d=b_d,
                     r_d=r_d, dim_q_v2=dim_q_v2, C4=C4, tau3=tau3,
                     kappa_metric=st.kappa_metric, binding=bool(binding),
                     notes=notes)
    if mc_reps > 0:
        losses = risk_replicates(model, pen, Q, mc_reps, seed, threads)
        mean = math.fsum(losses) / mc_reps
        sd = math.sqrt(math.fsum((v - mean) ** 2 for v in losses) / max(mc_reps - 1, 1))
        rep.mc_reps, rep.mc_mean, rep.mc_se = int(mc_reps), mean, sd / math.sqrt(mc_reps)
    return rep


def risk_replicates(model, pen, Q, reps, seed, threads=1, tag="risk"):
    truth = np.asarray(model.truth, dtype=float)

    def one(i):
        data = model.sample(replicate_rng(seed, i, tag))
        try:
            fit = fit_pmle(model, pen, data)
        except (NonConverged, DomainExit) as exc:
            raise type(exc)(f"replicate {i}: {exc}") from exc
        e = Q @ (fit.upsilon_hat - truth)
        return float(e @ e)
    return run_indexed(one, int(reps), threads)
