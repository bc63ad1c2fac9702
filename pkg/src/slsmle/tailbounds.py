# tailbounds.py
# Deviation quantiles for quadratic forms ||Q xi|| under a light exponential
# tail condition: Gaussian-regime quantile, the phase-transition root, the
# fused Gaussian/sub-exponential quantile and its linear majorant, exponential
# moment bounds, the rough sub-gaussian mgf bound, and bounds for a family of
# Gaussian quadratic forms (second order tensors).
#
# Every formula works on a SpectralSummary (trace, trace of square, norm), so
# callers with structured operators never need to materialize B.

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (AlphaTooSmall, DomainError, NoPhaseTransition,
                     PreconditionError, ValidationError)

__all__ = [
    "SpectralSummary", "TailConfig", "PhaseTransition", "TensorFamily",
    "gaussian_quantile", "mu_of_x", "solve_xc", "fused_quantile",
    "linear_majorant", "fused_kappa", "exp_moment_bound", "hkz_mgf_bound",
    "tensor_family_covariance", "tensor_delta", "tensor_upper_tail",
    "tensor_lower_tail", "tensor_lower_alpha_min", "quantile_curve",
]

_SQ8P1 = math.sqrt(8.0) + 1.0


@dataclass(frozen=True)
class SpectralSummary:
    """Trace, trace of the square and operator norm of a PSD operator B.

    ``lambda_`` may be zero only for the zero operator.
    """
    dim_a: float
    v2: float
    lambda_: float

    def __post_init__(self):
        a, v2, lam = float(self.dim_a), float(self.v2), float(self.lambda_)
        if not (np.isfinite(a) and np.isfinite(v2) and np.isfinite(lam)):
            raise ValidationError("spectral summary must be finite")
        if a < 0 or v2 < 0 or lam < 0:
            raise ValidationError("spectral summary entries must be >= 0")
        if lam == 0 and (a > 0 or v2 > 0):
            raise ValidationError("lambda = 0 requires the zero operator")
        # eigenvalues in [0, lam]: sum(e^2) <= lam * sum(e)
        if v2 > a * lam * (1 + 1e-9) + 1e-300:
            raise ValidationError(
                f"inconsistent summary: v2={v2} > dim_a*lambda={a * lam}")
        object.__setattr__(self, "dim_a", a)
        object.__setattr__(self, "v2", v2)
        object.__setattr__(self, "lambda_", lam)

    @property
    def v(self):
        return math.sqrt(self.v2)

    @classmethod
    def from_eigenvalues(cls, ev):
        ev = np.clip(np.asarray(ev, dtype=float).ravel(), 0.0, None)
        if ev.size == 0:
            return cls(0.0, 0.0, 0.0)
        return cls(math.fsum(ev), math.fsum(ev * ev), float(ev.max()))

    @classmethod
    def from_matrix(cls, B):
        B = np.asarray(B, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ValidationError("B must be a square matrix")
        return cls.from_eigenvalues(np.linalg.eigvalsh(0.5 * (B + B.T)))

    def scaled(self, c):
        """Summary of c*B."""
        return SpectralSummary(c * self.dim_a, c * c * self.v2, c * self.lambda_)


@dataclass(frozen=True)
class TailConfig:
    gamma: float
    rho: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValidationError("gamma must be finite and > 0")
        if not (0 < self.rho < 1):
            raise ValidationError("rho must lie in (0, 1)")


@dataclass(frozen=True)
class PhaseTransition:
    x_c: float
    z_c: float
    kappa: float
    mu_c: float
    gamma: float
    rho: float
    residual: float


def gaussian_quantile(s: SpectralSummary, x: float) -> float:
    """z(B, x) = sqrt(tr B + 2 sqrt(x tr B^2) + 2 x ||B||)."""
    x = float(x)
    if not x >= 0:
        raise DomainError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return math.sqrt(s.dim_a)
    return math.sqrt(s.dim_a + 2.0 * math.sqrt(x * s.v2) + 2.0 * x * s.lambda_)


def mu_of_x(s: SpectralSummary, x: float) -> float:
    """mu(x) = 1 / (1 + v / (2 lambda sqrt(x))); the x -> 0 limit at x = 0."""
    x = float(x)
    if not x >= 0:
        raise DomainError(f"x must be > 0, got {x}")
    if s.v2 == 0.0:
        return 1.0
    if x == 0.0:
        return 0.0
    return 1.0 / (1.0 + s.v / (2.0 * s.lambda_ * math.sqrt(x)))


def _rhs_root(s, gamma, rho, x):
    # sqrt(rho) * (gamma sqrt(lam) / mu - sqrt(dim_a / mu)), signed
    mu = mu_of_x(s, x)
    return math.sqrt(rho) * (gamma * math.sqrt(s.lambda_) / mu
                             - math.sqrt(s.dim_a / mu))


def _gap(s, gamma, rho, x):
    return gaussian_quantile(s, x) - _rhs_root(s, gamma, rho, x)


def phase_residual(s: SpectralSummary, cfg: TailConfig, x: float) -> float:
    """Relative residual |z^2 - rho (gamma sqrt(lam)/mu - sqrt(a/mu))^2| / z^2."""
    z2 = gaussian_quantile(s, x) ** 2
    r = _rhs_root(s, cfg.gamma, cfg.rho, x)
    return abs(z2 - r * r) / z2


def solve_xc(s: SpectralSummary, cfg: TailConfig, tol_rel: float = 1e-10
             ) -> PhaseTransition:
    """Root x_c of z^2(B,x) = rho (gamma sqrt(lam)/mu(x) - sqrt(dim_a/mu(x)))^2.

    The left side increases and the right side decreases in x, so plain
    bisection on the signed square-root form is exact.  Works in the
    lambda-normalized scale; x_c is invariant under B -> cB.
    """
    if s.lambda_ == 0.0:
        raise NoPhaseTransition("zero operator: no phase transition")
    g, rho = cfg.gamma, cfg.rho
    sn = s.scaled(1.0 / s.lambda_)
    lo = 1e-12
    if _gap(sn, g, rho, lo) >= 0:
        raise NoPhaseTransition(
            f"gamma={g} too small relative to dim_a/lambda={sn.dim_a}: "
            "curves do not cross")
    hi = max(g * g / 2.0, 1.0)
    while _gap(sn, g, rho, hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            raise NoPhaseTransition("no sign change before overflow")
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _gap(sn, g, rho, mid) < 0:
            lo = mid
        else:
            hi = mid
    cands = [(phase_residual(sn, cfg, t), t) for t in (lo, hi)]
    res, xc = min(cands)
    if res > tol_rel:
        raise NoPhaseTransition(f"bisection stalled, residual {res:.3e}")
    z_c = gaussian_quantile(s, xc)
    kappa = math.sqrt(rho) * g / ((2.0 + math.sqrt(rho)) * math.sqrt(s.lambda_))
    return PhaseTransition(x_c=xc, z_c=z_c, kappa=kappa, mu_c=mu_of_x(s, xc),
                           gamma=g, rho=rho, residual=phase_residual(s, cfg, xc))


def fused_kappa(s: SpectralSummary, gamma: float) -> float:
    """Slope parameter gamma / ((sqrt 8 + 1) sqrt(lambda)) of the fused quantile."""
    return gamma / (_SQ8P1 * math.sqrt(s.lambda_))


def fused_quantile(pt: PhaseTransition, s: SpectralSummary, x: float) -> float:
    """z(B, x) below x_c, then linear growth z_c + (x - x_c)/kappa."""
    if pt.rho != 0.5:
        raise PreconditionError("fused quantile is defined for rho = 1/2")
    x = float(x)
    if x <= pt.x_c:
        return gaussian_quantile(s, x)
    return pt.z_c + (x - pt.x_c) / fused_kappa(s, pt.gamma)


def linear_majorant(s: SpectralSummary, cfg: TailConfig, x: float) -> float:
    """sqrt(dim_a) + lambda*kappa/sqrt(2) + x/kappa, kappa = gamma/((sqrt8+1) sqrt(lambda)).

    The middle term carries lambda so the bound is covariant under B -> cB;
    for lambda = 1 it is the familiar sqrt(dim_a) + kappa/sqrt(2) + x/kappa.
    """
    x = float(x)
    if not x >= 0:
        raise DomainError(f"x must be >= 0, got {x}")
    k = fused_kappa(s, cfg.gamma)
    return math.sqrt(s.dim_a) + s.lambda_ * k / math.sqrt(2.0) + x / k


def exp_moment_bound(s: SpectralSummary, cfg: TailConfig, pt: PhaseTransition,
                     nu: float, z: float) -> float:
    """Upper bound on E exp(nu ||Q xi||) 1{||Q xi|| >= z}."""
    nu, z = float(nu), float(z)
    sa = math.sqrt(s.dim_a)
    lam = s.lambda_
    if nu < 0:
        raise DomainError("nu must be >= 0")
    if z < sa:
        raise DomainError(f"z={z} below sqrt(dim_a)={sa}")
    gauss_ok = z <= pt.z_c and nu <= (z - sa) / (2.0 * math.sqrt(lam))
    if gauss_ok:
        return 6.0 * math.exp(nu * z - (z - sa) ** 2 / (2.0 * lam))
    if z >= pt.z_c:
        k = pt.kappa
        if not nu < k:
            raise DomainError(f"need nu < kappa={k:.6g} beyond z_c, got nu={nu}")
        return (3.0 * k / (k - nu)) * math.exp(
            nu * pt.z_c - (pt.z_c - sa) ** 2 / (2.0 * lam) - (k - nu) * (z - pt.z_c))
    raise DomainError(
        f"need nu <= (z - sqrt(dim_a))/(2 sqrt(lambda)) = "
        f"{(z - sa) / (2 * math.sqrt(lam)):.6g} for z <= z_c, got nu={nu}")


def hkz_mgf_bound(s: SpectralSummary, mu: float) -> float:
    """exp(mu^2 v2 / (4 (1 - lambda mu)) + mu dim_a / 2), valid for mu < 1/lambda."""
    mu = float(mu)
    if mu < 0 or mu * s.lambda_ >= 1.0:
        raise DomainError(f"need 0 <= mu < 1/lambda, got mu={mu}")
    return math.exp(mu * mu * s.v2 / (4.0 * (1.0 - s.lambda_ * mu))
                    + mu * s.dim_a / 2.0)


def quantile_curve(s: SpectralSummary, cfg: TailConfig, xs):
    """Rows (x, z_gauss, z_fused, z_majorant, regime) over an x-grid."""
    pt = solve_xc(s, replace(cfg, rho=0.5))
    rows = []
    for x in xs:
        x = float(x)
        rows.append((x, gaussian_quantile(s, x), fused_quantile(pt, s, x),
                     linear_majorant(s, cfg, x),
                     "gauss" if x <= pt.x_c else "subexp"))
    return pt, rows


# ---------------------------------------------------------------------------
# family of Gaussian quadratic forms T_i = g' T_i g, g ~ N(0, I)

@dataclass(frozen=True)
class TensorFamily:
    tensors: np.ndarray          # (q, d, d), each slice symmetric
    v_sq: np.ndarray | None = None
    delta: float | None = None

    def __post_init__(self):
        T = np.asarray(self.tensors, dtype=float)
        if T.ndim != 3 or T.shape[1] != T.shape[2]:
            raise ValidationError("tensors must have shape (q, d, d)")
        scale = max(float(np.max(np.abs(T))), 1e-300) if T.size else 1.0
        if T.size and np.max(np.abs(T - T.transpose(0, 2, 1))) > 1e-12 * scale:
            raise ValidationError("every tensor must be symmetric")
        object.__setattr__(self, "tensors", T)
        if self.v_sq is None:
            object.__setattr__(self, "v_sq", _covariance(T))
        else:
            V = np.asarray(self.v_sq, dtype=float)
            if V.shape != (T.shape[0], T.shape[0]):
                raise ValidationError("v_sq must be q x q")
            object.__setattr__(self, "v_sq", V)

    @property
    def q(self):
        return self.tensors.shape[0]

    @property
    def d(self):
        return self.tensors.shape[1]

    def mean(self):
        return np.trace(self.tensors, axis1=1, axis2=2)

    def evaluate(self, g):
        """T_i(g) = g' T_i g for rows of g, shape (n, d) -> (n, q)."""
        g = np.atleast_2d(np.asarray(g, dtype=float))
        q, d = self.q, self.d
        # (n, d) @ (d, q d) -> (n, q, d), then contract the last axis with g
        A = (g @ self.tensors.transpose(1, 0, 2).reshape(d, q * d)).reshape(-1, q, d)
        return np.einsum("nik,nk->ni", A, g)


def _covariance(T):
    flat = T.reshape(T.shape[0], -1)
    S2 = 2.0 * (flat @ flat.T)
    S2 = 0.5 * (S2 + S2.T)
    # exact diagonal: 2 * sum of squared entries
    for i in range(T.shape[0]):
        S2[i, i] = 2.0 * float(np.sum(T[i] * T[i]))
    return S2


def tensor_family_covariance(tf: TensorFamily) -> np.ndarray:
    """S^2 with entries 2 <T_i, T_i'>_Fr, the covariance of (g' T_i g)_i."""
    return _covariance(tf.tensors)


def _inv_sqrt_psd(M, name="matrix"):
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    if w.min() <= 1e-14 * max(w.max(), 1e-300):
        raise PreconditionError(f"{name} is singular")
    return (U / np.sqrt(w)) @ U.T


def tensor_delta(tf: TensorFamily, n_dirs: int, seed: int = 0,
                 refine_steps: int = 20, chunk: int = 512) -> float:
    """Randomized lower estimate of sup_{||V u|| <= 1} 2 ||sum_i u_i T_i||.

    Each of the n_dirs random unit directions is refined by alternating
    maximization (top eigenvector, then best direction for it); the result is
    the max over all refined directions.  Directions are drawn as a prefix of
    one stream, so the estimate never decreases with n_dirs.
    """
    T = tf.tensors
    if T.size == 0 or not np.any(T):
        return 0.0
    Vinv = _inv_sqrt_psd(tf.v_sq, "V^2")
    q = tf.q
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((int(n_dirs), q))
    best = 0.0
    for start in range(0, dirs.shape[0], chunk):
        v = dirs[start:start + chunk]
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
        for _ in range(refine_steps + 1):
            u = v @ Vinv
            M = np.einsum("ci,ijk->cjk", u, T)
            w, E = np.linalg.eigh(M)
            idx = np.argmax(np.abs(w), axis=1)
            top = np.take_along_axis(w, idx[:, None], axis=1)[:, 0]
            best = max(best, float(np.max(np.abs(top))))
            e = E[np.arange(E.shape[0]), :, idx]
            g = np.einsum("cj,ijk,ck->ci", e, T, e)
            nv = (np.sign(top)[:, None] * g) @ Vinv
            nrm = np.linalg.norm(nv, axis=1, keepdims=True)
            nrm[nrm == 0] = 1.0
            v = nv / nrm
    return 2.0 * best


def _q_summary(tf, Q, V2):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != tf.q:
        raise ValidationError(f"Q must have {tf.q} columns")
    return SpectralSummary.from_matrix(Q @ V2 @ Q.T)


def tensor_upper_tail(tf: TensorFamily, q, cfg: TailConfig, x: float) -> float:
    """Quantile of sqrt(1 - delta gamma) ||Q(T - ET)||: the fused quantile of Q V^2 Q'."""
    if tf.delta is None:
        raise PreconditionError("tensor family has no delta; run tensor_delta")
    if not tf.delta * cfg.gamma < 1:
        raise PreconditionError(
            f"need delta*gamma < 1, got {tf.delta * cfg.gamma:.6g}")
    s = _q_summary(tf, q, tf.v_sq)
    if s.lambda_ == 0.0:
        return 0.0
    pt = solve_xc(s, replace(cfg, rho=0.5))
    return fused_quantile(pt, s, x)


def _alpha_lhs(a):
    return a * math.sqrt((1 - a) / (1 - 2 * a))


def tensor_lower_alpha_min(tf: TensorFamily, q) -> float:
    """Smallest alpha in (0, 1/2) meeting the lower-tail slack condition."""
    S2 = tensor_family_covariance(tf)
    s = _q_summary(tf, q, S2)
    if tf.delta is None:
        raise PreconditionError("tensor family has no delta; run tensor_delta")
    if s.v2 == 0:
        raise PreconditionError("degenerate operator Q S^2 Q'")
    need = tf.delta * math.sqrt(s.dim_a) * (
        1 + math.sqrt(s.dim_a * s.lambda_ / (2 * s.v2)))
    if need == 0:
        return 0.0
    lo, hi = 0.0, 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _alpha_lhs(mid) < need:
            lo = mid
        else:
            hi = mid
    return hi


def tensor_lower_tail(tf: TensorFamily, q, x: float, alpha: float) -> float:
    """Threshold t with P(||Q(T - ET)||^2 < t) <= 2 e^{-x}.

    t = dim_a - alpha dim_a/(1 - alpha) - 2 sqrt(x v2) for B = Q S^2 Q'.
    Requires the family's delta to be measured in the S^2 metric.
    """
    S2 = tensor_family_covariance(tf)
    if not np.allclose(tf.v_sq, S2, rtol=1e-10, atol=1e-14 * np.abs(S2).max()):
        raise PreconditionError("lower tail needs V^2 = S^2")
    s = _q_summary(tf, q, S2)
    x = float(x)
    if x < 0 or (s.v2 > 0 and x > s.dim_a ** 2 / (4 * s.v2) * (1 + 1e-12)):
        raise PreconditionError(
            f"need 0 <= x <= dim_a^2/(4 v2) = {s.dim_a ** 2 / (4 * s.v2):.6g}")
    alpha = float(alpha)
    amin = tensor_lower_alpha_min(tf, q)
    if not (0 <= alpha < 0.5) or alpha < amin:
        raise AlphaTooSmall(alpha, amin)
    return s.dim_a - alpha * s.dim_a / (1 - alpha) - 2 * math.sqrt(x * s.v2)
