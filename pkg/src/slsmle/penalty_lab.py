"""Penalty design in the diagonal sequence-space model.

The Fisher operator is diag(N_j) with N nonincreasing, smoothness weights
w_j are nondecreasing, and the truth is a coefficient sequence.  Risk terms
use compensated (Neumaier) summation because polynomial tails drive the
comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import minimize_scalar

from .errors import PreconditionError, ValidationError


def neumaier_cumsum(x):
    """Compensated running sums of a 1-D array."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    s = 0.0
    c = 0.0
    for i, v in enumerate(x.tolist()):
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[i] = s + c
    return out


def _csum0(x):
    # prefix sums with a leading zero: S[k] = sum of the first k entries
    return np.concatenate([[0.0], neumaier_cumsum(x)])


def _fsum(x):
    return math.fsum(np.asarray(x, dtype=float).tolist())


@dataclass
class SequenceModel:
    N: np.ndarray
    w: np.ndarray
    upsilon_star: np.ndarray
    sobolev: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=float).ravel()
        self.w = np.asarray(self.w, dtype=float).ravel()
        self.upsilon_star = np.asarray(self.upsilon_star, dtype=float).ravel()
        if not (self.N.size == self.w.size == self.upsilon_star.size) or self.N.size == 0:
            raise ValidationError("N, w and upsilon_star must have equal positive length")
        if np.any(self.N <= 0) or np.any(np.diff(self.N) > 0):
            raise ValidationError("N must be positive and nonincreasing")
        if np.any(self.w <= 0) or np.any(np.diff(self.w) < 0):
            raise ValidationError("w must be positive and nondecreasing")
        if self.sobolev and self.sobolev_norm2() > 1.0 + 1e-9:
            raise ValidationError("truth lies outside the Sobolev ball")
        # prefix sums reused by every cut-off query
        self._inv_N = _csum0(1.0 / self.N)
        self._tail_sq = _csum0(self.upsilon_star[::-1] ** 2)[::-1]

    @property
    def p(self):
        return self.N.size

    def sobolev_norm2(self):
        return _fsum(self.w ** 2 * self.upsilon_star ** 2)

    @classmethod
    def synthetic(cls, p, n, s, beta, C_w=1.0, eps=0.01):
        """N_j = n j^{-2s}, w_j^2 = C_w j^{2 beta}, truth c j^{-beta-1/2-eps}
        scaled onto the Sobolev sphere sum w_j^2 u_j^2 = 1."""
        j = np.arange(1, int(p) + 1, dtype=float)
        N = float(n) * j ** (-2.0 * s)
        w = np.sqrt(C_w) * j ** beta
        u = j ** (-beta - 0.5 - eps)
        u /= math.sqrt(_fsum(w ** 2 * u ** 2))
        return cls(N, w, u, sobolev=True,
                   params={"s": s, "beta": beta, "C_w": C_w, "N1": float(n), "eps": eps})


def ridge_index(N, g2):
    """J = max{j : N_j >= g2} (1-based), 0 when no entry qualifies."""
    N = np.asarray(N, dtype=float)
    # N nonincreasing: count of entries >= g2
    return int(np.sum(N >= g2))


def ridge_risk_bound(m: SequenceModel, g2: float):
    """(var_bound, bias_bound, exact_var, exact_bias) for ridge penalty g2."""
    if not g2 > 0:
        raise PreconditionError("g2 must be > 0")
    J = ridge_index(m.N, g2)
    var_bound = m._inv_N[J] + _fsum(m.N[J:]) / g2 ** 2
    exact_var = _fsum(m.N / (m.N + g2) ** 2)
    exact_bias = _fsum(m.upsilon_star ** 2 / (m.N / g2 + 1.0) ** 2)
    bias_bound = 1.0 / m.w[max(J, 1) - 1] ** 2
    return var_bound, bias_bound, exact_var, exact_bias


def cutoff_risk(m: SequenceModel, J: int):
    """(sum_{j<=J} 1/N_j, sum_{j>J} u*_j^2); J = 0 gives (0, ||u*||^2)."""
    J = int(J)
    if J < 0 or J > m.p:
        raise PreconditionError("need 0 <= J <= p")
    return float(m._inv_N[J]), float(max(m._tail_sq[J], 0.0))


def oracle_cutoff(m: SequenceModel):
    """Exhaustive argmin over J in {0..p} of var + bias; ties go to smaller J."""
    risk = m._inv_N + np.maximum(m._tail_sq, 0.0)
    J = int(np.argmin(risk))   # first minimizer
    return J, float(risk[J])


def roughness_condition(bsq, C_B: float) -> bool:
    """Both polynomial-growth inequalities for all M < p:
    sum_{j>M} b_j^-4 <= C_B M b_{M+1}^-4 and sum_{j<=M} b_j^4 <= C_B M b_M^4."""
    lo, hi = roughness_ratios(bsq)
    return bool(np.all(lo <= C_B * (1 + 1e-12)) and np.all(hi <= C_B * (1 + 1e-12)))


def roughness_ratios(bsq):
    """Per-M ratios of both sides, M = 1..p-1."""
    b2 = np.asarray(bsq, dtype=float).ravel()
    if np.any(b2 <= 0) or np.any(np.diff(b2) < 0):
        raise PreconditionError("b^2 must be positive and nondecreasing")
    p = b2.size
    if p < 2:
        return np.zeros(0), np.zeros(0)
    M = np.arange(1, p, dtype=float)
    inv4 = b2 ** -2.0
    tail = _csum0(inv4[::-1])[::-1]     # tail[k] = sum_{j>k} (0-based k)
    head = _csum0(b2 ** 2)
    r_tail = tail[1:p] / (M * inv4[1:p])
    r_head = head[1:p] / (M * b2[:p - 1] ** 2)
    return r_tail, r_head


def minimal_C_B(bsq) -> float:
    lo, hi = roughness_ratios(bsq)
    if lo.size == 0:
        return 0.0
    return float(max(lo.max(), hi.max()))


def roughness_effective_dim(bsq, C_B: float | None = None):
    """(bound, exact, M_G) with exact = sum (1+b_j^2)^-2, bound = (1+C_B) M_G.

    b_j^2 may be zero here (unpenalized directions).  C_B defaults to the
    minimal constant for the positive part.  The bound is degenerate when
    M_G = 0; the returned dict flags that case.
    """
    b2 = np.asarray(bsq, dtype=float).ravel()
    if np.any(b2 < 0) or np.any(np.diff(b2) < 0):
        raise PreconditionError("b^2 must be nonnegative and nondecreasing")
    exact = _fsum((1.0 + b2) ** -2.0)
    M_G = int(np.sum(b2 <= 1.0))
    if C_B is None:
        pos = b2[b2 > 0]
        C_B = minimal_C_B(pos) if pos.size > 1 else 1.0
    bound = (1.0 + C_B) * M_G
    return bound, exact, M_G


def roughness_degenerate(M_G: int) -> bool:
    return M_G == 0


def _tau_risk(tau, n, s0, C1):
    return ((n / tau) ** (1.0 / (2.0 * s0)) + tau * C1) / n


def tau_family_oracle(n: float, s0: float, C1: float):
    """Minimize n^-1 {(n/tau)^{1/(2 s0)} + tau C1} by golden section in log tau.

    Returns (tau_star, M_tau, risk)."""
    if n <= 0 or s0 <= 0 or C1 <= 0:
        raise PreconditionError("n, s0, C1 must be positive")
    # closed form locates a bracket; golden section does the work
    t0 = (n ** (1.0 / (2 * s0)) / (2 * s0 * C1)) ** (2 * s0 / (2 * s0 + 1))
    lt = math.log(t0)
    res = minimize_scalar(lambda z: math.log(_tau_risk(math.exp(z), n, s0, C1)),
                          bracket=(lt - 3.0, lt, lt + 3.0), method="golden",
                          tol=1e-12)
    tau = math.exp(res.x)
    return tau, (n / tau) ** (1.0 / (2 * s0)), _tau_risk(tau, n, s0, C1)


@dataclass
class RateRow:
    n: float
    J_star: int
    var_term: float
    bias_term: float
    risk: float


@dataclass
class RateResult:
    rows: list
    slope: float
    stderr: float
    intercept: float
    params: dict

    def footer(self):
        return {"slope": self.slope, "slope_stderr": self.stderr,
                "intercept": self.intercept, **self.params}


def rate_sweep(spec: dict, n_grid, p: int | None = None) -> RateResult:
    """Oracle cut-off risk over a grid of sample sizes and its log-log slope.

    spec keys: s, beta, C_w (default 1), eps (default 0.01); N_1 = n.
    """
    n_grid = [float(v) for v in n_grid]
    if len(n_grid) < 3:
        raise PreconditionError("rate sweep needs at least 3 grid points")
    s = float(spec["s"])
    beta = float(spec["beta"])
    C_w = float(spec.get("C_w", 1.0))
    eps = float(spec.get("eps", 0.01))
    if p is None:
        p = int(spec.get("p", 10000))
    rows = []
    for n in n_grid:
        m = SequenceModel.synthetic(p, n, s, beta, C_w, eps)
        J, risk = oracle_cutoff(m)
        v, b = cutoff_risk(m, J)
        rows.append(RateRow(n=n, J_star=J, var_term=v, bias_term=b, risk=risk))
    lr = stats.linregress(np.log([r.n for r in rows]), np.log([r.risk for r in rows]))
    params = {"s": s, "beta": beta, "C_w": C_w, "eps": eps, "p": p,
              "truth_placement": "c j^(-beta-1/2-eps) on the unit Sobolev sphere",
              "predicted_slope": -2 * beta / (1 + 2 * beta + 2 * s)}
    return RateResult(rows=rows, slope=float(lr.slope), stderr=float(lr.stderr),
                      intercept=float(lr.intercept), params=params)


def balance_cutoff(n: float, s0: float) -> float:
    """Root of J/n = J^{-2 s0} (the variance-bias balance), by bisection."""
    lo, hi = 1e-12, max(2.0, float(n))
    f = lambda J: J / n - J ** (-2.0 * s0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def cutoff_constants(N):
    """Minimal C1, C2 with sum_{j<=J} 1/N_j <= C1 J/N_J and
    sum_{j>J} N_j <= C2 J N_J over all J (reported, not assumed)."""
    N = np.asarray(N, dtype=float)
    J = np.arange(1, N.size + 1, dtype=float)
    head = _csum0(1.0 / N)[1:]
    tail = _csum0(N[::-1])[::-1][1:]
    C1 = float(np.max(head * N / J))
    C2 = float(np.max(tail / (J * N)))
    return C1, C2
