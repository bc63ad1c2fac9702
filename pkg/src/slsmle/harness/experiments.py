"""Experiment drivers behind the CLI subcommands.

Each ``run_*`` takes the effective config dict, writes its files into
``out`` and returns an exit status (0 ok, 4 certificate not binding).
"""

from __future__ import annotations

import math
import os

import numpy as np

from .._parallel import run_indexed
from .._rng import replicate_rng
from ..errors import AlphaTooSmall, PreconditionError, ValidationError
from ..estimator import (PenalizedSetup, QuadPenalty, expansion_certificate,
                         fit_pmle, risk_certificate)
from ..models import build_model, logistic_conditions, precision_constants, smat
from ..models.base import ConditionConstants
from ..penalty_lab import rate_sweep
from ..tailbounds import (SpectralSummary, TailConfig, TensorFamily,
                          gaussian_quantile, quantile_curve, solve_xc,
                          fused_quantile, tensor_delta, tensor_lower_alpha_min,
                          tensor_lower_tail, tensor_upper_tail)
from .io import read_csv_matrix, write_csv, write_json

# Laplace coordinates with unit variance: log E e^{t xi} = -log(1 - t^2/2)
# <= t^2 (V^2 = 2) while t^2/2 <= s*, the root of -log(1-s) = 2s.
_S_STAR = 0.7968121300200202
LAPLACE_V2 = 2.0
LAPLACE_GAMMA = 2.0 * math.sqrt(_S_STAR)

COVERAGE_HEADER = ["x", "nominal", "violations", "reps", "empirical",
                   "margin3sigma", "ok"]

DEFAULTS = {
    "tail": {"B": {"identity": 50}, "x_grid": [0.5, 1, 2, 3, 5], "gamma": 10.0,
             "mc": {"reps": 0, "generator": "gaussian", "chunk": 50000}},
    "iid-sandwich": {"n": 10000, "p": 10, "generator": "rademacher",
                     "x_grid": [1, 2, 3], "reps": 200000, "chunk": 50000},
    "fit": {"model": {"kind": "precision", "p": 5, "n": 500},
            "penalty": {"kind": "ridge", "value": 0.0}},
    "certify": {"model": {"kind": "logistic",
                          "design": {"kind": "sphere", "n": 2000, "p": 5, "seed": 11},
                          "truth": [0.5, -0.3, 0.2, 0.0, 0.1]},
                "penalty": {"kind": "ridge", "value": 1.0}, "x": 2.0, "reps": 500,
                "tighten": 0},
    "risk": {"model": {"kind": "logistic",
                       "design": {"kind": "sphere", "n": 5000, "p": 3, "seed": 7},
                       "truth": [0.3, -0.2, 0.1]},
             "penalty": {"kind": "ridge", "value": 1.0}, "x": 1.0, "mc_reps": 500,
             "Q": "fisher_sqrt"},
    "rate": {"s": 1.0, "beta": 1.0, "C_w": 1.0, "p": 10000,
             "n_grid": [2 ** k for k in range(10, 17)]},
    "tensor": {"family": {"kind": "random", "q": 20, "d": 20, "seed": 0},
               "draws": 100000, "chunk": 20000, "x_grid": [1, 2],
               "gamma_factor": 0.5, "n_dirs": 200, "alpha": None},
}

STOCHASTIC = {"tail", "iid-sandwich", "fit", "certify", "risk", "tensor"}


def merge_defaults(command, cfg):
    base = DEFAULTS[command]
    out = {**base, **cfg}
    if isinstance(cfg.get("mc"), dict):
        out["mc"] = {**base["mc"], **cfg["mc"]}
    return out


def coverage_row(x, nominal, violations, reps):
    emp = violations / reps
    margin = 3.0 * math.sqrt(max(nominal * (1.0 - nominal), 0.0) / reps)
    return [x, nominal, int(violations), int(reps), emp, margin, emp <= nominal + margin]


def _chunks(total, chunk):
    n = int(math.ceil(total / chunk))
    return n, [min(chunk, total - i * chunk) for i in range(n)]


# ---------------------------------------------------------------- tail

def _operator(spec, base_dir):
    if "identity" in spec:
        return np.ones(int(spec["identity"])), None
    if "diag" in spec:
        d = np.asarray(spec["diag"], dtype=float)
        if np.any(d < 0):
            raise ValidationError("diagonal B must be nonnegative")
        return d, None
    if "csv" in spec:
        path = spec["csv"]
        path = path if os.path.isabs(path) else os.path.join(base_dir, path)
        B = read_csv_matrix(path)
        if B.shape[0] != B.shape[1] or not np.allclose(B, B.T):
            raise ValidationError(f"matrix in {path} is not symmetric")
        w, U = np.linalg.eigh(B)
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise ValidationError(f"matrix in {path} is not PSD")
        return np.clip(w, 0, None), U
    raise ValidationError("B must be given as identity, diag or csv")


def _draw(gen, rng, size):
    if gen == "gaussian":
        return rng.standard_normal(size)
    if gen == "laplace":
        return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size)
    raise ValidationError(f"unknown generator {gen!r}")


def run_tail(cfg, seed, threads, out, sha, base_dir="."):
    ev, _ = _operator(cfg["B"], base_dir)
    s = SpectralSummary.from_eigenvalues(ev)
    xs = [float(x) for x in cfg["x_grid"]]
    tcfg = TailConfig(gamma=float(cfg["gamma"]))
    _, curve = quantile_curve(s, tcfg, xs)
    header = ["x", "gauss", "fused", "majorant", "regime"]
    rows = [list(r) for r in curve]
    mc = cfg["mc"]
    reps = int(mc.get("reps", 0))
    comments = []
    if reps > 0:
        gen = mc.get("generator", "gaussian")
        # eigen-coordinates: ||Q xi||^2 = sum ev_j xi_j^2 for rotation-free draws;
        # for non-Gaussian xi the dense case keeps Q = B^{1/2} explicitly
        _, U = _operator(cfg["B"], base_dir)
        if gen == "gaussian":
            thr = [gaussian_quantile(s, x) for x in xs]
            nominal = [math.exp(-x) for x in xs]
        else:
            s_eff = SpectralSummary.from_eigenvalues(LAPLACE_V2 * ev)
            pt = solve_xc(s_eff, TailConfig(gamma=LAPLACE_GAMMA))
            thr = [fused_quantile(pt, s_eff, x) for x in xs]
            nominal = [min(1.0, 3 * math.exp(-x)) for x in xs]
            comments.append(f"laplace generator: V^2 = {LAPLACE_V2} I, gamma = {LAPLACE_GAMMA!r}")
        thr2 = np.asarray(thr) ** 2
        sq = np.sqrt(ev)
        Qm = None if U is None or gen == "gaussian" else (U * sq) @ U.T
        nchunk, sizes = _chunks(reps, int(mc.get("chunk", 50000)))

        def one(i):
            rng = replicate_rng(seed, i, "tail/" + gen)
            xi = _draw(gen, rng, (sizes[i], ev.size))
            y = xi * sq if Qm is None else xi @ Qm.T
            nrm2 = np.einsum("ij,ij->i", y, y)
            return (nrm2[:, None] > thr2[None, :]).sum(axis=0)
        counts = np.sum(run_indexed(one, nchunk, threads, chunk=1), axis=0)
        header = header + ["threshold"] + COVERAGE_HEADER[1:]
        for k, r in enumerate(rows):
            r += [thr[k]] + coverage_row(xs[k], nominal[k], counts[k], reps)[1:]
        comments.append(f"generator={gen}")
    write_csv(os.path.join(out, "tail.csv"), header, rows, sha, comments=comments)
    return 0


# ---------------------------------------------------------------- iid sandwich

def _iid_sum(gen, rng, n, size):
    """n^{-1/2} times the sum of n i.i.d. unit-variance coordinates, exactly."""
    if gen == "gaussian":
        return rng.standard_normal(size)
    if gen == "rademacher":
        return (2.0 * rng.binomial(n, 0.5, size) - n) / math.sqrt(n)
    if gen == "laplace":
        sc = 1.0 / math.sqrt(2.0)
        return (rng.gamma(n, sc, size) - rng.gamma(n, sc, size)) / math.sqrt(n)
    raise ValidationError(f"unknown generator {gen!r}")


def run_iid_sandwich(cfg, seed, threads, out, sha, base_dir="."):
    n, p = int(cfg["n"]), int(cfg["p"])
    reps = int(cfg["reps"])
    gen = cfg["generator"]
    xs = [float(x) for x in cfg["x_grid"]]
    if n < 1 or p < 1 or reps < 1:
        raise ValidationError("n, p and reps must be >= 1")
    trB, trB2, nQ = float(p), float(p), 1.0
    c_phi = {"gaussian": 1.0, "rademacher": 1.0}.get(gen, math.inf)
    advisory = n < 10 * p * p
    up = [trB + 2 * math.sqrt(x * trB2) + 2 * x for x in xs]
    lo = [trB - 2 * math.sqrt(x * trB2) for x in xs]
    nchunk, sizes = _chunks(reps, int(cfg.get("chunk", 50000)))

    def one(i):
        rng = replicate_rng(seed, i, "iid/" + gen)
        X = _iid_sum(gen, rng, n, (sizes[i], p))
        s2 = np.einsum("ij,ij->i", X, X)
        return np.stack([(s2[:, None] > np.asarray(up)[None, :]).sum(axis=0),
                         (s2[:, None] < np.asarray(lo)[None, :]).sum(axis=0)])
    counts = np.sum(run_indexed(one, nchunk, threads, chunk=1), axis=0)
    header = ["side"] + COVERAGE_HEADER[:1] + ["threshold"] + COVERAGE_HEADER[1:] + [
        "range_ok", "advisory_small_n"]
    rows = []
    for k, x in enumerate(xs):
        ok_up = math.sqrt(4 * x) <= math.sqrt(trB2) / (3 * c_phi * nQ)
        ok_lo = x <= trB2 / (4 * nQ ** 2)
        r = coverage_row(x, math.exp(-x), counts[0][k], reps)
        rows.append(["upper", x, up[k]] + r[1:] + [ok_up, advisory])
        r = coverage_row(x, min(1.0, 2 * math.exp(-x)), counts[1][k], reps)
        rows.append(["lower", x, lo[k]] + r[1:] + [ok_lo, advisory])
    comments = [f"generator={gen} n={n} p={p}"]
    if advisory:
        comments.append("advisory: n is not >> dim_Q^2 (n < 10 p^2); rows are indicative only")
    write_csv(os.path.join(out, "iid_sandwich.csv"), header, rows, sha, comments=comments)
    return 0


# ---------------------------------------------------------------- models

def _model_and_penalty(cfg, base_dir):
    model = build_model(cfg["model"], base_dir)
    pen = QuadPenalty.from_dict(cfg["penalty"])
    return model, pen


def _load_data(model, cfg, seed, base_dir):
    path = cfg.get("data")
    if path is None:
        return model.sample(replicate_rng(seed, 0, "fit"))
    path = path if os.path.isabs(path) else os.path.join(base_dir, path)
    try:
        arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=1)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read data from {path}: {exc}") from exc
    if model.kind == "precision":
        arr = np.atleast_2d(arr)
    elif model.kind == "logdensity":
        arr = arr.astype(int)
    return arr


def run_fit(cfg, seed, threads, out, sha, base_dir="."):
    model, pen = _model_and_penalty(cfg, base_dir)
    data = _load_data(model, cfg, seed, base_dir)
    fit = fit_pmle(model, pen, data, tol=float(cfg.get("tol", 1e-9)),
                   maxiter=int(cfg.get("maxiter", 200)))
    res = {"upsilon_hat": fit.upsilon_hat, "iters": fit.iters,
           "grad_norm": fit.grad_norm, "converged": fit.converged,
           "objective": fit.objective, "model": model.describe(),
           "penalty": pen.to_dict()}
    if model.kind == "precision":
        U = smat(fit.upsilon_hat, model.p)
        res["upsilon_hat_matrix"] = U
        if pen.kind == "ridge" and pen.value == 0.0:
            S = np.linalg.inv(data.T @ data / data.shape[0])
            res["sample_precision_frobenius_error"] = float(np.linalg.norm(U - S))
    write_json(os.path.join(out, "fit.json"), res, sha)
    write_csv(os.path.join(out, "fit.csv"), ["index", "value"],
              list(enumerate(fit.upsilon_hat)), sha)
    return 0


def _constants(model, cfg, D2, r):
    c = cfg.get("constants")
    if isinstance(c, dict) and "tau3" in c:
        return ConditionConstants(tau3=float(c["tau3"]), tau4=float(c.get("tau4", 0.0)),
                                  radius=c.get("radius"))
    if model.kind == "logistic":
        return logistic_conditions(model, D2, r, tighten=int(cfg.get("tighten", 0)))
    if model.kind == "precision":
        return precision_constants(model, min(r, 0.999 * math.sqrt(model.n / 2)))
    if model.kind == "quadratic":
        return ConditionConstants(tau3=0.0, tau4=0.0, radius=r)
    raise ValidationError(f"config must supply constants.tau3 for {model.kind}")


def run_certify(cfg, seed, threads, out, sha, base_dir="."):
    model, pen = _model_and_penalty(cfg, base_dir)
    x = float(cfg["x"])
    reps = int(cfg["reps"])
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    st = PenalizedSetup(model, pen)
    r_d = st.r_d(x)
    const = _constants(model, cfg, st.D2, 1.5 * max(r_d, st.b_D))

    def one(i):
        data = model.sample(replicate_rng(seed, i, "certify"))
        try:
            rep = expansion_certificate(model, pen, data, const, x=x, setup=st)
        except Exception as exc:
            raise type(exc)(f"replicate {i}: {exc}") from exc
        return rep
    reports = run_indexed(one, reps, threads)
    header = ["rep", "on_omega", "fisher_lhs", "fisher_rhs", "wilks_lhs",
              "wilks_rhs", "joint_ok"]
    rows, joint = [], 0
    for i, rp in enumerate(reports):
        ok = rp.on_omega and rp.fisher_ok and rp.wilks_ok
        joint += ok
        rows.append([i, rp.on_omega, rp.fisher_lhs, rp.fisher_rhs, rp.wilks_lhs,
                     rp.wilks_rhs, ok])
    write_csv(os.path.join(out, "certify.csv"), header, rows, sha)
    nominal = min(1.0, 3 * math.exp(-x))
    cov = coverage_row(x, nominal, reps - joint, reps)
    write_csv(os.path.join(out, "coverage.csv"), COVERAGE_HEADER, [cov], sha)
    pre_ok = all(rp.preconditions_ok for rp in reports)
    summary = {"coverage": dict(zip(COVERAGE_HEADER, cov)),
               "joint_fraction": joint / reps, "r_d": r_d, "b_d": st.b_D,
               "tau3": const.tau3, "kappa_metric": st.kappa_metric,
               "preconditions_ok": pre_ok, "constants": const.to_dict(),
               "notes": st.notes(), "model": model.describe(),
               "bias": {"lhs": reports[0].bias_lhs, "rhs": reports[0].bias_rhs}}
    write_json(os.path.join(out, "certify.json"), summary, sha)
    return 0 if pre_ok else 4


def _Q(spec, st, p):
    if spec == "fisher_sqrt" or spec is None:
        return None
    if spec == "identity":
        return np.eye(p)
    if isinstance(spec, dict) and "coord" in spec:
        Q = np.zeros((1, p))
        Q[0, int(spec["coord"])] = 1.0
        return Q
    if isinstance(spec, list):
        return np.atleast_2d(np.asarray(spec, dtype=float))
    raise ValidationError(f"bad Q spec {spec!r}")


def run_risk(cfg, seed, threads, out, sha, base_dir="."):
    model, pen = _model_and_penalty(cfg, base_dir)
    st = PenalizedSetup(model, pen)
    x = float(cfg["x"])
    r_d = st.r_d(x)
    const = _constants(model, cfg, st.D2, 1.5 * max(r_d, st.b_D))
    rep = risk_certificate(model, pen, Q=_Q(cfg.get("Q"), st, model.dim), x=x,
                           mc_reps=int(cfg.get("mc_reps", 0)), seed=seed,
                           constants=const, C4=cfg.get("C4"), threads=threads,
                           setup=st)
    d = rep.to_dict()
    write_json(os.path.join(out, "risk.json"), d, sha)
    keys = [k for k in d if k != "notes"]
    write_csv(os.path.join(out, "risk.csv"), keys, [[d[k] for k in keys]], sha)
    return 0 if rep.binding else 4


def run_rate(cfg, seed, threads, out, sha, base_dir="."):
    res = rate_sweep(cfg, cfg["n_grid"], p=int(cfg["p"]))
    rows = [[r.n, r.J_star, r.var_term, r.bias_term, r.risk] for r in res.rows]
    write_csv(os.path.join(out, "rate.csv"),
              ["n", "J_star", "var_term", "bias_term", "risk"], rows, sha,
              footer=res.footer())
    return 0


# ---------------------------------------------------------------- tensor

def tensor_family_from_spec(spec):
    kind = spec.get("kind", "random")
    q = int(spec.get("q", 20))
    if kind == "diagonal":
        T = np.zeros((q, q, q))
        T[np.arange(q), np.arange(q), np.arange(q)] = 1.0
        return T
    if kind == "random":
        d = int(spec.get("d", q))
        A = np.random.default_rng(int(spec.get("seed", 0))).standard_normal((q, d, d))
        return (A + A.transpose(0, 2, 1)) / (2.0 * math.sqrt(d))
    raise ValidationError(f"unknown tensor family {kind!r}")


def run_tensor(cfg, seed, threads, out, sha, base_dir="."):
    T = tensor_family_from_spec(cfg["family"])
    tf0 = TensorFamily(T)
    delta = tensor_delta(tf0, int(cfg["n_dirs"]), seed=0)
    tf = TensorFamily(T, delta=delta)
    q = tf.q
    Q = np.eye(q)
    gamma = float(cfg["gamma_factor"]) / delta if delta > 0 else 1.0
    scale = math.sqrt(1.0 - delta * gamma)
    xs = [float(x) for x in cfg["x_grid"]]
    upper = [tensor_upper_tail(tf, Q, TailConfig(gamma=gamma), x) for x in xs]
    amin = tensor_lower_alpha_min(tf, Q)
    alpha = amin if cfg.get("alpha") is None else float(cfg["alpha"])
    lower, skipped = [], []
    for x in xs:
        try:
            lower.append(tensor_lower_tail(tf, Q, x, alpha))
        except (AlphaTooSmall, PreconditionError) as exc:
            lower.append(float("nan"))
            skipped.append(f"lower tail skipped at x={x!r}: {exc}")
    draws = int(cfg["draws"])
    nchunk, sizes = _chunks(draws, int(cfg.get("chunk", 20000)))
    mean = tf.mean()
    up2 = (np.asarray(upper) / scale) ** 2
    lo = np.asarray(lower)

    def one(i):
        g = replicate_rng(seed, i, "tensor").standard_normal((sizes[i], tf.d))
        e = tf.evaluate(g) - mean
        s2 = np.einsum("ij,ij->i", e, e)
        return np.stack([(s2[:, None] > up2[None, :]).sum(axis=0),
                         (s2[:, None] < lo[None, :]).sum(axis=0)])
    counts = np.sum(run_indexed(one, nchunk, threads, chunk=1), axis=0)
    header = ["side", "x", "threshold"] + COVERAGE_HEADER[1:]
    rows = []
    for k, x in enumerate(xs):
        rows.append(["upper", x, upper[k]] +
                    coverage_row(x, min(1.0, 3 * math.exp(-x)), counts[0][k], draws)[1:])
        rows.append(["lower", x, lower[k]] +
                    coverage_row(x, min(1.0, 2 * math.exp(-x)), counts[1][k], draws)[1:])
    comments = [f"delta={delta!r} gamma={gamma!r} alpha={alpha!r} alpha_min={amin!r}"]
    comments += skipped
    finite = lo[np.isfinite(lo)]
    if finite.size and np.all(finite < 0):
        comments.append("lower thresholds are negative: the lower-tail check is vacuous here")
    write_csv(os.path.join(out, "tensor.csv"), header, rows, sha, comments=comments)
    return 0


RUNNERS = {"tail": run_tail, "iid-sandwich": run_iid_sandwich, "fit": run_fit,
           "certify": run_certify, "risk": run_risk, "rate": run_rate,
           "tensor": run_tensor}
