import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fd_oracles import fd_contract, fd_dir3, fd_dir4, fd_grad, fd_jac, rel_err
from slsmle.errors import DomainExit, PreconditionError, ValidationError
from slsmle.models import (HistogramModel, LogDensity1D, LogisticModel,
                           PrecisionModel, QuadraticModel, build_model,
                           design_delta0, histogram_phi, histogram_third_bound,
                           histogram_third_dir, logdensity_condition_constants,
                           logdensity_phi, logistic_conditions,
                           logistic_dir_deriv, logistic_loss_grad_hess,
                           logistic_phi_derivs, logistic_variability,
                           precision_constants, precision_dir_derivs,
                           precision_loss_grad_hess, smat, svec)


def _spd(rng, p, cond=3.0):
    A = rng.standard_normal((p, p))
    Q, _ = np.linalg.qr(A)
    return (Q * np.linspace(1.0, cond, p)) @ Q.T


def make_models(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, 3))
    logit = LogisticModel.from_truth(X, np.array([0.4, -0.3, 0.2]))
    hist = HistogramModel(rng.dirichlet(np.full(5, 3.0)), 1000)
    dens = LogDensity1D.trapezoid(0.0, 1.0, 201, "poly", [0.5, -1.0, 0.3], 500)
    prec = PrecisionModel(_spd(rng, 3), 200)
    quad = QuadraticModel(rng.standard_normal((40, 3)), [1.0, -0.5, 0.25], sigma=0.7)
    return {"logistic": logit, "histogram": hist, "logdensity": dens,
            "precision": prec, "quadratic": quad}


def random_point(m, rng):
    if m.kind == "precision":
        E = rng.standard_normal((m.p, m.p))
        return svec(smat(m.truth, m.p) + 0.05 * (E + E.T))
    return m.truth + 0.4 * rng.standard_normal(m.dim)


MODELS = make_models()


@pytest.mark.parametrize("name", sorted(MODELS))
def test_gradient_matches_fd_of_loss(name):
    m = MODELS[name]
    rng = np.random.default_rng(1)
    data = m.sample(rng)
    for _ in range(10):
        u = random_point(m, rng)
        assert rel_err(m.pop_grad(u), fd_grad(m.pop_loss, u)) <= 1e-6
        assert rel_err(m.grad(u, data), fd_grad(lambda v: m.loss(v, data), u)) <= 1e-6


@pytest.mark.parametrize("name", sorted(MODELS))
def test_hessian_matches_fd_of_gradient(name):
    m = MODELS[name]
    rng = np.random.default_rng(2)
    for _ in range(10):
        u = random_point(m, rng)
        assert rel_err(m.pop_hess(u), fd_jac(m.pop_grad, u)) <= 1e-5


@pytest.mark.parametrize("name", ["logistic", "histogram", "logdensity", "precision"])
def test_third_and_fourth_directional_derivatives(name):
    m = MODELS[name]
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = random_point(m, rng)
        w = rng.standard_normal(m.dim)
        w /= np.linalg.norm(w)
        assert rel_err(m.dir3(u, w), fd_dir3(m.pop_hess, u, w)) <= 1e-4
        assert rel_err(m.dir4(u, w), fd_dir4(m.pop_hess, u, w)) <= 1e-4
        assert rel_err(m.third_contract(u, w), fd_contract(m.pop_hess, u, w)) <= 1e-4


def test_quadratic_model_has_no_higher_derivatives():
    m = MODELS["quadratic"]
    u = np.array([0.3, 0.1, -2.0])
    w = np.array([1.0, 2.0, 3.0])
    assert m.dir3(u, w) == 0.0 and m.dir4(u, w) == 0.0
    assert abs(fd_dir3(m.pop_hess, u, w)) < 1e-8


@pytest.mark.parametrize("name", sorted(MODELS))
def test_stochastic_gradient_is_constant_in_parameter(name):
    m = MODELS[name]
    rng = np.random.default_rng(4)
    data = m.sample(rng)
    u1, u2 = random_point(m, rng), random_point(m, rng)
    d1 = m.grad(u1, data) - m.pop_grad(u1)
    d2 = m.grad(u2, data) - m.pop_grad(u2)
    scale = 1 + np.linalg.norm(d1)
    assert np.linalg.norm(d1 - d2) <= 1e-10 * scale * max(1, m.n_eff / 100)
    np.testing.assert_allclose(d1, m.grad_zeta(data), rtol=1e-9, atol=1e-9 * scale)


# ---------------------------------------------------------------- logistic

def test_logistic_phi_at_zero():
    phi, d1, d2, d3, d4 = logistic_phi_derivs(0.0)
    assert d1 == 0.5 and d2 == 0.25 and d3 == 0.0
    assert phi == pytest.approx(math.log(2.0))


def test_logistic_phi_bounds_on_grid():
    s = np.linspace(-30, 30, 601)
    _, _, d2, d3, d4 = logistic_phi_derivs(s)
    assert np.all(np.abs(d3) <= d2) and np.all(np.abs(d4) <= d2)


def test_logistic_phi_overflow_safe():
    _, d1, d2, _, _ = logistic_phi_derivs(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(d2)) and d1[1] == 1.0


def test_logistic_scalar_gradient_example():
    m = LogisticModel(np.ones((1, 1)), [0.5])
    loss, g, H = logistic_loss_grad_hess(m, np.zeros(1), labels=np.array([1.0]))
    assert g[0] == pytest.approx(-0.5)
    assert H[0, 0] == pytest.approx(0.25)


def test_logistic_dir_deriv_bounded_by_second():
    rng = np.random.default_rng(5)
    m = MODELS["logistic"]
    for _ in range(20):
        u = rng.standard_normal(3) * 2
        w = rng.standard_normal(3)
        a = m.designs @ w
        wts = logistic_phi_derivs(m.designs @ u)[2]
        for k in (3, 4):
            assert abs(logistic_dir_deriv(m, u, w, k)) <= np.sum(np.abs(a) ** k * wts) * (1 + 1e-12)
    with pytest.raises(ValueError):
        logistic_dir_deriv(m, u, w, 5)


def test_logistic_third_vanishes_at_zero_index():
    m = LogisticModel(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0]]), [0.3, 0.7, 0.5])
    assert logistic_dir_deriv(m, np.zeros(2), np.array([0.7, -1.3]), 3) == 0.0


def test_logistic_conditions_orthonormal_design():
    m = LogisticModel(np.eye(3), [0.5, 0.4, 0.6])
    c = logistic_conditions(m, np.eye(3), r=0.1, tighten=64)
    assert c.delta0 == pytest.approx(1.0)
    assert c.varkappa <= c.notes["varkappa_conservative"]
    assert c.varkappa ** 2 <= math.sqrt(math.e) * c.delta0 ** 2 * (1 + 1e-12)
    assert c.tau3 == pytest.approx(math.sqrt(math.e) * c.varkappa)
    assert c.tau4 == pytest.approx(math.sqrt(math.e) * c.varkappa ** 2)


def test_logistic_conditions_singular_D():
    m = MODELS["logistic"]
    with pytest.raises(PreconditionError):
        design_delta0(m.designs, np.zeros((3, 3)))


def test_logistic_fisher_variability_within_sqrt_e():
    m = MODELS["logistic"]
    F = m.fisher(m.truth)
    d0 = design_delta0(m.designs, F)
    r = 0.5 / d0
    lo, hi = logistic_variability(m, m.truth, F, r, n_samples=100, seed=1)
    assert lo >= math.exp(-0.5) and hi <= math.exp(0.5)


def test_logistic_sample_mean():
    rng = np.random.default_rng(6)
    X = np.ones((100000, 1))
    m = LogisticModel(X, np.full(100000, 0.3))
    y = m.sample(rng)
    assert abs(y.mean() - 0.3) <= 3 * math.sqrt(0.21 / 100000)


# ---------------------------------------------------------------- histogram

def test_histogram_phi_two_cells():
    phi, th, H = histogram_phi([0.0, 0.0])
    np.testing.assert_allclose(th, [0.5, 0.5])
    np.testing.assert_allclose(H, [[0.25, -0.25], [-0.25, 0.25]])
    _, th, H = histogram_phi([0.0, math.log(3.0)])
    np.testing.assert_allclose(th, [0.25, 0.75])
    np.testing.assert_allclose(H, [[0.1875, -0.1875], [-0.1875, 0.1875]])


def test_histogram_hessian_kernel_and_psd():
    rng = np.random.default_rng(7)
    for _ in range(20):
        _, _, H = histogram_phi(rng.standard_normal(6) * 3)
        assert np.abs(H @ np.ones(6)).max() < 1e-15
        assert np.linalg.eigvalsh(H).min() >= -1e-10


def test_histogram_third_examples():
    assert histogram_third_dir([0.2, -0.1, 0.5], [2.0, 2.0, 2.0]) == pytest.approx(0.0, abs=1e-14)
    assert histogram_third_dir([0.0, 0.0], [1.0, -1.0]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       st.floats(0, 1))
def test_histogram_third_bound(u, w, g2):
    assert abs(histogram_third_dir(u, w)) <= histogram_third_bound(u, w, g2) + 1e-12


def test_histogram_counts_sum_to_n():
    m = MODELS["histogram"]
    assert m.sample(3).sum() == m.n


def test_histogram_validation():
    with pytest.raises(ValidationError):
        HistogramModel([0.5, 0.6], 10)


# ---------------------------------------------------------------- log-density

def test_logdensity_uniform_moments():
    m = LogDensity1D.trapezoid(0.0, 1.0, 2001, lambda x: x[:, None], [0.0], 10)
    _, g, H = logdensity_phi(m, np.zeros(1))
    assert abs(g[0] - 0.5) <= 1e-8
    assert abs(H[0, 0] - 1.0 / 12.0) <= 1e-6  # trapezoid error ~ h^2/6


def test_logdensity_reduces_to_histogram():
    p = 4
    nodes = np.arange(p, dtype=float)
    m = LogDensity1D(nodes, np.ones(p), np.eye(p), np.zeros(p), 10)
    u = np.array([0.3, -0.2, 1.0, 0.1])
    phi, g, H = logdensity_phi(m, u)
    phi_h, th, Hh = histogram_phi(u)
    assert phi == pytest.approx(phi_h, abs=1e-14)
    np.testing.assert_allclose(g, th, atol=1e-15)
    np.testing.assert_allclose(H, Hh, atol=1e-15)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_logdensity_domain_exit():
    m = LogDensity1D.trapezoid(0.0, 1.0, 11, "poly", [0.0], 10)
    with pytest.raises(DomainExit):
        m.tilted(np.array([np.inf]))


def test_logdensity_condition_constants_monotone_in_samples():
    m = MODELS["logdensity"]
    a = logdensity_condition_constants(m, 0.5, 10, seed=3)
    b = logdensity_condition_constants(m, 0.5, 40, seed=3)
    assert b.C_rho >= a.C_rho and b.C_psi3 >= a.C_psi3
    assert b.notes["C_psi4_estimate"] >= a.notes["C_psi4_estimate"] >= 1.0
    assert b.C_psi4 >= 3.0
    assert b.tau3 == pytest.approx(b.c3 / math.sqrt(m.n))
    assert b.c3 == pytest.approx(b.C_psi3 * (b.C_psi4 * b.C_rho) ** 0.75)


def test_logdensity_gaussian_family_third_moment_vanishes():
    # Psi = (x, -x^2/2) on a symmetric interval; at a symmetric u the
    # tilted law is symmetric so the linear coordinate has no skew
    m = LogDensity1D.trapezoid(-9, 9, 3601, lambda x: np.stack([x, -x * x / 2], 1),
                               [0.0, 1.0], 100)
    from slsmle.models import logdensity_moment_ratios
    r3, r4 = logdensity_moment_ratios(m, np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert r3 < 1e-10
    assert r4 == pytest.approx(3.0, rel=1e-3)


def test_logdensity_variance_of_grad_zeta_mc():
    m = LogDensity1D.trapezoid(0.0, 1.0, 201, "poly", [0.5, -1.0], 50)
    rng = np.random.default_rng(8)
    G = np.array([m.grad_zeta(m.sample(rng)) for _ in range(4000)])
    V = m.var_grad_zeta()
    C = np.cov(G.T)
    # entrywise 4 sigma using the Gaussian approximation of the sample covariance
    se = np.sqrt((V ** 2 + np.outer(np.diag(V), np.diag(V))) / 4000)
    assert np.all(np.abs(C - V) <= 4 * se)


# ---------------------------------------------------------------- precision

def test_precision_second_derivative_identity():
    m = PrecisionModel(np.eye(4), 10)
    d2, d3, d4 = precision_dir_derivs(m, np.eye(4), np.eye(4))
    assert d2 == pytest.approx(m.n * 4 / 2)
    assert d3 == pytest.approx(-m.n * 4) and d4 == pytest.approx(3 * m.n * 4)


def test_precision_matrix_api_matches_fd():
    rng = np.random.default_rng(9)
    m = MODELS["precision"]
    U = smat(random_point(m, rng), m.p)
    Z = rng.standard_normal((m.p, m.p))
    Z = Z + Z.T
    loss, G, Happ = precision_loss_grad_hess(m, U)
    h = 1e-6
    lp = precision_loss_grad_hess(m, U + h * Z)[0]
    lm = precision_loss_grad_hess(m, U - h * Z)[0]
    assert np.sum(G * Z) == pytest.approx((lp - lm) / (2 * h), rel=1e-6)
    Gp = precision_loss_grad_hess(m, U + h * Z)[1]
    Gm = precision_loss_grad_hess(m, U - h * Z)[1]
    np.testing.assert_allclose(Happ(Z), (Gp - Gm) / (2 * h), rtol=1e-5, atol=1e-6)
    d2, d3, d4 = precision_dir_derivs(m, U, Z)
    assert d2 == pytest.approx(np.sum(Z * Happ(Z)), rel=1e-10)


def test_precision_non_spd_raises():
    m = MODELS["precision"]
    with pytest.raises(DomainExit):
        precision_loss_grad_hess(m, -np.eye(m.p))
    assert not m.in_domain(svec(-np.eye(m.p)))


def test_precision_svec_isometry():
    rng = np.random.default_rng(10)
    A = rng.standard_normal((4, 4))
    A = A + A.T
    B = rng.standard_normal((4, 4))
    B = B + B.T
    assert svec(A) @ svec(B) == pytest.approx(np.sum(A * B))
    np.testing.assert_allclose(smat(svec(A)), A)


def test_precision_constants_examples():
    m = PrecisionModel(np.eye(2), 800)
    c = precision_constants(m, 10.0)
    assert c.tau3 == pytest.approx(8 * math.sqrt(8) / math.sqrt(800))
    assert precision_constants(m, 1e-9).tau3 == pytest.approx(math.sqrt(8 / 800))
    rs = np.linspace(0, 19, 20)
    t = [precision_constants(m, r).tau3 for r in rs]
    assert np.all(np.diff(t) > 0)
    with pytest.raises(PreconditionError):
        precision_constants(m, 20.0)


def test_precision_variance_of_linear_functional():
    rng = np.random.default_rng(11)
    S = _spd(rng, 3)
    m = PrecisionModel(S, 20)
    Z = rng.standard_normal((3, 3))
    Z = Z + Z.T
    z = svec(Z)
    vals = np.array([m.grad_zeta(m.sample(rng)) @ z for _ in range(20000)])
    target = m.n / 2 * np.trace(S @ Z @ S @ Z)
    assert z @ m.var_grad_zeta() @ z == pytest.approx(target)
    se = target * math.sqrt(2.0 / vals.size) * 1.5  # excess kurtosis allowance
    assert abs(vals.var() - target) <= 4 * se


def test_precision_sample_covariance():
    rng = np.random.default_rng(12)
    S = _spd(rng, 3)
    m = PrecisionModel(S, 100000)
    X = m.sample(rng)
    C = X.T @ X / m.n
    se = np.sqrt((S ** 2 + np.outer(np.diag(S), np.diag(S))) / m.n)
    assert np.all(np.abs(C - S) <= 4 * se)


# ---------------------------------------------------------------- builder

def test_build_model_kinds(tmp_path):
    spec = {"kind": "logistic", "design": {"kind": "sphere", "n": 30, "p": 2, "seed": 1},
            "truth": [0.1, 0.2]}
    assert build_model(spec).dim == 2
    (tmp_path / "theta.csv").write_text("0.2\n0.3\n0.5\n")
    h = build_model({"kind": "histogram", "theta_star": "theta.csv", "n": 10}, str(tmp_path))
    assert h.dim == 3
    assert build_model({"kind": "precision", "p": 3, "n": 50}).dim == 6
    assert build_model({"kind": "logdensity", "truth": [0.1], "n": 5, "m": 51}).dim == 1
    with pytest.raises(ValidationError):
        build_model({"kind": "nope"})
    with pytest.raises(ValidationError):
        build_model({"kind": "histogram", "theta_star": "missing.csv", "n": 1}, str(tmp_path))
