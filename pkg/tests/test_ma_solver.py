import functools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_banded

from conekit import ma_solver as ms
from conekit.model_geometry import BaseMetric, ConeParams, MetricField, constant_weight, torus_ripple_weight

GOOD = ConeParams(tau=0.75, tau_prime=0.9, c_coef=0.3)
NAIVE = ConeParams(tau=0.75)
RIPPLE = torus_ripple_weight(0.1, 1.0)


def metric_on(params, grid, base=(1e-3, 1.0), weight=None):
    return ms.grid_metric(params, weight or constant_weight(), BaseMetric.flat(list(base[:grid.n])), grid)


def radial_poisson_oracle(g11, rhs_f, h):
    """Direct banded solve of ``(u_rr + u_r / r) / 4 = g (e^f - 1)`` on ``r_i = i h``, ``u(1) = 0``.

    In one complex dimension ``log(g + u_{1 1bar}) - log g = f`` is the linear
    equation ``u_{1 1bar} = g (e^f - 1)``. At the origin ``u_{1 1bar}`` is
    ``(u_1 - u_0) / h^2`` by symmetry.
    """
    m = len(rhs_f)
    b = g11 * (np.exp(rhs_f) - 1.0)
    ab = np.zeros((3, m - 1))
    ab[1, 0], ab[0, 1] = -1 / h ** 2, 1 / h ** 2
    b = b[:m - 1].copy()
    for i in range(1, m - 1):
        r = i * h
        ab[1, i] = -2 / h ** 2 / 4
        ab[2, i - 1] = (1 / h ** 2 - 1 / (2 * h * r)) / 4
        if i + 1 < m - 1:
            ab[0, i + 1] = (1 / h ** 2 + 1 / (2 * h * r)) / 4
    return np.append(solve_banded((1, 1), ab, b), 0.0)


# -- grid ---------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError):
        ms.ReducedGrid(n=3)
    with pytest.raises(ValueError):
        ms.ReducedGrid(radial="polar")
    with pytest.raises(ValueError):
        ms.ReducedGrid(radial="log", rho_min=0.0)
    with pytest.raises(ValueError):
        ms.ReducedGrid(n_rho=3)


def test_grid_needs_smoothing_at_divisor():
    with pytest.raises(ValueError):
        metric_on(GOOD, ms.ReducedGrid(n=1, n_rho=9))


def test_discrete_hessian_of_quadratic():
    # |z_1|^2 + 2 (Re z_2)^2 has complex Hessian diag(1, 1)
    g = ms.ReducedGrid(n=2, n_rho=17, n_x=8, x_periodic=False)
    u = g.rho_field() ** 2 + 2 * g.x_field() ** 2
    H = ms.discrete_hessian(g, u)
    assert np.allclose(H[g.unknown_mask()], np.eye(2), atol=1e-10)


def test_discrete_hessian_second_order_on_clustered_grid():
    errs = []
    for N in (17, 33, 65):
        g = ms.ReducedGrid(n=1, n_rho=N, radial="sinh")
        H = ms.discrete_hessian(g, g.rho_field() ** 2)
        errs.append(np.max(np.abs(H[g.unknown_mask()][:, 0, 0] - 1.0)))
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


# -- Ricci ------------------------------------------------------------------------

def test_ricci_of_flat_metric():
    g = ms.ReducedGrid(n=2, n_rho=33, n_x=32)
    m = metric_on(ConeParams(tau=1.0, epsilon=1.0), g, (1.0, 1.0))
    data = ms.ricci_form(m)
    assert np.max(np.abs(data.trace[g.unknown_mask()])) <= 1e-8
    assert np.allclose(data.rho, np.conj(np.swapaxes(data.rho, -1, -2)))


def test_ricci_of_model_cone_vanishes_off_tip():
    g = ms.ReducedGrid(n=1, n_rho=33, radial="log", rho_min=1e-3)
    m = ms.grid_metric(NAIVE, constant_weight(), BaseMetric.zero(), g)
    assert np.max(np.abs(ms.ricci_form(m).trace[g.unknown_mask()])) <= 1e-8


def test_ricci_of_round_sphere():
    errs = []
    for N in (33, 65, 129):
        g = ms.ReducedGrid(n=1, n_rho=N)
        G = ((1 + g.rho_field() ** 2) ** -2)[:, None, None].astype(complex)
        tr = ms.ricci_form(MetricField(g.points(), G, None, {"grid": g})).trace
        errs.append(np.max(np.abs(tr[g.unknown_mask()] - 2.0)))
    assert errs[-1] <= 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_ricci_potential_of_flat_metric():
    g = ms.ReducedGrid(n=2, n_rho=17, n_x=16)
    d = ms.ricci_potential(metric_on(ConeParams(tau=1.0, epsilon=1.0), g, (1.0, 1.0)))
    assert np.max(np.abs(d.potential)) <= 1e-8


def test_ricci_potential_lower_bound_contrast():
    good, naive = [], []
    for rmin in (1e-2, 1e-3, 1e-4, 1e-5):
        g = ms.ReducedGrid(n=1, n_rho=65, radial="log", rho_min=rmin)
        dg = ms.ricci_potential(metric_on(GOOD, g))
        good.append(dg.inf_laplacian_neg)
        naive.append(ms.ricci_potential(metric_on(NAIVE, g)).inf_laplacian_neg)
    assert min(good) > -1e-8
    # the good metric's Ricci trace is o(|z_1|^(-2 tau)) toward the divisor
    ratio = dg.growth_ratio[g.unknown_mask()]
    assert ratio[0] < ratio[len(ratio) // 2] < ratio[-1]
    assert all(b < 5 * a for a, b in zip(naive, naive[1:]))
    assert naive[-1] / naive[0] >= 100


# -- right-hand side ---------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _ripple_metric():
    g = ms.ReducedGrid(n=2, n_rho=17, n_x=16)
    return metric_on(GOOD.with_(epsilon=1e-2), g, weight=RIPPLE)


@pytest.fixture
def ripple_metric():
    return _ripple_metric()


def test_rhs_constants(ripple_metric):
    g = ripple_metric.meta["grid"]
    assert ms.build_rhs(np.zeros(g.shape), ripple_metric).constant == 0.0
    assert ms.build_rhs(np.ones(g.shape), ripple_metric).constant == pytest.approx(-1.0, abs=1e-14)


def test_rhs_quadrature_converges():
    consts = []
    for N in (16, 32, 64):
        g = ms.ReducedGrid(n=2, n_rho=N + 1, n_x=N)
        m = metric_on(NAIVE.with_(epsilon=1e-2), g, (1.0, 1.0), RIPPLE)
        s = ms.build_rhs(g.x_field(), m)
        assert s.normalization_error <= 1e-10
        consts.append(s.constant)
    assert abs(consts[2] - consts[1]) < abs(consts[1] - consts[0]) < 2e-2


def test_rhs_errors(ripple_metric):
    g = ripple_metric.meta["grid"]
    with pytest.raises(OverflowError):
        ms.build_rhs(np.full(g.shape, 701.0), ripple_metric)
    with pytest.raises(ValueError):
        ms.build_rhs(np.full(g.shape, np.nan), ripple_metric)


@given(st.floats(-3, 3), st.floats(-2, 2), st.integers(1, 3))
@settings(max_examples=25)
def test_rhs_normalization_invariant(a, b, k):
    ripple_metric = _ripple_metric()
    g = ripple_metric.meta["grid"]
    f = a * np.cos(2 * np.pi * k * g.x_field()) + b * g.rho_field()
    s = ms.build_rhs(f, ripple_metric)
    assert s.normalization_error <= 1e-10
    assert np.allclose(s.values - f, s.constant)


# -- Newton ------------------------------------------------------------------------

def test_zero_source_gives_zero_potential(ripple_metric):
    g = ripple_metric.meta["grid"]
    p = GOOD.with_(epsilon=1e-2)
    phi, rep = ms.newton_solve(p, ripple_metric, ms.build_rhs(np.zeros(g.shape), ripple_metric))
    assert phi.sup_norm() <= 1e-10 and rep.iterations == 0
    assert rep.sup_n_plus_laplacian == pytest.approx(2.0, abs=1e-12)


def test_manufactured_second_order():
    p = GOOD.with_(epsilon=0.05)
    errs = []
    for N in (12, 24, 48):
        g = ms.ReducedGrid(n=2, n_rho=N + 1, n_x=N)
        m = metric_on(p, g, (1.0, 1.0), RIPPLE)
        exact, f = ms.manufactured_source(m, ms.bump_cosine())
        phi, rep = ms.newton_solve(p, m, ms.SourceTerm(f, 0.0), monitor=False)
        assert rep.residual <= 1e-10
        errs.append(np.max(np.abs(phi.values - exact)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_one_dimensional_oracle(seed):
    p = GOOD.with_(epsilon=1e-2)
    g = ms.ReducedGrid(n=1, n_rho=129)
    m = metric_on(p, g)
    rng = np.random.default_rng(seed)
    r = g.rho_field()
    f_raw = sum(rng.uniform(-0.3, 0.3) * np.cos(k * np.pi * r) for k in range(1, 4))
    src = ms.build_rhs(f_raw, m)
    phi, rep = ms.newton_solve(p, m, src, tol=1e-12)
    u = radial_poisson_oracle(m.G[:, 0, 0].real, src.values, g.h_xi)
    assert np.max(np.abs(phi.values - u)) <= 1e-6
    assert phi.sup_norm() > 1e-2


@given(st.floats(-0.8, 0.8), st.floats(-0.5, 0.5), st.integers(1, 2))
@settings(max_examples=10)
def test_newton_invariants(a, b, k):
    p = GOOD.with_(epsilon=1e-2)
    g = ms.ReducedGrid(n=2, n_rho=13, n_x=12, radial="sinh")
    m = metric_on(p, g, weight=RIPPLE)
    f = a * np.cos(2 * np.pi * k * g.x_field()) + b * (1 - g.rho_field() ** 2)
    src = ms.build_rhs(f, m)
    accepted = []
    phi, rep = ms.newton_solve(p, m, src, iterate_callback=accepted.append)
    hist = rep.residual_history
    assert all(y < x for x, y in zip(hist, hist[1:]))
    assert min(rep.min_eigenvalue_history) > 0
    for it in accepted:
        H = ms.discrete_hessian(g, it.values)
        assert np.min(np.linalg.eigvalsh((m.G + H)[g.unknown_mask()])) > 0
    assert rep.residual <= 1e-10
    assert ms.normalization_error(src, m) <= 1e-8


def test_newton_max_iterations(ripple_metric):
    g = ripple_metric.meta["grid"]
    src = ms.build_rhs(0.5 * np.cos(2 * np.pi * g.x_field()), ripple_metric)
    with pytest.raises(ms.MaxIterationsError):
        ms.newton_solve(GOOD.with_(epsilon=1e-2), ripple_metric, src, max_iter=1)


def test_coupled_equation_residual():
    p = GOOD.with_(epsilon=1e-2, mu=0.5)
    g = ms.ReducedGrid(n=1, n_rho=33)
    m = metric_on(p, g)
    src = ms.build_rhs(0.3 * np.cos(np.pi * g.rho_field()), m)
    phi, rep = ms.newton_solve(p, m, src, tol=1e-10)
    H = ms.discrete_hessian(g, phi.values)
    mask = g.unknown_mask()
    F = (np.log(np.linalg.det(m.G + H)[mask].real) - np.log(np.linalg.det(m.G)[mask].real)
         - src.values[mask] + 0.5 * phi.values[mask])
    assert np.max(np.abs(F)) <= 1e-9


# -- continuation and monitoring ------------------------------------------------------

def cosine_source(grid, eps):
    return 0.5 * np.cos(2 * np.pi * grid.x_field())


def test_constant_schedule_has_zero_cauchy_difference():
    g = ms.ReducedGrid(n=2, n_rho=13, n_x=12, radial="sinh")
    steps = ms.epsilon_continuation(GOOD, RIPPLE, cosine_source, [1e-2, 1e-2], 1e-10,
                                    BaseMetric.flat([1e-3, 1.0]), g)
    assert steps[1].cauchy <= 1e-12


def test_continuation_on_good_metric():
    g = ms.ReducedGrid(n=2, n_rho=33, n_x=32, radial="sinh")
    eps = [1e-1, 1e-2, 1e-3, 1e-4]
    steps = ms.epsilon_continuation(GOOD, constant_weight(), cosine_source, eps, 1e-10,
                                    BaseMetric.flat([1e-3, 1.0]), g)
    lap = [s.report.sup_laplacian for s in steps]
    assert max(lap) / min(lap) <= 2.0
    cauchy = [s.cauchy for s in steps[1:]]
    assert all(b < a for a, b in zip(cauchy, cauchy[1:]))
    for s in steps:
        assert all(np.isfinite(v) for v in s.report.constants().values())
        assert s.report.normalization_error <= 1e-8


def test_continuation_rejects_bad_schedules():
    with pytest.raises(ValueError):
        ms.epsilon_continuation(GOOD, RIPPLE, cosine_source, [1e-3, 1e-2])
    with pytest.raises(ValueError):
        ms.epsilon_continuation(GOOD, RIPPLE, cosine_source, [1e-2, 0.0])


def test_monitor_of_zero_potential(ripple_metric):
    g = ripple_metric.meta["grid"]
    src = ms.build_rhs(np.zeros(g.shape), ripple_metric)
    out = ms.laplacian_monitor(ms.PotentialField.zeros(g), ripple_metric, src)
    assert out["sup_n_plus_laplacian"] == 2.0 and out["phi_sup"] == 0.0


def test_monitor_curvature_contrast():
    g = ms.ReducedGrid(n=1, n_rho=65, radial="sinh")
    good, naive = [], []
    for eps in (1e-1, 1e-2, 1e-3, 1e-4):
        good.append(ms.grid_curvature_infimum(metric_on(GOOD.with_(epsilon=eps), g)))
        naive.append(ms.grid_curvature_infimum(metric_on(NAIVE.with_(epsilon=eps), g)))
    assert min(good) > 0 and max(good) / min(good) <= 2.0
    assert all(b < a for a, b in zip(naive, naive[1:]))
    assert naive[-1] / naive[0] >= 10


def test_monitor_stable_under_refinement():
    p = GOOD.with_(epsilon=0.05)
    vals = []
    for N in (24, 48):
        g = ms.ReducedGrid(n=2, n_rho=N + 1, n_x=N)
        m = metric_on(p, g, (1.0, 1.0), RIPPLE)
        _, f = ms.manufactured_source(m, ms.bump_cosine())
        _, rep = ms.newton_solve(p, m, ms.SourceTerm(f, 0.0))
        vals.append(rep)
    for key in ("phi_sup", "sup_laplacian", "inf_f", "inf_bisectional"):
        a, b = getattr(vals[0], key), getattr(vals[1], key)
        assert np.isfinite(a) and b == pytest.approx(a, rel=0.05), key


# -- differential inequality --------------------------------------------------------------

@pytest.fixture(scope="module")
def manufactured_run():
    p = GOOD.with_(epsilon=0.05)
    g = ms.ReducedGrid(n=2, n_rho=13, n_x=12)
    m = metric_on(p, g, (1.0, 1.0), RIPPLE)
    _, f = ms.manufactured_source(m, ms.bump_cosine())
    iterates = [ms.PotentialField.zeros(g)]
    phi, _ = ms.newton_solve(p, m, ms.SourceTerm(f, 0.0), monitor=False, iterate_callback=iterates.append)
    return m, iterates


def test_inequality_trivial_case(manufactured_run):
    m, _ = manufactured_run
    g = m.meta["grid"]
    res = ms.differential_inequality_check(ms.PotentialField.zeros(g), m, ms.SourceTerm(np.zeros(g.shape), 0.0))
    inner = np.isfinite(res.margin)
    assert np.allclose(res.lhs[inner], 0.0, atol=1e-12)
    assert np.all(res.rhs[inner] <= 1e-12)
    assert res.worst >= -1e-12


def test_inequality_margin_on_iterates(manufactured_run):
    m, iterates = manufactured_run
    assert len(iterates) >= 3
    for it in iterates:
        res = ms.differential_inequality_check(it, m)
        assert res.worst_scaled >= -10.0


def test_shifted_inequality_improves_margin(manufactured_run):
    m, iterates = manufactured_run
    out = ms.shift_comparison(iterates[-1], m)
    assert out["C2"] >= 2 * out["C"] * 5 / out["min_eigenvalue"] - 1e-12
    assert out["margin_shifted"] > out["margin_unshifted"]


# -- localized equation ------------------------------------------------------------------

@pytest.fixture(scope="module")
def model_annulus():
    tau = 0.75
    g = ms.ReducedGrid(n=2, n_rho=65, n_x=16, radial="log", rho_min=1e-2, x_periodic=False)
    w = ms.reduced_reference_potential(ConeParams(tau=tau), constant_weight(), [0.0, 1.0], g)
    return tau, g, w


def test_localized_model_solution(model_annulus):
    tau, g, w = model_annulus
    r = ms.localized_residual(ms.PotentialField(g, w), 0.0, 2 * np.log(tau), tau)
    assert r <= 1e-3
    fine = ms.ReducedGrid(n=2, n_rho=129, n_x=16, radial="log", rho_min=1e-2, x_periodic=False)
    wf = ms.reduced_reference_potential(ConeParams(tau=tau), constant_weight(), [0.0, 1.0], fine)
    assert ms.localized_residual(ms.PotentialField(fine, wf), 0.0, 2 * np.log(tau), tau) < r / 3


def test_localized_pluriharmonic_invariance(model_annulus):
    tau, g, w = model_annulus
    base = ms.localized_residual(ms.PotentialField(g, w), 0.0, 0.0, tau)
    shifted = ms.localized_residual(ms.PotentialField(g, w + g.x_field()), 0.0, 0.0, tau)
    assert shifted == pytest.approx(base, rel=1e-10)


def test_localized_rejects_non_psh(model_annulus):
    tau, g, w = model_annulus
    with pytest.raises(ValueError):
        ms.localized_residual(ms.PotentialField(g, -w), 0.0, 0.0, tau)


def _recovered_oscillation(params, base, grid):
    m = ms.grid_metric(params, constant_weight(), BaseMetric.flat(base), grid)
    src = ms.build_rhs(0.5 * np.cos(2 * np.pi * grid.x_field()), m)
    phi, rep = ms.newton_solve(params, m, src)
    Hs = m.G.real + ms.discrete_hessian(grid, phi.values)
    H = ms.recover_pluriharmonic(phi, 0.0, params.tau, hessian=Hs)
    half = (grid.rho_field() <= 0.5) & grid.unknown_mask() & (grid.rho_field() > 0)
    osc = np.nanmax(H[half]) - np.nanmin(H[half])
    bound = np.max(np.abs(src.values)) + grid.n * np.log(1 + rep.sup_laplacian)
    ref = np.log(np.linalg.det(m.G[half]).real) - (2 * params.tau - 2) * np.log(grid.rho_field()[half])
    assert ms.localized_residual(phi, 0.0, H, params.tau, hessian=Hs) <= 1e-12
    return osc, bound, float(np.ptp(ref))


def test_recovered_oscillation_bound_for_model():
    g = ms.ReducedGrid(n=2, n_rho=49, n_x=48, radial="log", rho_min=1e-3)
    osc, bound, ref = _recovered_oscillation(NAIVE, [0.0, 1.0], g)
    assert ref <= 1e-12
    assert osc <= bound


def test_recovered_oscillation_bound_for_good_metric():
    # the reference metric contributes its own oscillation of log det g - log |z_1|^(2 tau - 2)
    g = ms.ReducedGrid(n=2, n_rho=49, n_x=48, radial="sinh")
    osc, bound, ref = _recovered_oscillation(GOOD.with_(epsilon=1e-3), [1e-3, 1.0], g)
    assert osc <= bound + ref
