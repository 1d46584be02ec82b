import numpy as np
import pytest
from hypothesis import given, strategies as st

from conekit.jets import coordinate_jets
from conekit.model_geometry import (
    BaseMetric, ConeParams, DomainSpec, PositivityError, SingularPointError,
    constant_weight, eval_metric_field, eval_model_metric, eval_reference_metric,
    gaussian_weight, hessian_from_jet, positivity_search, reference_potential_jet,
    scale_line_bundle_metric, torus_ripple_weight, weight_from_catalog,
)
from conekit.symbolic_curvature import expansion, specialize, sym_eval_numeric


# -- parameters and domains --------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(tau=0.0), dict(tau=1.2), dict(tau=0.5, a_coef=0.0),
    dict(tau=0.5, c_coef=-1.0), dict(tau=0.5, epsilon=-1e-3),
    dict(tau=0.5, c_coef=0.1, tau_prime=0.4), dict(tau=0.5, c_coef=0.1, tau_prime=1.0),
    dict(tau=0.5, correction_sign=0),
])
def test_cone_params_rejects(kw):
    with pytest.raises(ValueError):
        ConeParams(**kw)


def test_domain_spec_validation():
    with pytest.raises(ValueError):
        DomainSpec(resolution=(3,))
    with pytest.raises(ValueError):
        DomainSpec(rho_min=0.0, radial_spacing="log")
    with pytest.raises(ValueError):
        DomainSpec(n=1, cone_taus=(0.5, 0.5))
    dom = DomainSpec(rho_min=0.0, radial_spacing="linear")
    with pytest.raises(ValueError):
        dom.check_epsilon(0.0)
    dom.check_epsilon(1e-3)


# -- model metric --------------------------------------------------------------

@given(st.complex_numbers(max_magnitude=5.0, allow_nan=False, allow_infinity=False))
def test_model_metric_flat_when_tau_one(z):
    dom = DomainSpec(n=2, cone_taus=(1.0,), resolution=(8,))
    g = eval_model_metric(ConeParams(tau=1.0), dom, [z, 0.3])
    assert np.array_equal(g, np.eye(2))


def test_model_metric_hand_values():
    dom = DomainSpec(n=1, cone_taus=(0.5,))
    g = eval_model_metric(ConeParams(tau=0.5), dom, [0.25])
    assert g[0, 0].real == pytest.approx(1.0, abs=1e-15)

    dom2 = DomainSpec(n=2, cone_taus=(0.5, 0.75), resolution=(8, 8))
    g2 = eval_model_metric(ConeParams(tau=0.5), dom2, [0.5, 0.5])
    want = np.diag([0.25 * 0.5 ** -1.0, 0.5625 * 0.5 ** -0.5])
    assert np.allclose(g2, want, rtol=1e-14)


def test_model_metric_singular_on_divisor():
    dom = DomainSpec(n=1, cone_taus=(0.5,))
    with pytest.raises(SingularPointError):
        eval_model_metric(ConeParams(tau=0.5), dom, [0.0])


# -- reference metric ---------------------------------------------------------

@given(st.floats(0.1, 0.95), st.floats(1e-3, 2.0), st.floats(0, 2 * np.pi),
       st.floats(-1.0, 1.0))
def test_reduces_to_flat_plus_model(tau, r, theta, x2):
    z = [r * np.exp(1j * theta), x2 + 0.2j]
    params = ConeParams(tau=tau)
    dom = DomainSpec(n=2, cone_taus=(tau,), resolution=(8, 8))
    g = eval_reference_metric(params, constant_weight(), BaseMetric.flat([1.0, 1.0]), z)
    model = eval_model_metric(params, dom, z)
    assert np.allclose(g, model + np.diag([1.0, 0.0]), rtol=1e-12, atol=1e-14)


@given(st.floats(0.3, 0.8), st.floats(0.05, 1.0), st.floats(0, 2 * np.pi),
       st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_raw_hessian_is_hermitian(tau, r, theta, x2, y2):
    params = ConeParams(tau=tau, tau_prime=tau + 0.1, c_coef=0.05, epsilon=1e-3)
    pts = np.array([[r * np.exp(1j * theta), complex(x2, y2)]])
    pot = reference_potential_jet(params, torus_ripple_weight(0.2, 1.0),
                                  BaseMetric.flat([1.0, 1.0]), pts, degree=2)
    (G,) = hessian_from_jet(pot, 2, order=2)
    scale = np.max(np.abs(G))
    assert np.max(np.abs(G[0] - G[0].conj().T)) <= 1e-13 * scale


def test_adapted_point_matches_normalized_expansion():
    # A gaussian weight centred at the evaluation point is normalized there:
    # a = 1, da = 0, a_{,ab} = 0 and a_{,a bbar} = -lam delta_ab. The
    # normalized form has M = 1, so the correction coefficient is 1 here.
    tau, tp, c, lam = 0.75, 0.9, 1.0, 0.7
    z1 = 0.3
    point = np.array([z1, 0.1 + 0.2j])
    base = BaseMetric.flat([1.5, 2.0])
    params = ConeParams(tau=tau, tau_prime=tp, c_coef=c)
    g = eval_reference_metric(params, gaussian_weight(lam, point), base, point)

    expr = expansion("tilde-omega-good-coord")
    # K = a^tau, M = a^tau'  ->  K_{,a bbar} = -tau lam delta, M_{,a bbar} = -c tau' lam delta
    values = {
              "K[1|1]": -tau * lam, "K[2|2]": -tau * lam, "K[1|2]": 0.0, "K[2|1]": 0.0,
              "M[1|1]": -c * tp * lam, "M[2|2]": -c * tp * lam, "M[1|2]": 0.0, "M[2|1]": 0.0,
              "Phi0[1|1]": 1.5, "Phi0[2|2]": 2.0, "Phi0[1|2]": 0.0, "Phi0[2|1]": 0.0}
    for a in (1, 2):
        for b in (1, 2):
            e = specialize(expr, {"a": str(a), "b": str(b)})
            want = sym_eval_numeric(e, tau, tp, abs(z1), values)
            assert g[a - 1, b - 1].real == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_smoothed_family_finite_at_divisor():
    tau, eps = 0.75, 0.01
    params = ConeParams(tau=tau, epsilon=eps)
    base = BaseMetric.flat([1.0])
    g0 = eval_reference_metric(params, constant_weight(), base, [0.0])
    assert g0[0, 0].real == pytest.approx(1.0 + tau * eps ** (tau - 1), rel=1e-13)
    g_near = eval_reference_metric(params, constant_weight(), base, [1e-7])
    assert abs(g_near[0, 0] - g0[0, 0]) < 1e-8


def test_continuity_in_epsilon():
    params = ConeParams(tau=0.6, tau_prime=0.8, c_coef=0.2)
    w = torus_ripple_weight(0.1, 1.0)
    base = BaseMetric.flat([1.0, 1.0])
    z = [0.05, 0.3]
    g0 = eval_reference_metric(params, w, base, z)
    gaps = [np.max(np.abs(eval_reference_metric(params.with_(epsilon=2.0 ** -k), w, base, z) - g0))
            for k in range(4, 40, 4)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


def test_positivity_error_carries_point():
    params = ConeParams(tau=0.5, tau_prime=0.75, c_coef=3.0)
    with pytest.raises(PositivityError) as err:
        eval_reference_metric(params, constant_weight(), BaseMetric.zero(), [0.9])
    assert err.value.min_eigenvalue < 0


# -- weights ----------------------------------------------------------------------

def test_scale_identity_and_doubling():
    w = constant_weight()
    assert scale_line_bundle_metric(w, 1.0) == w
    w2 = scale_line_bundle_metric(w, 2.0)
    assert w2.value(np.array([[0.3]]))[0] == 2.0
    tau, tp, r = 0.6, 0.85, 0.4
    # K = 2^tau: cone component scales by 2^tau
    g = eval_reference_metric(ConeParams(tau=tau), w2, BaseMetric.zero(), [r])[0, 0].real
    assert g == pytest.approx(2 ** tau * tau ** 2 * r ** (2 * tau - 2), rel=1e-13)
    # M = 2^tau': the correction scales by 2^tau'
    p = ConeParams(tau=tau, tau_prime=tp, c_coef=0.01)
    corr = (eval_reference_metric(p, w2, BaseMetric.zero(), [r])
            - eval_reference_metric(p.with_(c_coef=0.0), w2, BaseMetric.zero(), [r]))[0, 0].real
    assert corr == pytest.approx(-0.01 * 2 ** tp * tp ** 2 * r ** (2 * tp - 2), rel=1e-10)
    with pytest.raises(ValueError):
        scale_line_bundle_metric(w, 0.0)


def test_positivity_search_against_eigenvalue_scan():
    tau, tp, c = 0.5, 0.75, 3.0
    params = ConeParams(tau=tau, tau_prime=tp, c_coef=c)
    r = np.linspace(0.1, 1.0, 25)
    pts = r[:, None].astype(complex)
    factor, w = positivity_search(params, constant_weight(), BaseMetric.zero(), pts)

    def closed_form_min(s):
        g = tau ** 2 * s ** tau * r ** (2 * tau - 2) - c * tp ** 2 * s ** tp * r ** (2 * tp - 2)
        return g.min()

    k = next(k for k in range(60) if closed_form_min(2.0 ** -k) > 0)
    assert factor == 2.0 ** -k
    assert k > 0
    assert eval_metric_field(params, w, BaseMetric.zero(), pts).min_eigenvalues().min() > 0


def test_weight_catalog():
    assert weight_from_catalog("gaussian", lam=0.5).name == "gaussian"
    with pytest.raises(KeyError):
        weight_from_catalog("nope")
    with pytest.raises(ValueError):
        torus_ripple_weight().jet(np.array([[0.1]]))
    assert constant_weight().adapted_flag
    assert not torus_ripple_weight().adapted_flag


def test_fubini_study_one_variable():
    z = np.array([[0.3 + 0.4j]])
    zj, zbj = coordinate_jets(z, 2)
    pot = BaseMetric.fubini_study().builder(zj, zbj)
    (G,) = hessian_from_jet(pot, 1)
    assert G[0, 0, 0].real == pytest.approx((1 + 0.25) ** -2, rel=1e-13)
