import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from driftlab import flow_core as fc
from driftlab.exceptions import DimensionError, DomainError, SingularityError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vec8 = arrays(np.float64, 8, elements=finite)
unit = st.floats(0.0, 1.0)
betas = st.floats(0.05, 200.0)


def test_interpolate_examples():
    np.testing.assert_array_equal(fc.interpolate([0, 0], [2, 4], 0.5), [1, 2])
    v = np.array([0.3, -7.0, 2.5])
    for t in (0.0, 0.37, 1.0):
        np.testing.assert_allclose(fc.interpolate(v, v, t), v, rtol=0, atol=1e-15)
    # elementwise oracle: 0.75*1 + 0.25*3 = 1.5, 0.75*-1 + 0.25*5 = 0.5
    np.testing.assert_allclose(fc.interpolate([1, -1], [3, 5], 0.25), [1.5, 0.5], atol=1e-15)


def test_interpolate_errors():
    with pytest.raises(DimensionError):
        fc.interpolate([0, 0], [1, 2, 3], 0.5)
    with pytest.raises(DomainError):
        fc.interpolate([0], [1], 1.5)
    with pytest.raises(DomainError):
        fc.interpolate([0], [1], -0.1)


@given(vec8, vec8)
def test_interpolant_endpoints_exact(x0, x1):
    np.testing.assert_array_equal(fc.interpolate(x0, x1, 0.0), x0)
    np.testing.assert_array_equal(fc.interpolate(x0, x1, 1.0), x1)


def test_fm_velocity_examples():
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(fc.fm_velocity(np.zeros(3), v), v)
    np.testing.assert_array_equal(fc.fm_velocity(v, v), np.zeros(3))
    np.testing.assert_array_equal(fc.fm_velocity([1, 2], [4, 0]), [3, -2])
    with pytest.raises(DimensionError):
        fc.fm_velocity(np.zeros((2, 3)), np.zeros((3, 2)))


def test_exact_restorative_velocity_examples():
    xt_tilde = fc.interpolate([0.0], [1.5], 0.5)
    np.testing.assert_allclose(xt_tilde, [0.75])
    np.testing.assert_allclose(fc.exact_restorative_velocity([1.0], xt_tilde, 0.5), [0.5], atol=1e-15)

    rng = np.random.default_rng(0)
    x0, x1 = rng.normal(size=(2, 6, 4))
    for t in (0.0, 0.3, 0.9):
        xt = fc.interpolate(x0, x1, t)
        np.testing.assert_allclose(fc.exact_restorative_velocity(x1, xt, t), fc.fm_velocity(x0, x1),
                                   rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(fc.exact_restorative_velocity(x1, x1, t), np.zeros_like(x1))


def test_exact_restorative_velocity_singularity():
    with pytest.raises(SingularityError):
        fc.exact_restorative_velocity([1.0], [0.0], 0.9995)
    with pytest.raises(SingularityError):
        fc.exact_restorative_velocity([1.0], [0.0], 1.0)
    fc.exact_restorative_velocity([1.0], [0.0], 0.998)


def test_lambda_examples():
    for beta in (0.5, 4.0, 16.0, 64.0):
        assert fc.lambda_weight(0.0, beta) == 0.0
        assert fc.lambda_weight(1.0, beta) == 0.0
        assert fc.lambda_weight(0.5, beta) == pytest.approx(1.0, abs=1e-15)
    mpmath.mp.dps = 40
    b, t = mpmath.mpf(16), mpmath.mpf("0.25")
    oracle = (mpmath.e ** (-b * (t - mpmath.mpf(1) / 2) ** 2) - mpmath.e ** (-b / 4)) / (1 - mpmath.e ** (-b / 4))
    assert fc.lambda_weight(0.25, 16.0) == pytest.approx(float(oracle), abs=1e-14)
    assert fc.lambda_weight(0.25, 16.0) == pytest.approx(0.356086, abs=1e-6)


def test_lambda_default_beta_is_weak_at_extremes():
    assert fc.lambda_weight(0.1) < 0.1
    assert fc.lambda_weight(0.9) < 0.1


@pytest.mark.parametrize("beta", [0.0, -1.0])
def test_lambda_rejects_nonpositive_beta(beta):
    with pytest.raises(DomainError):
        fc.lambda_weight(0.3, beta)
    with pytest.raises(DomainError):
        fc.RestorationSchedule(beta)


@settings(max_examples=50)
@given(betas)
def test_lambda_shape_on_grid(beta):
    grid = np.linspace(0.0, 1.0, 1001)
    lam = fc.lambda_weight(grid, beta)
    assert np.all(lam >= -1e-12) and np.all(lam <= 1 + 1e-12)
    np.testing.assert_allclose(lam, lam[::-1], atol=1e-12)
    assert np.all(np.diff(lam[:501]) >= -1e-12)


def test_restorative_velocity_examples():
    np.testing.assert_allclose(fc.restorative_velocity([0.0], [1.0], [1.5], 0.5, 16.0), [0.75], atol=1e-15)
    rng = np.random.default_rng(1)
    x0, x1, x1t = rng.normal(size=(3, 5, 3))
    np.testing.assert_array_equal(fc.restorative_velocity(x0, x1, x1, 0.4), fc.fm_velocity(x0, x1))
    np.testing.assert_array_equal(fc.restorative_velocity(x0, x1, x1t, 0.0), fc.fm_velocity(x0, x1))
    with pytest.raises(DimensionError):
        fc.restorative_velocity(x0, x1, x1t[:2], 0.3)


@given(vec8, vec8, unit, betas)
def test_rfm_subsumes_fm(x0, x1, t, beta):
    np.testing.assert_allclose(fc.restorative_velocity(x0, x1, x1, t, beta), fc.fm_velocity(x0, x1),
                               rtol=0, atol=1e-12)


@given(vec8, vec8, vec8, unit, betas)
def test_restoration_points_toward_clean_path(x0, x1, x1t, t, beta):
    corr = fc.restorative_velocity(x0, x1, x1t, t, beta) - fc.fm_velocity(x0, x1)
    gap = fc.interpolate(x0, x1, t) - fc.interpolate(x0, x1t, t)
    assert float(corr @ gap) >= -1e-9 * (1 + float(gap @ gap))


def test_decomposition_residual_examples():
    rng = np.random.default_rng(2)
    x0, x1, x1t = rng.normal(size=(3, 8))
    assert fc.decomposition_residual(x0, x1, x1t, 0.3) <= 1e-10
    assert fc.decomposition_residual(x0, x1, x1, 0.3) <= 1e-15
    # scalar: exact 0.5 vs 1 + (0.5 - 0.75)/0.5 = 0.5
    assert fc.decomposition_residual([0.0], [1.0], [1.5], 0.5) == pytest.approx(0.0, abs=1e-15)


@given(vec8, vec8, vec8, st.floats(0.0, 0.999 - 1e-9))
def test_one_step_exactness(x0, x1, x1t, t):
    xt_tilde = fc.interpolate(x0, x1t, t)
    landed = xt_tilde + (1 - t) * fc.exact_restorative_velocity(x1, xt_tilde, t)
    scale = 1 + np.max(np.abs([x0, x1, x1t]))
    np.testing.assert_allclose(landed, x1, rtol=0, atol=1e-12 * scale)


def test_sample_types_satisfy_invariants():
    rng = np.random.default_rng(3)
    x0, x1, x1t = rng.normal(size=(3, 6, 4))
    s = fc.FlowSample.build(x0, x1, 0.3)
    np.testing.assert_allclose(s.xt, 0.7 * x0 + 0.3 * x1)
    np.testing.assert_allclose(s.u, x1 - x0)
    p = fc.PerturbedFlowSample.build(s, x1t, beta=16.0)
    np.testing.assert_allclose(p.xt_tilde, 0.7 * x0 + 0.3 * x1t)
    np.testing.assert_allclose(p.u_tilde, fc.restorative_velocity(x0, x1, x1t, 0.3, 16.0), atol=1e-14)


def test_restoration_coefficient_kinds():
    assert fc.restoration_coefficient(0.5, kind="exact") == 2.0
    assert fc.restoration_coefficient(0.5, 16.0) == pytest.approx(1.0)
    with pytest.raises(SingularityError):
        fc.restoration_coefficient(0.9995, kind="exact")
    with pytest.raises(DomainError):
        fc.restoration_coefficient(0.5, kind="cubic")
