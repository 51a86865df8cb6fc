import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from ecmid import warburg
from ecmid.exceptions import DegenerateOrderError, MatrixLogError
from ecmid.warburg import WarburgRealization

from . import oracles

TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


@pytest.fixture(scope="module")
def fitted():
    return warburg.default_realization(7, 10000)


@pytest.fixture(scope="module")
def printed():
    return warburg.paper_realization()


def test_fractional_impulse_matches_closed_form():
    for alpha in (0.1, 0.5, 0.77, 1.0):
        np.testing.assert_allclose(warburg.fractional_impulse(alpha, 0.3, 500),
                                   oracles.fractional_impulse(alpha, 0.3, 500), rtol=1e-12)


def test_alpha_one_is_integrator():
    h = warburg.fractional_impulse(1.0, 1.0, 50)
    assert h[0] == 0.0
    np.testing.assert_allclose(h[1:], 1.0, rtol=1e-15)


def test_first_sample_of_semi_integrator():
    h = warburg.fractional_impulse(0.5, 1.0, 3)
    assert h[0] == 0.0
    assert h[1] == pytest.approx(TWO_OVER_SQRT_PI, rel=1e-15)
    assert round(h[1], 4) == 1.1284  # printed coefficient


@pytest.mark.parametrize("alpha", [0.0, -0.5, 1.5])
def test_alpha_out_of_range(alpha):
    with pytest.raises(ValueError):
        warburg.fractional_impulse(alpha, 1.0, 10)


@given(st.floats(0.01, 1.0), st.integers(1, 3000), st.floats(1e-3, 10.0))
def test_telescoping_mass(alpha, k, ts):
    h = warburg.fractional_impulse(alpha, ts, k)
    exact = ts**alpha * k**alpha / (alpha * math.gamma(alpha))
    assert math.fsum(h) == pytest.approx(exact, rel=1e-12)


def test_warburg_impulse_values():
    w = warburg.warburg_impulse(1.0, 1.0, 2)
    assert w[0] == 0.0
    assert round(w[1], 4) == 1.1284
    assert w[2] == pytest.approx(TWO_OVER_SQRT_PI * (math.sqrt(2) - 1), rel=1e-14)
    assert w[2] == pytest.approx(0.46737, abs=5e-5)
    np.testing.assert_allclose(warburg.warburg_impulse(0.0047, 0.008, 40),
                               0.0047 * math.sqrt(0.008) * oracles.fractional_impulse(0.5, 1, 40))
    with pytest.raises(ValueError):
        warburg.warburg_impulse(0.0, 1.0, 4)


A2 = np.array([[0.9, 0.2], [-0.1, 0.7]])
B2 = np.array([1.0, 0.5])
C2 = np.array([0.3, -1.2])


@pytest.mark.parametrize("k_max", [200, 2000])  # dense SVD and Lanczos paths
def test_ho_kalman_reproduces_order2_system(k_max):
    g = oracles.markov(A2, B2, C2, k_max)
    r = warburg.ho_kalman(g, 2)
    np.testing.assert_allclose(warburg.realization_impulse(r, k_max), g, rtol=0, atol=1e-10)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(r.a)), np.sort(np.linalg.eigvals(A2)),
                               atol=1e-10)


def test_ho_kalman_degenerate_order():
    g = oracles.markov(np.array([[0.5]]), [1.0], [1.0], 100)
    with pytest.raises(DegenerateOrderError):
        warburg.ho_kalman(g, 3)


def test_ho_kalman_needs_enough_samples():
    with pytest.raises(ValueError):
        warburg.ho_kalman(np.ones(9), 2)
    with pytest.raises(ValueError):
        warburg.ho_kalman(np.ones(100), 2, hankel_size=80)


def test_warburg_order7_error(fitted):
    g = warburg.fractional_impulse(0.5, 1.0, 10000)
    e = warburg.relative_error(g, warburg.realization_impulse(fitted, 10000))
    assert e <= 0.5
    assert e == pytest.approx(0.45, abs=0.1)
    assert fitted.spectral_radius < 1.0


def test_realization_is_sign_symmetric(fitted, printed):
    np.testing.assert_allclose(fitted.b, fitted.c, atol=1e-10)
    np.testing.assert_allclose(printed.b, printed.c, atol=5e-6)
    assert fitted.b[0] == pytest.approx(0.19414, abs=5e-6)


def test_ho_kalman_is_a_projection(fitted):
    w_hat = warburg.realization_impulse(fitted, 2000)
    again = warburg.ho_kalman(w_hat, 7)
    np.testing.assert_allclose(warburg.realization_impulse(again, 2000), w_hat, rtol=0, atol=1e-9)


def test_error_decreases_with_order():
    g = warburg.fractional_impulse(0.5, 1.0, 10000)
    errs = [warburg.relative_error(g, warburg.realization_impulse(warburg.ho_kalman(g, n), 10000))
            for n in range(3, 10)]
    assert all(b < a for a, b in zip(errs, errs[1:])), errs


def test_realization_impulse_definition(fitted):
    assert list(warburg.realization_impulse(fitted, 0)) == [0.0]
    w = warburg.realization_impulse(fitted, 30)
    assert w[0] == 0.0
    assert w[1] == pytest.approx(fitted.c @ fitted.b, rel=1e-14)
    np.testing.assert_allclose(w, oracles.markov(fitted.a, fitted.b, fitted.c, 30), rtol=1e-12,
                               atol=1e-15)


def test_printed_first_markov_parameter(printed):
    w = warburg.realization_impulse(printed, 1)
    assert w[1] == pytest.approx(TWO_OVER_SQRT_PI, abs=1e-3)


def test_relative_error_examples():
    w = np.array([1.0, 2.0, -3.0])
    assert warburg.relative_error(w, w) == 0.0
    assert warburg.relative_error([1.0, 0.0], [0.0, 0.0]) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        warburg.relative_error([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        warburg.relative_error([1.0], [1.0, 2.0])


def test_scalar_log():
    r = WarburgRealization(np.array([[math.exp(-1.0)]]), [1.0], [1.0])
    cr = warburg.to_continuous(r, 1.0)
    assert cr.a_bar[0, 0] == pytest.approx(-1.0, rel=1e-14)


def test_log_branch_violation():
    r = WarburgRealization(np.array([[-0.5]]), [1.0], [1.0])
    with pytest.raises(MatrixLogError):
        warburg.to_continuous(r, 1.0)


@pytest.mark.parametrize("which", ["fitted", "printed"])
def test_continuous_conversion_inverts_zoh(which, request):
    r = request.getfixturevalue(which)
    cr = warburg.to_continuous(r, 1.0)
    a_d, b_d = oracles.zoh(cr.a_bar, cr.b_bar, 1.0)
    assert np.linalg.norm(a_d - r.a) / np.linalg.norm(r.a) < 1e-8
    np.testing.assert_allclose(b_d, r.b, atol=1e-8)
    assert np.all(np.linalg.eigvals(cr.a_bar).real < 0)
    np.testing.assert_allclose(cr.b_bar, -np.linalg.solve(np.eye(7) - r.a, cr.a_bar @ r.b))


def test_printed_a_bar_entry(printed):
    cr = warburg.to_continuous(printed, 1.0)
    assert cr.a_bar[0, 0] == pytest.approx(-0.3835e-3, rel=0.01)


def test_continuous_scales_with_ts(fitted):
    c1 = warburg.to_continuous(fitted, 1.0)
    c2 = warburg.to_continuous(fitted, 0.008)
    np.testing.assert_allclose(c2.a_bar, c1.a_bar / 0.008, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(c2.b_bar, c1.b_bar / 0.008, rtol=1e-10)
    back = warburg.to_discrete(c2, 0.008)
    np.testing.assert_allclose(back.a, fitted.a, atol=1e-10)


def test_freq_response_matches_resolvent(fitted):
    for om in (1e-3, 0.3, np.pi):
        z = np.exp(1j * om)
        ref = fitted.c @ np.linalg.solve(z * np.eye(7) - fitted.a, fitted.b)
        assert warburg.freq_response(fitted, [om])[0] == pytest.approx(ref, rel=1e-9)
    with pytest.raises(ValueError):
        warburg.freq_response(fitted, [0.0])


def test_freq_response_near_ideal_at_one_percent(fitted):
    om = 0.01 * np.pi
    h = warburg.freq_response(fitted, [om])[0]
    ideal = warburg.warburg_reference([om])[0]
    assert abs(20 * np.log10(abs(h) / abs(ideal))) < 0.5
    assert abs(np.degrees(np.angle(h)) + 45.0) < 2.0


def test_freq_response_finite_at_nyquist(fitted):
    assert np.isfinite(warburg.freq_response(fitted, [np.pi])[0])


def test_ideal_reference_slope_and_phase():
    om = np.array([1e-3, 1e-2, 1e-1])
    ref = warburg.warburg_reference(om)
    np.testing.assert_allclose(np.diff(20 * np.log10(np.abs(ref))), -10.0, rtol=1e-12)
    np.testing.assert_allclose(np.degrees(np.angle(ref)), -45.0, rtol=1e-12)


def test_bode_table(fitted):
    om = np.array([0.01, 0.1, 1.0])
    t = warburg.bode_table(fitted, om)
    assert t.shape == (3, 5)
    np.testing.assert_array_equal(t[:, 0], om)
    h = warburg.freq_response(fitted, om)
    np.testing.assert_allclose(t[:, 1], 20 * np.log10(np.abs(h)))


def test_continuous_response_tracks_discrete_at_low_frequency(fitted):
    cr = warburg.to_continuous(fitted, 1.0)
    om = 1e-3
    hc = warburg.continuous_freq_response(cr, [om])[0]
    hd = warburg.freq_response(fitted, [om])[0]
    assert abs(hc / hd - 1) < 1e-3


def test_realization_round_trips_through_dict(printed):
    again = WarburgRealization.from_dict(printed.to_dict())
    np.testing.assert_array_equal(again.a, printed.a)
    with pytest.raises(ValueError):
        WarburgRealization(np.zeros((2, 3)), [1, 1], [1, 1])


def test_realization_is_immutable(fitted):
    with pytest.raises(ValueError):
        fitted.a[0, 0] = 1.0
    assert scipy.linalg.norm(fitted.a) > 0
