import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lemkit.numerics import (
    DegenerateFitError, fit_power_law, hadamard, loglog_slope, matmul, matvec, norm_1, norm_inf,
    saturating_bias, seeded_uniform, sigma_hat, sigma_hat_inverse, sigma_hat_prime,
)


def test_sigma_hat_matches_logistic():
    x = np.linspace(-30, 30, 101)
    # the tanh form is accurate in absolute, not relative, terms deep in the lower tail
    assert np.allclose(sigma_hat(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-14, atol=1e-16)
    assert sigma_hat(0.0) == 0.5


def test_sigma_hat_prime_matches_difference():
    x = np.linspace(-4, 4, 17)
    h = 1e-6
    fd = (sigma_hat(x + h) - sigma_hat(x - h)) / (2 * h)
    assert np.allclose(sigma_hat_prime(x), fd, atol=1e-9)


@given(st.floats(min_value=1e-6, max_value=1 - 1e-6))
def test_inverse_round_trip(tau):
    assert sigma_hat(sigma_hat_inverse(tau)) == pytest.approx(tau, rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
def test_inverse_rejects_outside_open_interval(tau):
    with pytest.raises(ValueError):
        sigma_hat_inverse(tau)


def test_saturating_bias():
    b = saturating_bias(1e-9)
    assert abs(1.0 - sigma_hat(b)) <= 1e-9 * 1.01
    with pytest.raises(ValueError):
        saturating_bias(0.0)


def test_shape_checks():
    with pytest.raises(ValueError):
        matvec(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        hadamard(np.ones(3), np.ones(4))
    assert np.array_equal(matvec(np.eye(2), [1.0, 2.0]), [1.0, 2.0])


def test_norms():
    a = np.array([[1.0, -2.0], [3.0, 0.5]])
    assert norm_inf(a) == 3.5
    assert norm_1(a) == 4.0
    assert norm_inf(np.array([-4.0, 1.0])) == 4.0


def test_seeded_uniform_deterministic():
    a = seeded_uniform(-1, 1, (3, 2), 5)
    assert np.array_equal(a, seeded_uniform(-1, 1, (3, 2), 5))
    assert np.all((a >= -1) & (a < 1))
    with pytest.raises(ValueError):
        seeded_uniform(1, 1, 3, 0)


def test_loglog_slope_exact_power():
    x = np.array([1e-3, 1e-2, 1e-1])
    assert loglog_slope(x, 3 * x ** 1.5) == pytest.approx(1.5)


@settings(deadline=None, max_examples=10)
@given(st.floats(min_value=0.3, max_value=2.5))
def test_power_law_fit_recovers_exponent(k):
    # inverse-CDF sampling of p(a) ~ a^-k on [1, 100]
    u = np.random.default_rng(0).uniform(size=200_000)
    lo, hi = 1.0, 100.0
    if abs(k - 1) < 1e-9:
        a = lo * (hi / lo) ** u
    else:
        e = 1 - k
        a = (lo ** e + u * (hi ** e - lo ** e)) ** (1 / e)
    assert fit_power_law(a, n_bins=15) == pytest.approx(k, abs=0.1)


def test_power_law_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_power_law(np.full(10, 0.3))
