import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiswing.market import (
    ONE_FACTOR, THREE_FACTOR, FactorModel, ModelError, TrinomialFactorModel, lambda_sq,
    marginal_covariance, psd_factor, spot_price, transition,
)


def test_marginal_covariance_closed_form(one_factor):
    assert np.all(marginal_covariance(one_factor, 0) == 0.0)
    assert marginal_covariance(one_factor, 30)[0, 0] == pytest.approx((1 - math.exp(-8)) / 8, rel=1e-12)
    assert marginal_covariance(one_factor, 30)[0, 0] == pytest.approx(0.1249581, abs=1e-7)


def test_uncorrelated_factors_have_zero_cross_covariance():
    m = FactorModel.uniform([1.0, 2.0], [0.3, 0.4], 0.0, n_dates=4)
    assert marginal_covariance(m, 3)[0, 1] == 0.0


def test_transition_values(one_factor):
    decay, _ = transition(one_factor, 0)
    assert decay[0] == pytest.approx(math.exp(-2 / 15), rel=1e-12)
    assert decay[0] == pytest.approx(0.875173, abs=1e-6)
    far = FactorModel.uniform([4.0], [0.7], maturity=10.0, n_dates=1)
    decay, cov = transition(far, 0)
    assert decay[0] < 1e-15
    assert cov[0, 0] == pytest.approx(1 / 8, rel=1e-12)


def test_lambda_sq_examples(one_factor, three_factor):
    assert lambda_sq(one_factor, 0) == 0.0
    assert lambda_sq(one_factor, 30) == pytest.approx(0.49 / 8 * (1 - math.exp(-8)), rel=1e-12)
    assert lambda_sq(one_factor, 30) == pytest.approx(0.0612294, abs=1e-7)
    rho = np.array(THREE_FACTOR["rho"])
    expected = rho.sum() * 0.0625 / 6 * (1 - math.exp(-6))
    assert lambda_sq(three_factor, 30) == pytest.approx(expected, rel=1e-12)


def test_spot_price_examples(one_factor):
    assert spot_price(one_factor, 0, np.zeros(1)) == pytest.approx(20.0)
    v = lambda_sq(one_factor, 12)
    assert spot_price(one_factor, 12, np.zeros(1)) == pytest.approx(20 * math.exp(-v / 2))


@settings(max_examples=40, deadline=None)
@given(
    d=st.integers(1, 3),
    alpha=st.floats(0.1, 10.0),
    sigma=st.floats(0.0, 2.0),
    corr=st.floats(-0.45, 0.95),
    maturity=st.floats(0.05, 5.0),
    n=st.integers(1, 12),
)
def test_transition_consistency(d, alpha, sigma, corr, maturity, n):
    alphas = alpha * np.linspace(1.0, 2.0, d)
    m = FactorModel.uniform(alphas, [sigma] * d, corr, maturity=maturity, n_dates=n)
    for k in range(n):
        decay, cov = transition(m, k)
        composed = decay[:, None] * marginal_covariance(m, k) * decay[None, :] + cov
        np.testing.assert_allclose(composed, marginal_covariance(m, k + 1), rtol=0, atol=1e-12)
        assert lambda_sq(m, k) >= 0


def test_zero_volatility_gives_deterministic_spot():
    # the factors are volatility-free integrals; sigma = 0 removes their effect on the spot
    m = FactorModel.uniform([4.0, 1.0], [0.0, 0.0], 0.2, n_dates=5)
    p = m.sample_paths(3, 100)
    for k in range(6):
        np.testing.assert_array_equal(m.spot_price(k, p.at(k)), 20.0)


def test_determinism_and_block_independence(three_factor):
    a = three_factor.sample_paths(7, 3000)
    b = three_factor.sample_paths(7, 3000)
    assert a.values.tobytes() == b.values.tobytes()
    # path m does not depend on M nor on how the batch is split
    c = three_factor.sample_paths(7, 5000)
    np.testing.assert_array_equal(a.values, c.values[:3000])
    d = three_factor.sample_paths(7, 1000, offset=1500)
    np.testing.assert_array_equal(d.values, c.values[1500:2500])


def test_k_start_marginal(one_factor):
    p = one_factor.sample_paths(11, 100_000, k_start=15)
    assert p.values.shape == (100_000, 16, 1)
    x = p.at(30)[:, 0]
    target = marginal_covariance(one_factor, 30)[0, 0]
    se = target * math.sqrt(2 / (x.size - 1))
    assert abs(x.var(ddof=1) - target) <= 3 * se


def test_s0_is_deterministic_at_t0_zero(one_factor):
    assert np.all(one_factor.sample_paths(1, 10).at(0) == 0.0)


def test_invalid_models_rejected():
    with pytest.raises(ModelError):
        FactorModel.uniform([4.0, 4.0], [0.5, 0.5], [[1.0, 1.5], [1.5, 1.0]])
    with pytest.raises((ModelError, ValueError)):
        FactorModel.uniform([-1.0], [0.5])
    with pytest.raises((ModelError, ValueError)):
        FactorModel([4.0], [0.5], [[1.0]], [20.0, 20.0], [0.0, 0.0])


def test_psd_fallback_for_singular_correlation():
    rho = np.ones((3, 3))
    L = psd_factor(rho)
    np.testing.assert_allclose(L @ L.T, rho, atol=1e-10)
    m = FactorModel.uniform([3.0] * 3, [0.25] * 3, 1.0, n_dates=3)
    assert np.isfinite(m.sample_paths(0, 10).values).all()


def test_serialisation_round_trip(three_factor):
    m2 = FactorModel.from_dict(three_factor.to_dict())
    np.testing.assert_array_equal(m2.time_grid, three_factor.time_grid)
    np.testing.assert_array_equal(m2.rho, three_factor.rho)


def test_trinomial_matches_gaussian_moments():
    g = FactorModel.uniform(**ONE_FACTOR, n_dates=4)
    tri = TrinomialFactorModel(g)
    values, probs = tri.enumerate_paths()
    assert values.shape == (81, 5, 1)
    assert probs.sum() == pytest.approx(1.0)
    for k in range(5):
        x = values[:, k, 0]
        assert probs @ x == pytest.approx(0.0, abs=1e-14)
        assert probs @ x**2 == pytest.approx(marginal_covariance(g, k)[0, 0], rel=1e-12)
