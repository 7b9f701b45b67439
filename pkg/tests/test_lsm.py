import numpy as np
import pytest
from sklearn.base import clone

from helpers import black_call
from multiswing.contracts import take_or_pay
from multiswing.lsm import LongstaffSchwartzPricer, RegressionBasis, regress
from multiswing.market import FactorModel, lambda_sq


def test_deterministic_limit_recovers_greedy_optimum():
    model = FactorModel.uniform([4.0], [1e-8], n_dates=30)
    spec = take_or_pay(19.0, 0, 1, 20, 25, 30)
    ls = LongstaffSchwartzPricer(n_train_paths=2000).fit(model, spec)
    assert ls.price(model, 5000).price == pytest.approx(25.0, abs=1e-2)


def test_single_date_matches_black():
    model = FactorModel(alpha=[4.0], sigma=[0.7], rho=[[1.0]], forward=[20.0, 20.0], time_grid=[1.0, 2.0])
    spec = take_or_pay(20.0, 0, 1, 0, 1, 1)
    ls = LongstaffSchwartzPricer(n_train_paths=20000).fit(model, spec)
    res = ls.price(model, 400_000, seed=4)
    assert abs(res.price - black_call(20.0, 20.0, lambda_sq(model, 0))) <= 2 * res.stderr


def test_nested_bases(one_factor, base_contract):
    const = LongstaffSchwartzPricer(degree=0, include_spot=False, n_train_paths=20000).fit(one_factor, base_contract)
    full = LongstaffSchwartzPricer(n_train_paths=20000).fit(one_factor, base_contract)
    a, b = const.price(one_factor, 100_000, seed=1), full.price(one_factor, 100_000, seed=1)
    joint = np.hypot(a.stderr, b.stderr)
    assert a.price <= b.price + 2 * joint
    assert b.price >= a.price - 3 * joint


def test_constant_basis_gives_state_independent_continuations(one_factor, base_contract):
    ls = LongstaffSchwartzPricer(degree=0, include_spot=False, n_train_paths=5000).fit(one_factor, base_contract)
    s = one_factor.sample_paths(1, 500, k_start=10).at(10)
    rule = ls.policy_.rules[10]
    C = rule.basis.transform(s, one_factor.spot_price(10, s)) @ rule.coef
    assert np.all(C == C[0])
    # only the immediate reward q (S - K) still depends on the state: a spot threshold per level
    order = np.argsort(one_factor.spot_price(10, s))
    flags = ls.policy_.decide_all(10, s)[order]
    assert np.all(np.diff(flags.astype(int), axis=0) >= 0)


def test_basis_drops_constant_columns_and_standardises():
    basis = RegressionBasis(2, degree=2).fit(np.zeros((10, 2)), np.full(10, 20.0))
    assert basis.transform(np.zeros((3, 2)), np.full(3, 20.0)).shape == (3, 1)
    rng = np.random.default_rng(0)
    s = rng.normal(size=(1000, 2))
    basis = RegressionBasis(2, degree=2).fit(s, np.exp(s[:, 0]))
    X = basis.transform(s, np.exp(s[:, 0]))
    assert X.shape == (1000, 1 + 5 + 1)
    np.testing.assert_allclose(X[:, 1:].mean(axis=0), 0, atol=1e-12)


def test_rank_deficient_regression_warns_and_uses_ridge():
    X = np.column_stack([np.ones(20), np.arange(20.0), 2 * np.arange(20.0)])
    y = np.arange(20.0)[:, None]
    with pytest.warns(RuntimeWarning, match="ridge"):
        coef = regress(X, y)
    np.testing.assert_allclose(X @ coef, y, atol=1e-4)


def test_validation(one_factor, base_contract):
    with pytest.raises(ValueError, match="basis size"):
        LongstaffSchwartzPricer(n_train_paths=20).fit(one_factor, base_contract)
    assert clone(LongstaffSchwartzPricer(degree=3)).degree == 3


def test_firm_constraints(three_factor, base_contract):
    ls = LongstaffSchwartzPricer(n_train_paths=5000).fit(three_factor, base_contract)
    res = ls.price(three_factor, 20000)
    assert 20 <= res.q_final_min <= res.q_final_max <= 25
