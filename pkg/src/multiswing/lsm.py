"""Longstaff-Schwartz regression baseline.

Backward over dates, the pathwise continuation values ``v_{k+1}(s_{k+1}, Q)``
(realised with the decisions already fitted for later dates) are regressed on
basis functions of ``s_k``, one regression per target level. The upper branch
is taken when ``c_k(q^+) + C(Q + q^+) >= c_k(q^-) + C(Q + q^-)``.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.preprocessing import PolynomialFeatures
from sklearn.utils.validation import check_is_fitted

from .contracts import ContractSpec, immediate_reward
from .market import substream
from .policy import DecisionPolicy
from .trainer import backward_step, terminal_table
from .valuation import evaluate_policy
from .volume import QGrid

log = logging.getLogger(__name__)

LS_STREAM = 6


class RegressionBasis:
    """Polynomials of total degree <= ``degree`` in the factors, optionally the spot.

    Non-constant columns are standardised with the training moments; columns
    that are constant on the training set are dropped. ``degree=0`` without
    the spot is the constant basis.
    """

    def __init__(self, d, degree=2, include_spot=True):
        self.degree, self.include_spot = degree, include_spot
        self.poly = PolynomialFeatures(degree, include_bias=False).fit(np.zeros((1, d))) if degree > 0 else None

    def raw(self, states, spot):
        cols = []
        if self.poly is not None:
            cols.append(self.poly.transform(states))
        if self.include_spot:
            cols.append(np.asarray(spot)[:, None])
        return np.hstack(cols) if cols else np.empty((len(states), 0))

    def fit(self, states, spot):
        X = self.raw(states, spot)
        std = X.std(axis=0)
        self.keep = std > 1e-12 * np.maximum(1.0, np.abs(X.mean(axis=0)))
        self.mean, self.std = X.mean(axis=0)[self.keep], std[self.keep]
        return self

    def transform(self, states, spot):
        X = (self.raw(states, spot)[:, self.keep] - self.mean) / self.std
        return np.hstack([np.ones((X.shape[0], 1)), X])


def regress(X, Y, ridge=1e-8):
    """Least-squares coefficients of every column of ``Y`` on ``X``; ridge when rank-deficient."""
    p = X.shape[1]
    coef, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank < p:
        msg = f"rank-deficient regression ({rank} < {p}), falling back to ridge {ridge:g}"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        A = X.T @ X
        coef = np.linalg.solve(A + ridge * np.trace(A) / p * np.eye(p), X.T @ Y)
    return coef


class LSRule:
    """Date-``k`` decisions from regressed continuation values."""

    kind = "ls"

    def __init__(self, spec: ContractSpec, model, grid: QGrid, k, basis: RegressionBasis, coef):
        self.spec, self.model, self.k, self.basis, self.coef = spec, model, k, basis, coef
        live = ~grid.trivial[k]
        levels = grid.levels[k][live]
        self.q_plus, self.q_minus = grid.q_plus[k][live], grid.q_minus[k][live]
        self.col_plus = levels + self.q_plus - grid.lower[k + 1]
        self.col_minus = levels + self.q_minus - grid.lower[k + 1]

    def decide_all(self, states):
        spot = self.model.spot_price(self.k, states)
        C = self.basis.transform(states, spot) @ self.coef
        S = spot[:, None]
        up = immediate_reward(self.spec, S, self.q_plus) + C[:, self.col_plus]
        down = immediate_reward(self.spec, S, self.q_minus) + C[:, self.col_minus]
        return up >= down

    def decide(self, states, tasks):
        return self.decide_all(states)[np.arange(len(tasks)), tasks]


class LongstaffSchwartzPricer(BaseEstimator):
    """Regression-based swing pricer with the same policy interface as the network pricer."""

    def __init__(self, degree=2, include_spot=True, n_train_paths=100_000, ridge=1e-8, random_state=0):
        self.degree = degree
        self.include_spot = include_spot
        self.n_train_paths = n_train_paths
        self.ridge = ridge
        self.random_state = random_state

    def fit(self, model, contract: ContractSpec):
        grid = QGrid(contract.volume)
        n = grid.n_dates
        if n != model.n_dates:
            raise ValueError(f"contract has {n} dates, model {model.n_dates}")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        p = 1 + (PolynomialFeatures(self.degree).fit(np.zeros((1, model.d))).n_output_features_ - 1
                 if self.degree > 0 else 0) + int(self.include_spot)
        if self.n_train_paths < 10 * p:
            raise ValueError(f"n_train_paths must be >= 10 x basis size ({10 * p})")
        paths = model.sample_paths(substream(self.random_state, LS_STREAM), self.n_train_paths)
        V = terminal_table(contract, grid, model.spot_price(n, paths.at(n)))
        rules = [None] * n
        for k in range(n - 1, -1, -1):
            s = paths.at(k)
            S = model.spot_price(k, s)
            if (~grid.trivial[k]).any():
                basis = RegressionBasis(model.d, self.degree, self.include_spot).fit(s, S)
                coef = regress(basis.transform(s, S), V, self.ridge)
                rules[k] = LSRule(contract, model, grid, k, basis, coef)
            policy_k = DecisionPolicy(grid, [None] * k + rules[k:])
            V = backward_step(contract, grid, k, S, policy_k.decide_all(k, s), V)
        self.policy_ = DecisionPolicy(grid, rules)
        self.contract_ = contract
        self.in_sample_price_ = float(V[:, 0].mean())
        return self

    def decide(self, k, states, Q):
        check_is_fitted(self, "policy_")
        return self.policy_.decide(k, np.asarray(states, dtype=float), np.asarray(Q, dtype=np.int64))

    def price(self, model, n_paths=2_000_000, seed=0, chunk_size=65536):
        check_is_fitted(self, "policy_")
        return evaluate_policy(self.policy_, model, self.contract_, n_paths, seed, chunk_size)
