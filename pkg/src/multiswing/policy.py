"""Bang-bang exercise policies.

A :class:`DecisionPolicy` answers, for a date ``k``, a batch of states and the
cumulative volume of each path, whether to buy the upper admissible volume
``q_k^+(Q)`` (True) or the lower one ``q_k^-(Q)`` (False). The per-date work is
delegated to a *rule* that only sees the non-trivial levels ("tasks") of the
date; trivial levels have a single admissible control and bypass the rule.
"""

from __future__ import annotations

import numpy as np

from .volume import QGrid


class PolicyError(RuntimeError):
    """The policy has no decision for a visited (date, level)."""


class NetworkRule:
    """Decisions of a trained multitask network, evaluated with running statistics."""

    kind = "network"

    def __init__(self, net, features):
        self.net = net
        self.features = np.asarray(features, dtype=float)

    def decide(self, states, tasks):
        return self.net.decide(states, self.features, tasks)

    def decide_all(self, states):
        training = self.net.training
        self.net.eval()
        try:
            return self.net.logits(states, self.features, update=False) >= 0.0
        finally:
            self.net.training = training

    def soft(self, states):
        training = self.net.training
        self.net.eval()
        try:
            return self.net.forward_decisions(states, self.features, update=False)
        finally:
            self.net.training = training


class ConstantRule:
    """Always the upper (``upper=True``) or always the lower branch."""

    kind = "constant"

    def __init__(self, upper: bool, task_count: int):
        self.upper = bool(upper)
        self.task_count = task_count

    def decide(self, states, tasks):
        return np.full(len(tasks), self.upper)

    def decide_all(self, states):
        return np.full((len(states), self.task_count), self.upper)


class DecisionPolicy:
    """Per-date rules over a volume grid.

    ``rules[k]`` may be ``None`` on dates without any non-trivial level.
    """

    def __init__(self, grid: QGrid, rules):
        if len(rules) != grid.n_dates:
            raise ValueError(f"expected {grid.n_dates} date rules, got {len(rules)}")
        self.grid = grid
        self.rules = list(rules)
        self.task_index = []
        for k in range(grid.n_dates):
            idx = np.full(grid.size(k), -1)
            idx[~grid.trivial[k]] = np.arange(int((~grid.trivial[k]).sum()))
            self.task_index.append(idx)

    @property
    def n_dates(self) -> int:
        return self.grid.n_dates

    def _rule(self, k):
        rule = self.rules[k]
        if rule is None and (~self.grid.trivial[k]).any():
            raise PolicyError(f"no decision rule for date {k}")
        return rule

    def decide(self, k: int, states, Q) -> np.ndarray:
        """Upper-branch flags of shape (M,) for paths at cumulative volumes ``Q``."""
        states = np.asarray(states, dtype=float)
        Q = np.asarray(Q)
        tasks = self.task_index[k][self.grid.index(k, Q)]
        out = np.zeros(len(Q), dtype=bool)
        live = tasks >= 0
        if live.any():
            rule = self._rule(k)
            out[live] = rule.decide(states[live], tasks[live])
        return out

    def decide_all(self, k: int, states) -> np.ndarray:
        """Upper-branch flags of shape (M, I_k) for every level of date ``k``."""
        states = np.asarray(states, dtype=float)
        out = np.zeros((len(states), self.grid.size(k)), dtype=bool)
        live = ~self.grid.trivial[k]
        if live.any():
            out[:, live] = self._rule(k).decide_all(states)
        return out

    def controls(self, k: int, states, Q) -> np.ndarray:
        """Purchased volumes ``q_k^- + (q_k^+ - q_k^-) F`` of each path."""
        idx = self.grid.index(k, Q)
        up = self.decide(k, states, Q)
        return np.where(up, self.grid.q_plus[k][idx], self.grid.q_minus[k][idx])


class SpotThresholdRule:
    """Upper branch iff the spot exceeds ``strike``: the exact rule for a single date."""

    kind = "threshold"

    def __init__(self, model, k, strike, task_count):
        self.model, self.k, self.strike, self.task_count = model, k, strike, task_count

    def decide(self, states, tasks):
        return self.model.spot_price(self.k, states) > self.strike

    def decide_all(self, states):
        up = self.model.spot_price(self.k, states) > self.strike
        return np.repeat(up[:, None], self.task_count, axis=1)


def constant_policy(grid: QGrid, upper: bool) -> DecisionPolicy:
    rules = [ConstantRule(upper, int((~grid.trivial[k]).sum())) for k in range(grid.n_dates)]
    return DecisionPolicy(grid, rules)


def threshold_policy(grid: QGrid, model, strike) -> DecisionPolicy:
    rules = [SpotThresholdRule(model, k, strike, int((~grid.trivial[k]).sum())) for k in range(grid.n_dates)]
    return DecisionPolicy(grid, rules)
