"""Forward Monte Carlo valuation of a bang-bang policy."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .contracts import ContractSpec, immediate_reward, terminal_value
from .market import substream
from .policy import DecisionPolicy

VALUATION_STREAM = 2
Z_95 = 1.96


@dataclass(frozen=True)
class ValuationResult:
    price: float
    stderr: float
    ci_low: float
    ci_high: float
    n_paths: int
    seed: int | None
    q_final_min: int = 0
    q_final_max: int = 0
    wall_time: float = 0.0


def policy_cashflows(policy: DecisionPolicy, model, spec: ContractSpec, paths):
    """Pathwise total cash flow and final cumulative volume for paths starting at date 0."""
    if paths.k_start != 0:
        raise ValueError("valuation paths must start at date 0")
    grid = policy.grid
    M = paths.n_paths
    Q = np.zeros(M, dtype=np.int64)
    cash = np.zeros(M)
    for k in range(grid.n_dates):
        s = paths.at(k)
        q = policy.controls(k, s, Q)
        cash += immediate_reward(spec, model.spot_price(k, s), q)
        Q += q
    n = grid.n_dates
    cash += terminal_value(spec, model.spot_price(n, paths.at(n)), Q)
    return cash, Q


def summarize(payoffs, seed=None, **extra) -> ValuationResult:
    """Price, standard error and 95% interval of i.i.d. payoffs (order-independent sums)."""
    x = np.asarray(payoffs, dtype=float)
    M = x.size
    mean = math.fsum(x) / M
    var = math.fsum((x - mean) ** 2) / (M - 1) if M > 1 else 0.0
    se = math.sqrt(var / M)
    return ValuationResult(mean, se, mean - Z_95 * se, mean + Z_95 * se, M, seed, **extra)


def evaluate_policy(policy: DecisionPolicy, model, spec: ContractSpec, n_paths: int,
                    seed=0, chunk_size: int = 65536) -> ValuationResult:
    """Estimate the contract price under ``policy`` on ``n_paths`` fresh paths."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    start = time.perf_counter()
    stream = substream(seed, VALUATION_STREAM)
    payoffs = np.empty(n_paths)
    q_min, q_max = None, None
    for offset in range(0, n_paths, chunk_size):
        m = min(chunk_size, n_paths - offset)
        paths = model.sample_paths(stream, m, 0, offset)
        cash, Q = policy_cashflows(policy, model, spec, paths)
        payoffs[offset:offset + m] = cash
        q_min = Q.min() if q_min is None else min(q_min, Q.min())
        q_max = Q.max() if q_max is None else max(q_max, Q.max())
    return summarize(payoffs, seed if isinstance(seed, (int, np.integer)) else None,
                     q_final_min=int(q_min), q_final_max=int(q_max),
                     wall_time=time.perf_counter() - start)
