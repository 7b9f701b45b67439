"""Independent oracles shared by the tests."""

import itertools
import math

import numpy as np
from scipy.stats import norm

from multiswing.contracts import immediate_reward, terminal_value
from multiswing.nn import MultitaskNet, task_features
from multiswing.volume import VolumeConstraints


def black_call(F, K, variance):
    """``E[(S - K)^+]`` for ``S = F exp(X - v/2)``, ``X ~ N(0, v)``."""
    if variance == 0:
        return max(F - K, 0.0)
    sd = math.sqrt(variance)
    d1 = (math.log(F / K) + variance / 2) / sd
    return F * norm.cdf(d1) - K * norm.cdf(d1 - sd)


def deterministic_dp(spec, grid, spots):
    """Optimal values ``V_k(Q)`` when the spot path ``spots[0..n]`` is known in advance."""
    n = grid.n_dates
    V = [None] * (n + 1)
    V[n] = terminal_value(spec, spots[n], grid.levels[n]).astype(float)
    for k in range(n - 1, -1, -1):
        Q = grid.levels[k]
        best = np.full(Q.size, -np.inf)
        for q in range(spec.volume.q_min, spec.volume.q_max + 1):
            ok = (q >= grid.q_minus[k]) & (q <= grid.q_plus[k])
            nxt = np.clip(Q + q - grid.lower[k + 1], 0, grid.size(k + 1) - 1)
            val = immediate_reward(spec, spots[k], q) + V[k + 1][nxt]
            best = np.where(ok, np.maximum(best, val), best)
        V[k] = best
    return V


def tree_dp(spec, grid, tree):
    """Exact optimal value on a non-recombining trinomial tree by backward induction."""
    n = grid.n_dates
    values, _ = tree.enumerate_paths()
    p = tree.probabilities

    def node_value(k, prefix):
        # prefix: tuple of move indices so far; value per level of date k
        idx = _path_index(prefix, n)
        s = values[idx, k]
        S = float(tree.spot_price(k, s[None])[0])
        if k == n:
            return terminal_value(spec, S, grid.levels[n]).astype(float)
        cont = sum(p[j] * node_value(k + 1, prefix + (j,)) for j in range(3))
        out = np.empty(grid.size(k))
        for i, Q in enumerate(grid.levels[k]):
            out[i] = max(immediate_reward(spec, S, q) + cont[Q + q - grid.lower[k + 1]]
                         for q in range(grid.q_minus[k][i], grid.q_plus[k][i] + 1))
        return out

    return float(node_value(0, ())[0])


def _path_index(prefix, n):
    # enumerate_paths orders move tuples lexicographically (C order over n axes)
    full = list(prefix) + [0] * (n - len(prefix))
    idx = 0
    for j in full:
        idx = idx * 3 + j
    return idx


class RandomRule:
    """Pseudo-random but state-determined decisions, for constraint checks."""

    kind = "random"

    def __init__(self, task_count, salt):
        self.task_count, self.salt = task_count, salt

    def decide_all(self, states):
        x = np.sin(states.sum(axis=1)[:, None] * 1e3 + np.arange(self.task_count) * 7.1 + self.salt)
        return x > 0

    def decide(self, states, tasks):
        return self.decide_all(states)[np.arange(len(tasks)), tasks]


# ------------------------------------------------------------ gradient oracle
STEP = 1e-4


def random_problem(seed, d=2, tasks=3, hidden=(5, 5), M=16):
    rng = np.random.default_rng(seed)
    net = MultitaskNet(d, tasks, hidden=hidden, seed=seed)
    for name in net.params:
        net.params[name] = net.params[name] + 0.3 * rng.standard_normal(net.params[name].shape)
    x = rng.standard_normal((M, d))
    Z = task_features(rng.uniform(-1, 1, tasks))
    pp, pm = rng.standard_normal((M, tasks)), rng.standard_normal((M, tasks))
    w = rng.uniform(0.5, 2.0, tasks)
    return net, x, Z, pp, pm, w


def finite_difference(net, objective):
    out = {}
    for name, p in net.params.items():
        fd = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + STEP
            hi = objective()
            p[idx] = old - STEP
            lo = objective()
            p[idx] = old
            fd[idx] = (hi - lo) / (2 * STEP)
        out[name] = fd
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def max_gradient_error(seed):
    net, x, Z, pp, pm, w = random_problem(seed)
    _, grads, _ = net.loss_and_gradients(x, Z, pp, pm, w, update=False)
    fd = finite_difference(net, lambda: w @ net.loss_and_gradients(x, Z, pp, pm, w, update=False)[0])
    return max(rel_err(fd[n], grads[n]) for n in grads)


# ---------------------------------------------------------------- grid oracle
def brute_force(c: VolumeConstraints):
    """Attainable levels and used controls per (k, Q), from every feasible control sequence."""
    seqs = np.array(list(itertools.product(range(c.q_min, c.q_max + 1), repeat=c.n_dates)), dtype=np.int64)
    seqs = seqs.reshape(-1, c.n_dates)
    total = seqs.sum(axis=1)
    seqs = seqs[(total >= c.Q_min) & (total <= c.Q_max)]
    cum = np.concatenate([np.zeros((len(seqs), 1), dtype=np.int64), np.cumsum(seqs, axis=1)], axis=1)
    levels = [set(np.unique(cum[:, k]).tolist()) for k in range(c.n_dates + 1)]
    controls = {}
    for k in range(c.n_dates):
        pairs = np.unique(np.stack([cum[:, k], seqs[:, k]], axis=1), axis=0)
        for Q, q in pairs:
            controls.setdefault((k, int(Q)), set()).add(int(q))
    return levels, controls
