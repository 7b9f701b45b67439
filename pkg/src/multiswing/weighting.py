"""Task-weighting schemes for the multitask loss ``sum_i w_i L_i``.

* ``ew``   equal weights, ``w_i = 1``.
* ``uw``   weights drawn once from U(0, 1) and then held fixed.
* ``smag`` sigmoid-moving-average GradNorm: a task whose loss sits above its
  exponential moving average is learning slowly, and its weight is pushed so
  that its gradient norm at the last shared layer tracks
  ``mean_grad * r_i ** alpha``. Losses may be zero or negative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, log_expit, logsumexp

EW, UW, SMAG = "ew", "uw", "smag"
SCHEMES = (EW, UW, SMAG)


@dataclass(frozen=True)
class WeightState:
    scheme: str
    w: np.ndarray
    ema: np.ndarray | None = None
    last_loss: np.ndarray | None = None
    beta: float = 0.7
    alpha: float = 1.8
    weight_lr: float = 0.01
    floor: float = 1e-3
    t: int = 0

    @property
    def task_count(self) -> int:
        return self.w.size


def init_weights(scheme: str, task_count: int, seed=None, *, alpha=1.8, beta=0.7,
                 weight_lr=0.01, floor=1e-3) -> WeightState:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")
    if task_count < 1:
        raise ValueError("task_count must be >= 1")
    if scheme == UW:
        w = np.random.default_rng(seed).uniform(0.0, 1.0, task_count)
    else:
        w = np.ones(task_count)
    return WeightState(scheme, w, beta=beta, alpha=alpha, weight_lr=weight_lr, floor=floor)


def ema_update(state: WeightState, losses) -> WeightState:
    """Advance the loss EMA with the losses of the current iteration ``t``.

    ``ema^(0) = L^(0)`` and ``ema^(t) = beta ema^(t-1) + (1 - beta) L^(t-1)``:
    the average used at iteration t lags one loss behind.
    """
    losses = np.asarray(losses, dtype=float)
    if state.ema is None:
        ema = losses.copy()
    else:
        ema = state.beta * state.ema + (1.0 - state.beta) * state.last_loss
    return replace(state, ema=ema, last_loss=losses.copy())


def learning_speeds(state: WeightState, losses):
    """Inverse learning speeds ``sigmoid(L_i - ema_i)`` and their ratios to the mean.

    The ratios are formed in log space: when every loss sits far below its
    average the sigmoids underflow to 0 but their ratios stay well defined.
    """
    x = np.asarray(losses, dtype=float) - state.ema
    log_slow = log_expit(x)
    r = np.exp(log_slow - (logsumexp(log_slow) - np.log(x.size)))
    return expit(x), r


def project_weights(w, total, floor):
    """Rescale ``w`` to sum to ``total`` while keeping every entry >= ``floor``.

    Entries that would fall below the floor are pinned there and the others
    share the remaining mass proportionally.
    """
    w = np.maximum(np.asarray(w, dtype=float), floor)
    pinned = np.zeros(w.size, dtype=bool)
    for _ in range(w.size + 1):
        free = ~pinned
        mass = total - floor * pinned.sum()
        w = np.where(free, w * mass / w[free].sum(), floor)
        low = free & (w < floor)
        if not low.any():
            break
        pinned |= low
    return w


def smag_update(state: WeightState, grad_norms, r, mean_grad) -> WeightState:
    """One descent step on ``sum_i |G_i(w) - mean_grad * r_i ** alpha|``, then renormalise.

    The target is held constant; ``dG_i / dw_i = G_i / w_i`` since
    ``G_i = w_i ||grad_W L_i||``.
    """
    G = np.asarray(grad_norms, dtype=float)
    target = mean_grad * np.asarray(r, dtype=float) ** state.alpha
    w = state.w
    dG = G / np.where(w > 0, w, state.floor)
    step = np.sign(G - target) * dG
    w = project_weights(w - state.weight_lr * step, w.size, state.floor)
    return replace(state, w=w)


def update_weights(state: WeightState, losses, grad_norms=None):
    """Scheme update after an iteration; returns ``(new_state, diagnostics)``."""
    if state.scheme != SMAG:
        return replace(state, t=state.t + 1), {}
    state = ema_update(state, losses)
    slow, r = learning_speeds(state, losses)
    G = np.asarray(grad_norms, dtype=float)
    mean_grad = G.mean()
    state = smag_update(state, G, r, mean_grad)
    return replace(state, t=state.t + 1), {"r_mean": float(r.mean()), "grad_mean": float(mean_grad)}
