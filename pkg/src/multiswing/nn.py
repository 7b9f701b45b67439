"""Multitask decision network with hand-written reverse-mode gradients.

Architecture (hard parameter sharing)::

    s -> BatchNorm -> [Linear -> BatchNorm -> ReLU] x L -> heads

Each head ``i`` is an affine map to R^p. Its output ``chi_i`` is combined
with the task feature ``Z_i`` and squashed, ``f_i = sigmoid(<chi_i, Z_i>)``.
Multitask nets use p = 2 and ``Z_i = (m(Q_i), 1)``; the scalar date-0 net
uses a single hidden layer, p = 1 and ``Z = (1,)``.

The input normalisation has no affine part and the trunk linear layers carry
no bias: in both places the following batch norm cancels any shift, so those
parameters would have an identically zero gradient in training mode.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

CHECKPOINT_VERSION = 1

_F_LO = np.finfo(float).tiny
_F_HI = 1.0 - np.finfo(float).epsneg


def task_features(capacity) -> np.ndarray:
    """Task features ``Z_i = (m_i, 1)`` from remaining capacities ``m_i``."""
    m = np.asarray(capacity, dtype=float).reshape(-1)
    return np.column_stack([m, np.ones_like(m)])


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {where}")
    return x


class MultitaskNet:
    """Shared trunk plus one affine head per task.

    Parameters
    ----------
    input_dim : int
        State dimension d.
    task_count : int
        Number of heads I.
    hidden : tuple of int
        Widths of the shared hidden layers.
    head_dim : int
        Output dimension p of each head.
    momentum, eps : float
        Batch-norm running-statistics momentum and variance offset.
    seed : int or SeedSequence, optional
        Initialisation seed.
    """

    def __init__(self, input_dim, task_count, hidden=(50, 50), head_dim=2,
                 momentum=0.1, eps=1e-5, seed=None):
        if task_count < 1:
            raise ValueError("a network needs at least one task head")
        self.input_dim = int(input_dim)
        self.task_count = int(task_count)
        self.hidden = tuple(int(h) for h in hidden)
        self.head_dim = int(head_dim)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.training = True
        rng = np.random.default_rng(seed)

        d = self.input_dim
        self.params = {}
        self.buffers = {"input.mean": np.zeros(d), "input.var": np.ones(d)}
        fan_in = d
        for l, width in enumerate(self.hidden, start=1):
            bound = np.sqrt(6.0 / fan_in)
            self.params[f"layer{l}.weight"] = rng.uniform(-bound, bound, (fan_in, width))
            self.params[f"layer{l}.gamma"] = np.ones(width)
            self.params[f"layer{l}.beta"] = np.zeros(width)
            self.buffers[f"layer{l}.mean"] = np.zeros(width)
            self.buffers[f"layer{l}.var"] = np.ones(width)
            fan_in = width
        # zero heads start every decision at 0.5; random heads scaled by m(Q)
        # can start saturated, where the sigmoid gradient vanishes
        self.params["heads.weight"] = np.zeros((self.task_count, self.head_dim, fan_in))
        self.params["heads.bias"] = np.zeros((self.task_count, self.head_dim))

    @classmethod
    def scalar(cls, input_dim, width=50, seed=None, **kwargs):
        """Single-output feed-forward net with one hidden layer (first exercise date)."""
        return cls(input_dim, 1, hidden=(width,), head_dim=1, seed=seed, **kwargs)

    @property
    def last_shared(self) -> str:
        return f"layer{len(self.hidden)}.weight"

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # ------------------------------------------------------------------ forward
    def _bn(self, x, name, train, update):
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch statistics need at least 2 samples in training mode")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if update:
                m = self.momentum
                n = x.shape[0]
                self.buffers[f"{name}.mean"] = (1 - m) * self.buffers[f"{name}.mean"] + m * mu
                self.buffers[f"{name}.var"] = (1 - m) * self.buffers[f"{name}.var"] + m * var * n / (n - 1)
        else:
            mu = self.buffers[f"{name}.mean"]
            var = self.buffers[f"{name}.var"]
        std = np.sqrt(var + self.eps)
        xhat = (x - mu) / std
        if name == "input":
            return xhat, xhat, std
        return self.params[f"{name}.gamma"] * xhat + self.params[f"{name}.beta"], xhat, std

    def _folded(self):
        """Eval-mode trunk as (weight, bias) pairs with the normalisations folded in."""
        std = np.sqrt(self.buffers["input.var"] + self.eps)
        mu = self.buffers["input.mean"]
        out = []
        for l in range(1, len(self.hidden) + 1):
            W = self.params[f"layer{l}.weight"]
            scale = self.params[f"layer{l}.gamma"] / np.sqrt(self.buffers[f"layer{l}.var"] + self.eps)
            Wf = (W / std[:, None]) * scale
            b = (-(mu / std) @ W - self.buffers[f"layer{l}.mean"]) * scale + self.params[f"layer{l}.beta"]
            out.append((Wf, b))
            std, mu = np.ones(W.shape[1]), np.zeros(W.shape[1])
        return out

    def _eval_trunk(self, x):
        y = x
        for Wf, b in self._folded():
            y = y @ Wf
            y += b
            np.maximum(y, 0.0, out=y)
        return _check_finite(y, "trunk")

    def _trunk(self, x, train, update):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected states of shape (M, {self.input_dim}), got {x.shape}")
        if not train and not update:
            return self._eval_trunk(x), None
        y, xhat, std = self._bn(x, "input", train, update)
        cache = [("input", y, xhat, std, None)]
        for l in range(1, len(self.hidden) + 1):
            z = y @ self.params[f"layer{l}.weight"]
            a, zhat, zstd = self._bn(z, f"layer{l}", train, update)
            h = np.maximum(a, 0.0)
            cache.append((f"layer{l}", h, zhat, zstd, a > 0))
            y = _check_finite(h, f"layer{l}")
        return y, cache

    def _head_maps(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.shape != (self.task_count, self.head_dim):
            raise ValueError(f"expected task features of shape {(self.task_count, self.head_dim)}, got {Z.shape}")
        U = np.einsum("ip,iph->ih", Z, self.params["heads.weight"])
        c = (Z * self.params["heads.bias"]).sum(axis=1)
        return U, c

    def logits(self, states, Z, update=True):
        h, _ = self._trunk(states, self.training, update and self.training)
        U, c = self._head_maps(Z)
        return _check_finite(h @ U.T + c, "heads")

    def forward_decisions(self, states, Z, update=True):
        """Soft decisions ``f`` of shape (M, I), strictly inside (0, 1).

        Training mode normalises with batch statistics (and updates the
        running statistics unless ``update=False``); evaluation mode uses the
        running statistics and has no side effects.
        """
        return np.clip(expit(self.logits(states, Z, update)), _F_LO, _F_HI)

    def decide(self, states, Z, tasks):
        """Bang-bang decision ``f_{task_m}(s_m) >= 1/2`` of each row for one task per row."""
        h, _ = self._trunk(states, False, False)
        U, c = self._head_maps(Z)
        tasks = np.asarray(tasks)
        return np.einsum("mh,mh->m", h, U[tasks]) + c[tasks] >= 0.0

    # ----------------------------------------------------------------- backward
    def loss_and_gradients(self, states, Z, psi_plus, psi_minus, weights, update=True,
                           task_chunk=None, norms=True):
        """Per-task losses, gradients of the weighted sum, per-task gradient norms.

        ``loss_i = -mean_m[psi+_{m,i} f_i + psi-_{m,i} (1 - f_i)]``. Gradients are
        those of ``sum_i w_i loss_i`` in training mode (batch statistics).
        ``grad_norms[i]`` is the L2 norm of the gradient of ``w_i loss_i`` with
        respect to the last shared linear layer (``None`` when ``norms=False``).
        """
        psi_plus = _check_finite(np.asarray(psi_plus, dtype=float), "psi_plus")
        psi_minus = _check_finite(np.asarray(psi_minus, dtype=float), "psi_minus")
        weights = _check_finite(np.asarray(weights, dtype=float), "task weights")
        M = psi_plus.shape[0]
        h, cache = self._trunk(states, True, update)
        U, c = self._head_maps(Z)
        logits = _check_finite(h @ U.T + c, "heads")
        f = np.clip(expit(logits), _F_LO, _F_HI)
        gap = psi_plus - psi_minus
        losses = -(psi_minus + gap * f).mean(axis=0)

        dlogit = -(weights * gap * f * (1.0 - f)) / M
        Zh = np.asarray(Z, dtype=float)
        s = dlogit.T @ h
        grads = {
            "heads.weight": Zh[:, :, None] * s[:, None, :],
            "heads.bias": Zh * dlogit.sum(axis=0)[:, None],
        }
        grad_norms = self._task_grad_norms(dlogit, U, cache, task_chunk) if norms else None

        dh = dlogit @ U
        for l in range(len(self.hidden), 0, -1):
            name, _, zhat, zstd, mask = cache[l]
            y_prev = cache[l - 1][1]
            da = dh * mask
            grads[f"{name}.gamma"] = (da * zhat).sum(axis=0)
            grads[f"{name}.beta"] = da.sum(axis=0)
            dz = self._bn_backward(da * self.params[f"{name}.gamma"], zhat, zstd)
            grads[f"{name}.weight"] = _check_finite(y_prev.T @ dz, name)
            if l > 1:
                dh = dz @ self.params[f"{name}.weight"].T
        return losses, grads, grad_norms

    @staticmethod
    def _bn_backward(dxhat, xhat, std, axis=0):
        return (dxhat - dxhat.mean(axis=axis, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True)) / std

    def _task_grad_norms(self, dlogit, U, cache, task_chunk=None):
        """``||d(w_i loss_i)/dW_L||`` for every task without materialising per-task backward passes.

        With ``g = mask * gamma`` and ``d_i = dlogit[:, i]`` the batch-norm backward
        gives ``dW_i[p, h] = U[i, h] / std[h] * (T_i[p, h] - ysum[p] a_i[h] - Yz[p, h] b_i[h])``
        where ``T_i = (y * d_i)^T g``, ``a_i = mean(d_i g)``, ``b_i = mean(d_i g zhat)``.
        """
        L = len(self.hidden)
        _, _, zhat, zstd, mask = cache[L]
        y = cache[L - 1][1]
        M, I = dlogit.shape
        P = y.shape[1]
        g = mask * self.params[f"layer{L}.gamma"]
        a = dlogit.T @ g / M
        b = dlogit.T @ (g * zhat) / M
        ysum = y.sum(axis=0)
        Yz = y.T @ zhat
        if task_chunk is None:
            task_chunk = max(1, int(2_000_000 // (M * P)))
        norms = np.empty(I)
        for start in range(0, I, task_chunk):
            sl = slice(start, start + task_chunk)
            c = dlogit[:, sl].shape[1]
            yd = (dlogit[:, sl, None] * y[:, None, :]).reshape(M, c * P)
            T = (yd.T @ g).reshape(c, P, -1)
            gW = T - ysum[None, :, None] * a[sl, None, :] - Yz[None] * b[sl, None, :]
            gW *= (U[sl] / zstd)[:, None, :]
            norms[sl] = np.sqrt(np.einsum("cph,cph->c", gW, gW))
        return norms

    # ------------------------------------------------------------- persistence
    def copy_trunk_from(self, other: "MultitaskNet"):
        """Initialise the shared module from ``other`` wherever shapes agree."""
        for store, src in ((self.params, other.params), (self.buffers, other.buffers)):
            for name, value in src.items():
                if name.startswith("heads."):
                    continue
                if name in store and store[name].shape == value.shape:
                    store[name] = value.copy()
        return self

    def architecture(self) -> dict:
        return {"input_dim": self.input_dim, "task_count": self.task_count,
                "hidden": list(self.hidden), "head_dim": self.head_dim,
                "momentum": self.momentum, "eps": self.eps}

    def state_dict(self) -> dict:
        out = {f"param/{k}": v for k, v in self.params.items()}
        out.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return out

    @classmethod
    def from_state(cls, architecture: dict, arrays: dict) -> "MultitaskNet":
        arch = dict(architecture)
        net = cls(arch.pop("input_dim"), arch.pop("task_count"), hidden=tuple(arch.pop("hidden")), **arch)
        for key, value in arrays.items():
            kind, name = key.split("/", 1)
            store = net.params if kind == "param" else net.buffers
            if name not in store or store[name].shape != value.shape:
                raise ValueError(f"checkpoint entry {key} does not match the architecture")
            store[name] = np.array(value, dtype=float)
        net.eval()
        return net


def save_checkpoint(path, net: MultitaskNet, extra: dict | None = None, arrays: dict | None = None):
    """Write parameters, running statistics and architecture to a ``.npz`` file (bit-exact)."""
    meta = {"format_version": CHECKPOINT_VERSION, "architecture": net.architecture(), "extra": extra or {}}
    payload = dict(net.state_dict())
    for k, v in (arrays or {}).items():
        payload[f"extra/{k}"] = v
    payload["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(net, extra_metadata, extra_arrays)``."""
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()), allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        state = {k: data[k] for k in data.files if k.startswith(("param/", "buffer/"))}
        extra_arrays = {k[len("extra/"):]: data[k] for k in data.files if k.startswith("extra/")}
    return MultitaskNet.from_state(meta["architecture"], state), meta["extra"], extra_arrays


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One Adam update of ``params`` in place; returns ``(params, state)``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
