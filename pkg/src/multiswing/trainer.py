"""Backward training of one multitask decision network per exercise date.

At date k the networks of dates k+1..n-1 are frozen in their bang-bang form.
Rolling them out along simulated paths gives pathwise continuation values
``v_{k+1}(s_{k+1}, Q)`` for every level Q, from which the two branch payoffs

    psi^{+/-}(Q) = c_k(s_k, q_k^{+/-}(Q)) + v_{k+1}(s_{k+1}, Q + q_k^{+/-}(Q))

are formed; the date-k network then maximises
``E[psi^+ f + psi^- (1 - f)]`` jointly over all non-trivial levels.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .contracts import ContractSpec, immediate_reward, terminal_value
from .market import FactorModel, substream
from .nn import AdamState, MultitaskNet, adam_step, load_checkpoint, save_checkpoint, task_features
from .policy import DecisionPolicy, NetworkRule
from .valuation import evaluate_policy
from .volume import QGrid
from .weighting import SCHEMES, SMAG, init_weights, update_weights

log = logging.getLogger(__name__)

TRAIN_STREAM = 1
INIT_STREAM = 3
WEIGHT_STREAM = 4
VALIDATION_STREAM = 5
MANIFEST_VERSION = 1


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``mode`` is ``"sequential"`` (dates trained one after the other, backward)
    or ``"sweep"`` (one step per date per backward sweep, with a validation
    price after each sweep). ``path_sampling`` is ``"fresh"`` (new paths at
    every iteration) or ``"fixed"`` (one set of ``n_train_paths`` paths,
    minibatches drawn from it; sequential mode only).
    """

    iterations: int = 200
    batch_size: int = 2048
    learning_rate: float = 0.01
    weight_learning_rate: float = 0.01
    scheme: str = "smag"
    alpha: float = 1.8
    beta: float = 0.7
    weight_floor: float = 1e-3
    seed: int = 0
    mode: str = "sequential"
    path_sampling: str = "fresh"
    n_train_paths: int = 32768
    sweeps: int | None = None
    validation_paths: int = 10000
    hidden_units: int = 50
    transfer: bool = True

    def __post_init__(self):
        problems = []
        for name in ("iterations", "batch_size", "n_train_paths", "validation_paths", "hidden_units"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.batch_size < 2:
            problems.append("batch_size must be >= 2 (batch normalisation)")
        if self.sweeps is not None and self.sweeps < 1:
            problems.append("sweeps must be >= 1")
        for name in ("learning_rate", "weight_learning_rate"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.alpha < 0 or not 0 <= self.beta <= 1:
            problems.append("need alpha >= 0 and 0 <= beta <= 1")
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}")
        if self.mode not in ("sequential", "sweep"):
            problems.append("mode must be 'sequential' or 'sweep'")
        if self.path_sampling not in ("fresh", "fixed"):
            problems.append("path_sampling must be 'fresh' or 'fixed'")
        if self.mode == "sweep" and self.path_sampling != "fresh":
            problems.append("sweep mode needs fresh path sampling")
        if problems:
            raise ValueError("; ".join(problems))


# ------------------------------------------------------------- continuation
def terminal_table(spec: ContractSpec, grid: QGrid, S_n) -> np.ndarray:
    """``g_n(S_n, Q)`` for every level Q of date n, shape (M, |Q_n|)."""
    return terminal_value(spec, np.asarray(S_n)[:, None], grid.levels[grid.n_dates][None, :])


def backward_step(spec: ContractSpec, grid: QGrid, k: int, S_k, upper, V_next) -> np.ndarray:
    """``v_k(Q) = c_k(q*) + v_{k+1}(Q + q*)`` pathwise for all levels of date ``k``.

    ``upper`` has shape (M, |Q_k|) and selects q^+ over q^- per path and level.
    """
    q = np.where(upper, grid.q_plus[k], grid.q_minus[k])
    nxt = grid.levels[k] + q - grid.lower[k + 1]
    return immediate_reward(spec, np.asarray(S_k)[:, None], q) + np.take_along_axis(V_next, nxt, axis=1)


def continuation_table(policy: DecisionPolicy, paths, model, spec: ContractSpec, k: int) -> np.ndarray:
    """Pathwise ``v_{k+1}(s_{k+1}, Q)`` for all ``Q`` in ``Q_{k+1}``, shape (M, |Q_{k+1}|).

    Later dates follow ``policy`` (bang-bang, trivial levels forced);
    ``paths`` must cover dates k+1..n.
    """
    grid = policy.grid
    n = grid.n_dates
    V = terminal_table(spec, grid, model.spot_price(n, paths.at(n)))
    for ell in range(n - 1, k, -1):
        s = paths.at(ell)
        V = backward_step(spec, grid, ell, model.spot_price(ell, s), policy.decide_all(ell, s), V)
    return V


def branch_payoffs(spec: ContractSpec, grid: QGrid, k: int, table, S_k, levels=None):
    """``(psi_plus, psi_minus)`` of shape (M, len(levels)); default levels are the date's tasks."""
    if levels is None:
        levels = grid.task_levels(k)
    levels = np.asarray(levels)
    idx = grid.index(k, levels)
    S_k = np.asarray(S_k)[:, None]
    out = []
    for q in (grid.q_plus[k][idx], grid.q_minus[k][idx]):
        col = levels + q - grid.lower[k + 1]
        if np.any((col < 0) | (col >= table.shape[1])):
            raise RuntimeError(f"continuation table at date {k + 1} does not cover all branch targets")
        out.append(immediate_reward(spec, S_k, q) + table[:, col])
    return out[0], out[1]


# ------------------------------------------------------------------ training
class DateTrainer:
    """Network, optimiser and task weights of one exercise date."""

    def __init__(self, k, grid: QGrid, d, cfg: TrainConfig, donor: MultitaskNet | None = None):
        self.k = k
        self.levels = grid.task_levels(k)
        I = self.levels.size
        init = substream(cfg.seed, INIT_STREAM, k)
        if k == 0:
            self.net = MultitaskNet.scalar(d, cfg.hidden_units, seed=init)
            self.features = np.ones((I, 1))
        else:
            self.net = MultitaskNet(d, I, hidden=(cfg.hidden_units,) * 2, seed=init)
            self.features = task_features(grid.features(k))
        if donor is not None and cfg.transfer:
            self.net.copy_trunk_from(donor)
        self.adam = AdamState()
        self.weights = init_weights(cfg.scheme, I, substream(cfg.seed, WEIGHT_STREAM, k),
                                    alpha=cfg.alpha, beta=cfg.beta,
                                    weight_lr=cfg.weight_learning_rate, floor=cfg.weight_floor)
        self.lr = cfg.learning_rate
        self.rule = NetworkRule(self.net, self.features)

    def step(self, states, psi_plus, psi_minus) -> dict:
        w = self.weights.w
        need_norms = self.weights.scheme == SMAG
        losses, grads, norms = self.net.loss_and_gradients(states, self.features, psi_plus, psi_minus, w,
                                                           norms=need_norms)
        adam_step(self.net.params, grads, self.adam, self.lr)
        self.weights, diag = update_weights(self.weights, losses, norms)
        new_w = self.weights.w
        return {
            "date_index": self.k,
            "tasks": losses.size,
            "loss_mean": float(losses.mean()),
            "loss_min": float(losses.min()),
            "loss_max": float(losses.max()),
            "global_loss": float(w @ losses),
            "weight_mean": float(new_w.mean()),
            "weight_min": float(new_w.min()),
            "weight_max": float(new_w.max()),
            "weight_sum": float(new_w.sum()),
            "grad_norm_mean": float(norms.mean()) if need_norms else float("nan"),
            "r_mean": diag.get("r_mean", float("nan")),
        }


def _fresh_batch(model, spec, policy, cfg, k, t):
    paths = model.sample_paths(substream(cfg.seed, TRAIN_STREAM, k, t), cfg.batch_size, k_start=k)
    s_k = paths.at(k)
    table = continuation_table(policy, paths, model, spec, k)
    return s_k, model.spot_price(k, s_k), table


def train_policy(model, spec: ContractSpec, cfg: TrainConfig, callback=None):
    """Train all dates; returns ``(policy, training_log, learning_curve)``.

    ``learning_curve`` holds one validation price per sweep in sweep mode and
    is empty otherwise.
    """
    grid = QGrid(spec.volume)
    if grid.n_dates != model.n_dates:
        raise ValueError(f"contract has {grid.n_dates} dates, model {model.n_dates}")
    if cfg.mode == "sweep":
        return _train_sweeps(model, spec, grid, cfg, callback)
    return _train_sequential(model, spec, grid, cfg, callback)


def _train_sequential(model, spec, grid, cfg, callback):
    n = grid.n_dates
    policy = DecisionPolicy(grid, [None] * n)
    records = []
    fixed = cfg.path_sampling == "fixed"
    if fixed:
        paths = model.sample_paths(substream(cfg.seed, TRAIN_STREAM), cfg.n_train_paths)
        V = terminal_table(spec, grid, model.spot_price(n, paths.at(n)))
    donor = None
    for k in range(n - 1, -1, -1):
        if fixed:
            s_all = paths.at(k)
            S_all = model.spot_price(k, s_all)
            rng = np.random.default_rng(substream(cfg.seed, TRAIN_STREAM, k))
        if grid.task_levels(k).size:
            trainer = DateTrainer(k, grid, model.d, cfg, donor)
            for t in range(cfg.iterations):
                if fixed:
                    rows = rng.integers(0, cfg.n_train_paths, cfg.batch_size)
                    s_k, S_k, table = s_all[rows], S_all[rows], V[rows]
                else:
                    s_k, S_k, table = _fresh_batch(model, spec, policy, cfg, k, t)
                psi_plus, psi_minus = branch_payoffs(spec, grid, k, table, S_k)
                rec = trainer.step(s_k, psi_plus, psi_minus)
                rec["iteration"] = t
                records.append(rec)
            trainer.net.eval()
            policy.rules[k] = trainer.rule
            donor = trainer.net
            log.debug("date %d trained on %d tasks, final mean loss %.6g", k, rec["tasks"], rec["loss_mean"])
        if fixed:
            V = backward_step(spec, grid, k, S_all, policy.decide_all(k, s_all), V)
        if callback is not None:
            callback(k, policy)
    return policy, records, []


def _train_sweeps(model, spec, grid, cfg, callback):
    n = grid.n_dates
    trainers = {}
    donor = None
    for k in range(n - 1, -1, -1):
        if grid.task_levels(k).size:
            trainers[k] = DateTrainer(k, grid, model.d, cfg, donor)
            donor = trainers[k].net
    policy = DecisionPolicy(grid, [trainers[k].rule if k in trainers else None for k in range(n)])
    records, curve = [], []
    sweeps = cfg.sweeps or cfg.iterations
    for t in range(sweeps):
        for k in range(n - 1, -1, -1):
            if k not in trainers:
                continue
            s_k, S_k, table = _fresh_batch(model, spec, policy, cfg, k, t)
            psi_plus, psi_minus = branch_payoffs(spec, grid, k, table, S_k)
            rec = trainers[k].step(s_k, psi_plus, psi_minus)
            rec["iteration"] = t
            records.append(rec)
        snap = evaluate_policy(policy, model, spec, cfg.validation_paths,
                               seed=substream(cfg.seed, VALIDATION_STREAM))
        point = {"iteration": t + 1, "price": snap.price, "ci_low": snap.ci_low, "ci_high": snap.ci_high}
        curve.append(point)
        records.append({"date_index": "sweep", **point})
        if callback is not None:
            callback(t, policy)
    for tr in trainers.values():
        tr.net.eval()
    return policy, records, curve


# ----------------------------------------------------------------- estimator
class MultitaskSwingPricer(BaseEstimator):
    """Swing-contract pricer built on per-date multitask decision networks.

    ``fit(model, contract)`` runs the backward training; afterwards the
    estimator is a bang-bang decision policy (``decide``) and can be priced
    by forward Monte Carlo (``price``). Hyperparameters mirror
    :class:`TrainConfig`, with ``random_state`` as the seed.
    """

    def __init__(self, scheme="smag", iterations=200, batch_size=2048, learning_rate=0.01,
                 weight_learning_rate=0.01, alpha=1.8, beta=0.7, weight_floor=1e-3,
                 mode="sequential", path_sampling="fresh", n_train_paths=32768, sweeps=None,
                 validation_paths=10000, hidden_units=50, transfer=True, random_state=0):
        self.scheme = scheme
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_learning_rate = weight_learning_rate
        self.alpha = alpha
        self.beta = beta
        self.weight_floor = weight_floor
        self.mode = mode
        self.path_sampling = path_sampling
        self.n_train_paths = n_train_paths
        self.sweeps = sweeps
        self.validation_paths = validation_paths
        self.hidden_units = hidden_units
        self.transfer = transfer
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        params = self.get_params()
        params["seed"] = params.pop("random_state")
        return TrainConfig(**params)

    def fit(self, model, contract: ContractSpec, callback=None):
        cfg = self.train_config()
        self.policy_, self.training_log_, self.learning_curve_ = train_policy(model, contract, cfg, callback)
        self.contract_ = contract
        self.n_dates_ = self.policy_.n_dates
        return self

    def decide(self, k, states, Q):
        """Upper-branch flags for paths in ``states`` (M, d) at cumulative volumes ``Q``."""
        check_is_fitted(self, "policy_")
        states = check_array(states, ensure_min_samples=1)
        return self.policy_.decide(k, states, np.asarray(Q, dtype=np.int64))

    def predict_proba(self, k, states):
        """Soft decisions ``f`` (M, I_k) of the date-``k`` network for its task levels."""
        check_is_fitted(self, "policy_")
        states = check_array(states)
        rule = self.policy_.rules[k]
        if rule is None:
            return np.empty((states.shape[0], 0))
        return rule.soft(states)

    def price(self, model, n_paths=2_000_000, seed=0, chunk_size=65536):
        check_is_fitted(self, "policy_")
        return evaluate_policy(self.policy_, model, self.contract_, n_paths, seed, chunk_size)

    # ------------------------------------------------------------ checkpoints
    def save(self, directory, model: FactorModel):
        """One ``.npz`` per trained date plus ``manifest.json``."""
        check_is_fitted(self, "policy_")
        os.makedirs(directory, exist_ok=True)
        dates = []
        for k, rule in enumerate(self.policy_.rules):
            if rule is None:
                dates.append({"date": k, "kind": "forced"})
                continue
            fname = f"date_{k:04d}.npz"
            save_checkpoint(os.path.join(directory, fname), rule.net, extra={"date": k},
                            arrays={"features": rule.features})
            dates.append({"date": k, "kind": "network", "file": fname})
        manifest = {
            "format_version": MANIFEST_VERSION,
            "estimator": type(self).__name__,
            "params": self.get_params(),
            "contract": self.contract_.to_dict(),
            "model": model.to_dict(),
            "dates": dates,
        }
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def load(cls, directory):
        """Rebuild a fitted pricer; returns ``(pricer, model, contract)``."""
        path = os.path.join(directory, "manifest.json")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no checkpoint manifest in {directory}")
        with open(path) as fh:
            manifest = json.load(fh)
        if manifest.get("format_version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {manifest.get('format_version')}")
        est = cls(**manifest["params"])
        contract = ContractSpec.from_dict(manifest["contract"])
        model = FactorModel.from_dict(manifest["model"])
        grid = QGrid(contract.volume)
        rules = []
        for entry in manifest["dates"]:
            if entry["kind"] == "forced":
                rules.append(None)
                continue
            net, _, arrays = load_checkpoint(os.path.join(directory, entry["file"]))
            rules.append(NetworkRule(net, arrays["features"]))
        est.policy_ = DecisionPolicy(grid, rules)
        est.contract_ = contract
        est.n_dates_ = grid.n_dates
        est.training_log_, est.learning_curve_ = [], []
        return est, model, contract


def config_fields():
    return [f.name for f in fields(TrainConfig)]


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
