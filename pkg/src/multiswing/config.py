"""Experiment configuration: named presets, YAML files, dotted overrides, validation.

A config is a nested dict with sections ``model``, ``contract``, ``training``,
``valuation``, ``ls``, plus ``schemes`` (subset of smag/ew/uw/ls) and
``output``. Presets are merged in order, then the file, then overrides.
"""

from __future__ import annotations

import copy
from dataclasses import fields

import numpy as np
import yaml

from .contracts import PENALTY, TAKE_OR_PAY, ContractSpec, penalty_contract, take_or_pay
from .market import ONE_FACTOR, THREE_FACTOR, FactorModel, ModelError
from .trainer import TrainConfig
from .volume import validate as validate_volume

LS = "ls"
ALL_SCHEMES = ("smag", "ew", "uw", LS)

DEFAULTS = {
    "model": {
        "alpha": ONE_FACTOR["alpha"],
        "sigma": ONE_FACTOR["sigma"],
        "rho": ONE_FACTOR["rho"],
        "forward": 20.0,
        "maturity": 1.0,
        "t0": 0.0,
        "n_dates": 30,
    },
    "contract": {
        "kind": TAKE_OR_PAY,
        "strike": 20.0,
        "q_min": 0,
        "q_max": 1,
        "Q_min": 20,
        "Q_max": 25,
        "A": 1.0,
        "B": 1.0,
    },
    "training": {f.name: f.default for f in fields(TrainConfig)},
    "valuation": {"n_paths": 2_000_000, "seed": 12345, "chunk_size": 65536},
    "ls": {"degree": 2, "include_spot": True, "n_train_paths": 100_000},
    "schemes": list(ALL_SCHEMES),
    "output": "runs/out",
}

PRESETS = {
    "base": {},
    "contract1": {"contract": {"strike": 19.0}},
    "contract2": {"contract": {"Q_min": 15}},
    "contract3": {"contract": {"Q_min": 0}},
    "benchmark": {
        "model": {"n_dates": 365},
        "contract": {"q_min": 0, "q_max": 6, "Q_min": 140, "Q_max": 200},
        "training": {"path_sampling": "fixed"},
    },
    "penalty": {"contract": {"kind": PENALTY, "Q_min": 20, "Q_max": 25, "A": 1.0, "B": 1.0}},
    "one_factor": {"model": dict(ONE_FACTOR)},
    "three_factor": {"model": dict(THREE_FACTOR)},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> dict:
    """``"training.iterations=50"`` -> ``{"training": {"iterations": 50}}`` (YAML-typed value)."""
    if "=" not in text:
        raise ConfigError([f"override {text!r} is not of the form key.path=value"])
    path, raw = text.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError([f"override {text!r} has an empty key"])
    value = yaml.safe_load(raw)
    for key in reversed(keys):
        value = {key: value}
    return value


def build_config(presets=(), path=None, overrides=()) -> dict:
    cfg = _plain(DEFAULTS)
    for name in presets:
        if name not in PRESETS:
            raise ConfigError([f"unknown preset {name!r}; choose from {sorted(PRESETS)}"])
        cfg = merge(cfg, _plain(PRESETS[name]))
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        cfg = merge(cfg, loaded)
    for text in overrides:
        cfg = merge(cfg, parse_override(text))
    return cfg


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(_plain(cfg), fh, sort_keys=False)


def make_model(cfg: dict) -> FactorModel:
    m = cfg["model"]
    return FactorModel.uniform(m["alpha"], m["sigma"], m.get("rho"), forward=m["forward"],
                               maturity=m["maturity"], n_dates=m["n_dates"], t0=m.get("t0", 0.0))


def make_contract(cfg: dict) -> ContractSpec:
    c = cfg["contract"]
    n = cfg["model"]["n_dates"]
    if c["kind"] == TAKE_OR_PAY:
        return take_or_pay(c["strike"], c["q_min"], c["q_max"], c["Q_min"], c["Q_max"], n)
    if c["kind"] == PENALTY:
        return penalty_contract(c["strike"], c["q_min"], c["q_max"], n, c.get("Q_A", c["Q_min"]),
                                c.get("Q_B", c["Q_max"]), c.get("A", 1.0), c.get("B", 1.0))
    raise ConfigError([f"contract.kind must be {TAKE_OR_PAY!r} or {PENALTY!r}, got {c['kind']!r}"])


def make_train_config(cfg: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    extra = set(cfg["training"]) - known
    if extra:
        raise ConfigError([f"unknown training keys {sorted(extra)}"])
    return TrainConfig(**cfg["training"])


def validate_config(cfg: dict) -> list[str]:
    """Every problem found in ``cfg``; empty when it is usable."""
    problems = []
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        problems.append(f"unknown sections {sorted(unknown)}")
    try:
        model = make_model(cfg)
    except (ModelError, ValueError, TypeError, KeyError) as exc:
        problems.append(f"model: {exc}")
        model = None
    try:
        contract = make_contract(cfg)
    except ConfigError as exc:
        problems.extend(exc.problems)
        contract = None
    except (ValueError, TypeError, KeyError) as exc:
        problems.append(f"contract: {exc}")
        contract = None
    if contract is not None:
        problems.extend(f"contract: {p}" for p in validate_volume(contract.volume))
    if model is not None and contract is not None and model.n_dates != contract.volume.n_dates:
        problems.append("model and contract disagree on the number of dates")
    try:
        make_train_config(cfg)
    except ConfigError as exc:
        problems.extend(exc.problems)
    except (ValueError, TypeError) as exc:
        problems.append(f"training: {exc}")
    val = cfg.get("valuation", {})
    if not isinstance(val.get("n_paths"), int) or val["n_paths"] < 1:
        problems.append("valuation.n_paths must be an integer >= 1")
    if not isinstance(val.get("chunk_size"), int) or val["chunk_size"] < 1:
        problems.append("valuation.chunk_size must be an integer >= 1")
    if not isinstance(val.get("seed"), int) or val["seed"] < 0:
        problems.append("valuation.seed must be a non-negative integer")
    ls = cfg.get("ls", {})
    if not isinstance(ls.get("degree"), int) or ls["degree"] < 0:
        problems.append("ls.degree must be an integer >= 0")
    if not isinstance(ls.get("n_train_paths"), int) or ls["n_train_paths"] < 1:
        problems.append("ls.n_train_paths must be an integer >= 1")
    schemes = cfg.get("schemes")
    if not isinstance(schemes, list) or not schemes or any(s not in ALL_SCHEMES for s in schemes):
        problems.append(f"schemes must be a non-empty list drawn from {ALL_SCHEMES}")
    return problems


def check_config(cfg: dict) -> None:
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(problems)
