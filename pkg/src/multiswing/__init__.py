"""Swing contract pricing with per-date multitask networks and S-MAG loss weighting."""

from .contracts import ContractSpec, penalty_contract, take_or_pay
from .lsm import LongstaffSchwartzPricer
from .market import ONE_FACTOR, THREE_FACTOR, FactorModel, TrinomialFactorModel
from .policy import DecisionPolicy
from .trainer import MultitaskSwingPricer, TrainConfig, train_policy
from .valuation import ValuationResult, evaluate_policy
from .volume import QGrid, VolumeConstraints

__version__ = "0.1.0"

__all__ = [
    "ContractSpec", "DecisionPolicy", "FactorModel", "LongstaffSchwartzPricer",
    "MultitaskSwingPricer", "ONE_FACTOR", "QGrid", "THREE_FACTOR", "TrainConfig",
    "TrinomialFactorModel", "ValuationResult", "VolumeConstraints", "evaluate_policy",
    "penalty_contract", "take_or_pay", "train_policy",
]
