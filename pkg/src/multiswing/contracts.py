"""Cash-flow definitions of the take-or-pay and penalty swing contracts (no discounting)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import ConstraintError, VolumeConstraints

TAKE_OR_PAY = "top"
PENALTY = "penalty"


@dataclass(frozen=True)
class ContractSpec:
    kind: str
    strike: float
    volume: VolumeConstraints
    A: float = 0.0
    B: float = 0.0
    Q_A: int = 0
    Q_B: int = 0

    def __post_init__(self):
        if self.kind not in (TAKE_OR_PAY, PENALTY):
            raise ValueError(f"unknown contract kind {self.kind!r}")
        if (self.kind == TAKE_OR_PAY) != self.volume.firm:
            raise ConstraintError("take-or-pay contracts need firm volume constraints, penalty contracts do not")
        if self.kind == PENALTY:
            if self.Q_A > self.Q_B:
                raise ValueError(f"penalty band needs Q_A <= Q_B, got ({self.Q_A}, {self.Q_B})")
            if self.A < 0 or self.B < 0:
                raise ValueError("penalty rates A and B must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "strike": self.strike, "A": self.A, "B": self.B,
                "Q_A": self.Q_A, "Q_B": self.Q_B, "volume": self.volume.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "ContractSpec":
        data = dict(data)
        data["volume"] = VolumeConstraints(**data["volume"])
        return cls(**data)


def take_or_pay(strike, q_min, q_max, Q_min, Q_max, n_dates) -> ContractSpec:
    return ContractSpec(TAKE_OR_PAY, strike, VolumeConstraints(q_min, q_max, Q_min, Q_max, n_dates, True))


def penalty_contract(strike, q_min, q_max, n_dates, Q_A, Q_B, A=1.0, B=1.0) -> ContractSpec:
    volume = VolumeConstraints(q_min, q_max, Q_A, Q_B, n_dates, firm=False)
    return ContractSpec(PENALTY, strike, volume, A=A, B=B, Q_A=Q_A, Q_B=Q_B)


def immediate_reward(spec: ContractSpec, S, q):
    """Purchase cash flow ``q (S - K)``."""
    return np.asarray(q) * (np.asarray(S, dtype=float) - spec.strike)


def terminal_value(spec: ContractSpec, S, Q):
    """Terminal cash flow: zero for take-or-pay, ``-S (A (Q - Q_A)_- + B (Q - Q_B)_+)`` with penalties."""
    S = np.asarray(S, dtype=float)
    Q = np.asarray(Q)
    if spec.kind == TAKE_OR_PAY:
        return np.zeros(np.broadcast(S, Q).shape)
    shortfall = np.maximum(spec.Q_A - Q, 0)
    excess = np.maximum(Q - spec.Q_B, 0)
    return -S * (spec.A * shortfall + spec.B * excess)
