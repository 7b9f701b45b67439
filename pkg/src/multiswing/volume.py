"""Integer volume-constraint geometry of a swing contract."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class ConstraintError(ValueError):
    """Infeasible volume constraints, or a cumulative volume outside the grid."""


@dataclass(frozen=True)
class VolumeConstraints:
    """Local bounds ``q_min <= q_k <= q_max`` and global bounds on ``Q_n``.

    With ``firm=False`` (penalty contracts) the global bounds are not
    enforced and ``Q_min``/``Q_max`` are ignored by the grid.
    """

    q_min: int
    q_max: int
    Q_min: int
    Q_max: int
    n_dates: int
    firm: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def validate(c: VolumeConstraints) -> list[str]:
    """Every violated invariant of ``c``; an empty list means valid."""
    findings = []
    for name in ("q_min", "q_max", "Q_min", "Q_max", "n_dates"):
        value = getattr(c, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            findings.append(f"{name} must be an integer, got {value!r}")
    if findings:
        return findings
    if c.n_dates < 1:
        findings.append("n_dates must be >= 1")
    if not 0 <= c.q_min < c.q_max:
        findings.append(f"local bounds need 0 <= q_min < q_max, got ({c.q_min}, {c.q_max})")
    if c.firm:
        if c.Q_min > c.Q_max:
            findings.append(f"global bounds need Q_min <= Q_max, got ({c.Q_min}, {c.Q_max})")
        elif c.q_max > c.q_min and (c.Q_max - c.Q_min) % (c.q_max - c.q_min) != 0:
            findings.append(
                f"bang-bang condition violated: Q_max - Q_min = {c.Q_max - c.Q_min} "
                f"is not a multiple of q_max - q_min = {c.q_max - c.q_min}")
        if c.Q_min > c.n_dates * c.q_max:
            findings.append(
                f"infeasible: Q_min = {c.Q_min} > n_dates * q_max = {c.n_dates * c.q_max}")
        if c.Q_max < c.n_dates * c.q_min:
            findings.append(
                f"infeasible: Q_max = {c.Q_max} < n_dates * q_min = {c.n_dates * c.q_min}")
    elif c.q_min != 0:
        # the last penalty level range stops at (n-1) q_max, leaving no room for a forced purchase
        findings.append(f"penalty grid needs q_min = 0, got {c.q_min}")
    return findings


def cumulative_bounds(c: VolumeConstraints, k: int) -> tuple[int, int]:
    """Attainable cumulative volumes ``(Q_k^d, Q_k^u)`` at date ``k``."""
    if not 0 <= k <= c.n_dates:
        raise IndexError(f"date index {k} outside [0, {c.n_dates}]")
    if c.firm:
        lo = max(k * c.q_min, c.Q_min - (c.n_dates - k) * c.q_max)
        # the future minimum purchases (n - k) q_min must still fit under Q_max
        hi = min(k * c.q_max, c.Q_max - (c.n_dates - k) * c.q_min)
    else:
        kn = min(k, c.n_dates - 1)
        lo, hi = kn * c.q_min, kn * c.q_max
    return int(lo), int(hi)


def _check_level(c, k, Q):
    lo, hi = cumulative_bounds(c, k)
    if not lo <= Q <= hi:
        raise ConstraintError(f"cumulative volume Q={Q} is not attainable at date {k} (range [{lo}, {hi}])")


def admissible_controls(c: VolumeConstraints, k: int, Q: int) -> tuple[int, int]:
    """Bang-bang pair ``(q_k^-(Q), q_k^+(Q))``."""
    if not 0 <= k < c.n_dates:
        raise IndexError(f"no control at date {k}; controls exist for 0 <= k < {c.n_dates}")
    _check_level(c, k, Q)
    lo, hi = cumulative_bounds(c, k + 1)
    return max(lo - Q, c.q_min), min(hi - Q, c.q_max)


def is_trivial_task(c: VolumeConstraints, k: int, Q: int) -> bool:
    """True when only one control is feasible at ``(k, Q)``."""
    lo, hi = admissible_controls(c, k, Q)
    return lo == hi


def remaining_capacity(c: VolumeConstraints, Q) -> np.ndarray:
    """Remaining-capacity feature of a cumulative volume.

    ``(Q - Q_min) / (Q_max - Q_min)`` for firm constraints and
    ``Q / (n q_max)`` for penalty contracts.
    """
    Q = np.asarray(Q, dtype=float)
    if c.firm:
        span = c.Q_max - c.Q_min
        return (Q - c.Q_min) / span if span > 0 else Q / max(c.Q_max, 1)
    return Q / (c.n_dates * c.q_max)


class QGrid:
    """Per-date level lists with their admissible controls and trivial flags.

    ``levels[k]`` holds the integer cumulative volumes ``Q_k^1 < ... < Q_k^{I_k}``
    (k = 0..n). ``q_minus[k]``, ``q_plus[k]`` and ``trivial[k]`` are aligned
    with ``levels[k]`` for k = 0..n-1.
    """

    def __init__(self, constraints: VolumeConstraints):
        findings = validate(constraints)
        if findings:
            raise ConstraintError("; ".join(findings))
        self.constraints = c = constraints
        self.n_dates = n = c.n_dates
        self.lower = np.empty(n + 1, dtype=np.int64)
        self.upper = np.empty(n + 1, dtype=np.int64)
        for k in range(n + 1):
            lo, hi = cumulative_bounds(c, k)
            if lo > hi:
                raise ConstraintError(f"empty set of cumulative volumes at date {k}: [{lo}, {hi}]")
            self.lower[k], self.upper[k] = lo, hi
        self.levels = [np.arange(self.lower[k], self.upper[k] + 1) for k in range(n + 1)]
        self.q_minus, self.q_plus, self.trivial = [], [], []
        for k in range(n):
            Q = self.levels[k]
            qm = np.maximum(self.lower[k + 1] - Q, c.q_min)
            qp = np.minimum(self.upper[k + 1] - Q, c.q_max)
            if np.any(qm > qp):
                bad = Q[qm > qp][0]
                raise ConstraintError(f"no admissible control at date {k} for Q={bad}")
            self.q_minus.append(qm)
            self.q_plus.append(qp)
            self.trivial.append(qm == qp)

    def size(self, k: int) -> int:
        return self.levels[k].size

    def index(self, k: int, Q) -> np.ndarray:
        """Position of cumulative volume(s) ``Q`` in ``levels[k]``; raises if not attainable."""
        Q = np.asarray(Q)
        idx = Q - self.lower[k]
        if np.any((idx < 0) | (idx >= self.levels[k].size)):
            bad = np.atleast_1d(Q)[np.atleast_1d((idx < 0) | (idx >= self.levels[k].size))][0]
            raise ConstraintError(f"cumulative volume Q={bad} is not attainable at date {k}")
        return idx

    def task_levels(self, k: int) -> np.ndarray:
        """Non-trivial levels at date ``k``: one learning task each."""
        return self.levels[k][~self.trivial[k]]

    def features(self, k: int) -> np.ndarray:
        """Remaining-capacity feature of each non-trivial level at date ``k``."""
        return remaining_capacity(self.constraints, self.task_levels(k))
