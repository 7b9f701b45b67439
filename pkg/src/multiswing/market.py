"""Multi-factor Gaussian forward-price model and exact path simulation.

The forward curve follows

    dF(t, T) / F(t, T) = sum_i sigma_i exp(-alpha_i (T - t)) dW_t^i

so the spot at date t_k is driven by the Ornstein-Uhlenbeck factors
``s_k^i = int_0^{t_k} exp(-alpha_i (t_k - u)) dW_u^i``, which are simulated
exactly (no time-stepping bias).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

#: Paths are generated in blocks of this size, each block with its own
#: substream, so path ``m`` is the same whatever the total path count.
BLOCK_SIZE = 1024


class ModelError(ValueError):
    """Invalid model parameters (bad correlation matrix, time grid, ...)."""


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def substream(seed, *key) -> np.random.SeedSequence:
    """Independent child stream of ``seed`` labelled by ``key`` (e.g. purpose, date, iteration)."""
    ss = _as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(x) for x in key))


def block_generator(seed, block: int) -> np.random.Generator:
    """Generator of the independent substream attached to path block ``block``."""
    return np.random.Generator(np.random.PCG64(substream(seed, block)))


def psd_factor(cov: np.ndarray, name: str = "covariance", tol: float = 1e-12) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == cov``.

    Cholesky first; for singular but PSD input (e.g. a zero covariance at
    t = 0, or a rank-deficient correlation) fall back to an eigenvalue
    factorisation with eigenvalues below ``tol`` (relative) clipped to zero.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = max(np.abs(vals).max(initial=0.0), 1.0)
    if vals.min(initial=0.0) < -1e-8 * scale:
        raise ModelError(f"{name} is not positive semidefinite (min eigenvalue {vals.min():.3e})")
    vals = np.where(vals < tol * scale, 0.0, vals)
    return vecs * np.sqrt(vals)


@dataclass(frozen=True, eq=False)
class FactorModel:
    """d-factor Gaussian model of the forward curve.

    Parameters
    ----------
    alpha : array of shape (d,)
        Mean-reversion rates, all > 0.
    sigma : array of shape (d,)
        Factor volatilities, all >= 0.
    rho : array of shape (d, d)
        Instantaneous correlation of the driving Brownian motions.
    forward : array of shape (n + 1,)
        Initial forward prices F(0, t_k).
    time_grid : array of shape (n + 1,)
        Dates t_0 < t_1 < ... < t_n in years.
    """

    alpha: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    forward: np.ndarray
    time_grid: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        grid = np.atleast_1d(np.asarray(self.time_grid, dtype=float))
        forward = np.asarray(self.forward, dtype=float)
        if forward.ndim == 0:
            forward = np.full(grid.shape, float(forward))
        problems = []
        d = alpha.size
        if sigma.shape != (d,):
            problems.append(f"sigma has shape {sigma.shape}, expected ({d},)")
        if rho.shape != (d, d):
            problems.append(f"rho has shape {rho.shape}, expected ({d}, {d})")
        if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
            problems.append("alpha must be finite and > 0")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            problems.append("sigma must be finite and >= 0")
        if grid.size < 2:
            problems.append("time grid needs at least two dates")
        elif grid[0] < 0 or np.any(np.diff(grid) <= 0):
            problems.append("time grid must start at t_0 >= 0 with strictly positive gaps")
        if forward.shape != grid.shape:
            problems.append(f"forward curve has {forward.size} points, time grid {grid.size}")
        elif np.any(forward <= 0):
            problems.append("forward curve must be > 0")
        if rho.shape == (d, d):
            if not np.allclose(rho, rho.T, atol=1e-12):
                problems.append("rho must be symmetric")
            if not np.allclose(np.diag(rho), 1.0):
                problems.append("rho must have a unit diagonal")
            if np.linalg.eigvalsh(0.5 * (rho + rho.T)).min() < -1e-10:
                problems.append("rho must be positive semidefinite")
        if problems:
            raise ModelError("; ".join(problems))
        for name, value in [("alpha", alpha), ("sigma", sigma), ("rho", rho),
                            ("forward", forward), ("time_grid", grid)]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def uniform(cls, alpha, sigma, rho=None, forward=20.0, maturity=1.0, n_dates=30, t0=0.0):
        """Model on the uniform grid ``t_k = t0 + k * (maturity - t0) / n_dates``."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        if rho is None:
            rho = np.eye(alpha.size)
        elif np.isscalar(rho):
            rho = np.full((alpha.size, alpha.size), float(rho))
            np.fill_diagonal(rho, 1.0)
        grid = np.linspace(t0, maturity, n_dates + 1)
        return cls(alpha=alpha, sigma=sigma, rho=rho, forward=forward, time_grid=grid)

    @property
    def d(self) -> int:
        return self.alpha.size

    @property
    def n_dates(self) -> int:
        return self.time_grid.size - 1

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "sigma": self.sigma.tolist(),
            "rho": self.rho.tolist(),
            "forward": self.forward.tolist(),
            "time_grid": self.time_grid.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FactorModel":
        return cls(**{k: data[k] for k in ("alpha", "sigma", "rho", "forward", "time_grid")})

    # cached per-date factorisations; the model is immutable
    @functools.cached_property
    def _marginal_factors(self):
        return [psd_factor(marginal_covariance(self, k), f"marginal covariance at date {k}")
                for k in range(self.n_dates + 1)]

    @functools.cached_property
    def _transitions(self):
        out = []
        for k in range(self.n_dates):
            decay, cov = transition(self, k)
            out.append((decay, psd_factor(cov, f"innovation covariance at date {k}")))
        return out

    @functools.cached_property
    def _lambda_sq(self):
        return np.array([lambda_sq(self, k) for k in range(self.n_dates + 1)])

    def spot_price(self, k: int, s) -> np.ndarray:
        return spot_price(self, k, s)

    def sample_paths(self, seed, n_paths: int, k_start: int = 0, offset: int = 0) -> "PathBatch":
        return sample_paths(self, seed, n_paths, k_start, offset)


def _check_date(model, k, upper):
    if not 0 <= k <= upper:
        raise IndexError(f"date index {k} outside [0, {upper}]")


def _ou_cov(model: FactorModel, horizon: float) -> np.ndarray:
    a = model.alpha[:, None] + model.alpha[None, :]
    return model.rho * (-np.expm1(-a * horizon)) / a


def marginal_covariance(model: FactorModel, k: int) -> np.ndarray:
    """Covariance of the factor vector s_k (zero when t_k = 0)."""
    _check_date(model, k, model.n_dates)
    return _ou_cov(model, model.time_grid[k])


def transition(model: FactorModel, k: int):
    """Exact one-step law ``s_{k+1} = decay * s_k + eps``, ``eps ~ N(0, innovation_cov)``."""
    _check_date(model, k, model.n_dates - 1)
    dt = model.time_grid[k + 1] - model.time_grid[k]
    return np.exp(-model.alpha * dt), _ou_cov(model, dt)


def lambda_sq(model: FactorModel, k: int) -> float:
    """Variance of <sigma, s_k>, the log-spot convexity term."""
    return float(model.sigma @ marginal_covariance(model, k) @ model.sigma)


def spot_price(model: FactorModel, k: int, s) -> np.ndarray:
    """S_k = F(0, t_k) exp(<sigma, s> - lambda_k^2 / 2); ``s`` has trailing axis d."""
    _check_date(model, k, model.n_dates)
    s = np.asarray(s, dtype=float)
    return model.forward[k] * np.exp(s @ model.sigma - 0.5 * model._lambda_sq[k])


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Factor paths for dates ``k_start .. n``; ``values`` has shape (M, n + 1 - k_start, d)."""

    values: np.ndarray
    k_start: int = 0

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def at(self, k: int) -> np.ndarray:
        """States at date ``k`` as an (M, d) array."""
        j = k - self.k_start
        if not 0 <= j < self.values.shape[1]:
            raise IndexError(f"date {k} not covered by paths starting at {self.k_start}")
        return self.values[:, j, :]


def _block_span(n_paths, offset):
    first = offset // BLOCK_SIZE
    last = (offset + n_paths - 1) // BLOCK_SIZE
    return first, last


def sample_paths(model: FactorModel, seed, n_paths: int, k_start: int = 0, offset: int = 0) -> PathBatch:
    """Simulate ``n_paths`` paths from date ``k_start`` to ``n``.

    The state at ``k_start`` is drawn from its exact marginal law (a point mass
    at zero when t_{k_start} = 0). Path ``offset + m`` only depends on
    ``(seed, k_start, offset + m)``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    _check_date(model, k_start, model.n_dates)
    n_steps = model.n_dates + 1 - k_start
    d = model.d
    first, last = _block_span(n_paths, offset)
    out = np.empty(((last - first + 1) * BLOCK_SIZE, n_steps, d))
    chol0 = model._marginal_factors[k_start]
    steps = model._transitions[k_start:]
    for b in range(first, last + 1):
        z = block_generator(seed, b).standard_normal((BLOCK_SIZE, n_steps, d))
        blk = out[(b - first) * BLOCK_SIZE:(b - first + 1) * BLOCK_SIZE]
        blk[:, 0] = z[:, 0] @ chol0.T
        for j, (decay, chol) in enumerate(steps):
            blk[:, j + 1] = decay * blk[:, j] + z[:, j + 1] @ chol.T
    start = offset - first * BLOCK_SIZE
    return PathBatch(out[start:start + n_paths], k_start)


class TrinomialFactorModel:
    """One-factor lattice approximation of the Gaussian model.

    Each innovation is replaced by a three-point variable ``h * xi`` with
    ``xi`` in {-1, 0, 1} with probabilities (1/6, 2/3, 1/6) and ``h`` chosen to
    match the exact innovation variance. The tree does not recombine, so it is
    only meant for small ``n`` where every path can be enumerated.
    """

    probabilities = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])
    moves = np.array([-1.0, 0.0, 1.0])

    def __init__(self, gaussian: FactorModel):
        if gaussian.d != 1:
            raise ModelError("the trinomial approximation is one-factor only")
        if gaussian.time_grid[0] != 0.0:
            raise ModelError("the trinomial approximation starts from a deterministic s_0 (t_0 = 0)")
        self.gaussian = gaussian
        self.time_grid = gaussian.time_grid
        self.d = 1
        self.n_dates = gaussian.n_dates
        self.decay = np.empty(self.n_dates)
        self.step = np.empty(self.n_dates)
        for k in range(self.n_dates):
            decay, cov = transition(gaussian, k)
            self.decay[k] = decay[0]
            self.step[k] = np.sqrt(3.0 * cov[0, 0])

    def spot_price(self, k, s):
        return spot_price(self.gaussian, k, s)

    def _propagate(self, moves):
        # moves: (M, n) in {-1, 0, 1}
        out = np.zeros((moves.shape[0], self.n_dates + 1, 1))
        for k in range(self.n_dates):
            out[:, k + 1, 0] = self.decay[k] * out[:, k, 0] + self.step[k] * moves[:, k]
        return out

    def sample_paths(self, seed, n_paths, k_start=0, offset=0):
        first, last = _block_span(n_paths, offset)
        blocks = []
        for b in range(first, last + 1):
            rng = block_generator(seed, b)
            idx = rng.choice(3, size=(BLOCK_SIZE, self.n_dates), p=self.probabilities)
            blocks.append(self.moves[idx])
        moves = np.concatenate(blocks)
        start = offset - first * BLOCK_SIZE
        values = self._propagate(moves[start:start + n_paths])
        return PathBatch(values[:, k_start:, :], k_start)

    def enumerate_paths(self):
        """Every tree path with its probability: ``(values (3**n, n+1, 1), probs (3**n,))``."""
        grids = np.meshgrid(*[np.arange(3)] * self.n_dates, indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1)
        probs = np.prod(self.probabilities[idx], axis=1)
        return self._propagate(self.moves[idx]), probs

    def to_dict(self):
        return {"trinomial": self.gaussian.to_dict()}


ONE_FACTOR = {"alpha": [4.0], "sigma": [0.7], "rho": [[1.0]]}
THREE_FACTOR = {
    "alpha": [3.0, 3.0, 3.0],
    "sigma": [0.25, 0.25, 0.25],
    "rho": [[1.0, 0.3, 0.3], [0.3, 1.0, 0.3], [0.3, 0.3, 1.0]],
}
