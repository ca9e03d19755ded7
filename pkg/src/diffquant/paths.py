"""Sampled paths on uniform grids and the grid norms used throughout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def grid_length(dt: float, T: float) -> int:
    """Number of grid points ``floor(T/dt) + 1`` of a uniform grid on [0, T]."""
    if dt <= 0 or T <= 0:
        raise ValueError(f"dt and T must be positive, got dt={dt}, T={T}")
    return int(np.floor(T / dt + 1e-9)) + 1


def grid_weights(n: int, dt: float) -> np.ndarray:
    """Right-endpoint quadrature weights; the point t=0 carries no mass."""
    w = np.full(n, float(dt))
    w[0] = 0.0
    return w


def _as_2d(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2:
        raise ValueError(f"path values must be 1-d or 2-d, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class SampledPath:
    """A d-dimensional function sampled on the uniform grid ``k*dt`` of [0, T].

    ``values`` has shape ``(n, d)``; a 1-d input is promoted to ``d = 1``.
    """

    values: np.ndarray
    dt: float
    T: float

    def __post_init__(self):
        v = _as_2d(self.values)
        object.__setattr__(self, "values", v)
        if self.dt <= 0 or self.T <= 0:
            raise ValueError(f"dt and T must be positive, got dt={self.dt}, T={self.T}")
        if len(v) < 1:
            raise ValueError("a sampled path needs at least one grid point")
        if abs(self.dt * (len(v) - 1) - self.T) > self.dt * (1 + 1e-9):
            raise ValueError(
                f"{len(v)} grid points with dt={self.dt} do not cover [0, {self.T}]"
            )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    @property
    def flat(self) -> np.ndarray:
        """Values of a scalar path as a 1-d array."""
        if self.d != 1:
            raise ValueError("flat is only defined for d = 1")
        return self.values[:, 0]

    def at(self, t) -> np.ndarray:
        """Linear interpolation at times ``t``; returns shape ``(len(t), d)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return interp_columns(t, self.grid, self.values)

    def sup_norm(self) -> float:
        return sup_norm(self.values)

    def lq_norm(self, q: float) -> float:
        return lq_norm(self.values, self.dt, q)

    @classmethod
    def from_function(cls, f, dt: float, T: float = 1.0) -> "SampledPath":
        t = np.arange(grid_length(dt, T)) * dt
        return cls(np.asarray(f(t), dtype=float), dt, T)


@dataclass(frozen=True)
class TimeChange(SampledPath):
    """A scalar time change; ``monotone`` asserts a nondecreasing path from 0."""

    monotone: bool = field(default=False)

    def __post_init__(self):
        super().__post_init__()
        if self.d != 1:
            raise ValueError("a time change is scalar (d = 1)")
        if self.values[0, 0] != 0.0:
            raise ValueError(f"a time change starts at 0, got {self.values[0, 0]}")
        if self.monotone and np.any(np.diff(self.values[:, 0]) < 0):
            raise ValueError("time change flagged monotone but decreases somewhere")

    @classmethod
    def from_path(cls, path: SampledPath, monotone: bool | None = None) -> "TimeChange":
        v = path.values[:, 0]
        if monotone is None:
            monotone = bool(np.all(np.diff(v) >= 0))
        return cls(v, path.dt, path.T, monotone=monotone)


def interp_columns(t: np.ndarray, grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Column-wise ``np.interp`` of a ``(n, d)`` array."""
    return np.stack([np.interp(t, grid, values[:, c]) for c in range(values.shape[1])], axis=1)


def pointwise_norm(values: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis of a ``(..., n, d)`` array."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] == 1:
        return np.abs(values[..., 0])
    return np.sqrt(np.sum(values * values, axis=-1))


def sup_norm(values: np.ndarray) -> np.ndarray | float:
    """Discrete sup norm of ``(n, d)`` values, batched over leading axes."""
    return pointwise_norm(values).max(axis=-1)


def lq_norm(values: np.ndarray, dt: float, q: float, weights: np.ndarray | None = None):
    """Discrete L^q norm ``(sum_j w_j |f_j|^q)^(1/q)`` with right-endpoint weights."""
    a = pointwise_norm(values)
    if weights is None:
        weights = grid_weights(a.shape[-1], dt)
    return np.sum(weights * a**q, axis=-1) ** (1.0 / q)
