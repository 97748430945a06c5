"""Uniform time grids, grid paths and the segment (delay window) operator.

A path lives on the grid ``t_k = -r0 + k*dt`` for ``k = 0..n_steps``; node
``m`` is ``t = 0`` and nodes ``0..m`` hold the initial window. Times are kept
as integer node indices internally and only converted at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Base class for grid/segment contract violations."""


class AlignmentError(GridError):
    pass


class WindowUnderflowError(GridError):
    pass


class ParameterError(ValueError):
    pass


# relative slack when snapping a float time to a grid node
_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [-r0, T] with ``r0 = m*dt`` and ``T = n_horizon*dt``."""

    m: int
    dt: float
    n_horizon: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"delay steps m must be an integer >= 1, got {self.m}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ParameterError(f"dt must be positive and finite, got {self.dt}")
        if int(self.n_horizon) != self.n_horizon or self.n_horizon < 1:
            raise ParameterError(f"horizon steps must be an integer >= 1, got {self.n_horizon}")

    @classmethod
    def from_horizon(cls, m: int, dt: float, T: float) -> "TimeGrid":
        """Build a grid from the horizon ``T``, which must be a multiple of dt."""
        if not (T > 0):
            raise ParameterError(f"T must be positive, got {T}")
        ratio = T / dt
        n = round(ratio)
        if n < 1 or abs(ratio - n) > _ALIGN_RTOL * max(1.0, ratio):
            raise ParameterError(f"T not multiple of dt (T={T}, dt={dt})")
        return cls(m=int(m), dt=float(dt), n_horizon=int(n))

    @property
    def r0(self) -> float:
        return self.m * self.dt

    @property
    def T(self) -> float:
        return self.n_horizon * self.dt

    @property
    def n_steps(self) -> int:
        return self.m + self.n_horizon

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def time(self, k):
        """Time of node index ``k`` (scalar or array)."""
        return (np.asarray(k) - self.m) * self.dt

    def times(self) -> np.ndarray:
        return self.time(np.arange(self.n_nodes))

    def index(self, t: float) -> int:
        """Node index of grid time ``t``; raises if ``t`` is not on the grid."""
        pos = (t + self.r0) / self.dt
        k = round(pos)
        if abs(pos - k) > _ALIGN_RTOL * max(1.0, abs(pos)):
            raise AlignmentError(f"t={t} is not a grid node (dt={self.dt})")
        if k < 0 or k > self.n_steps:
            raise AlignmentError(f"t={t} lies outside [-r0, T] = [{-self.r0}, {self.T}]")
        return int(k)

    def refine(self, factor: int) -> "TimeGrid":
        """Same [-r0, T] with ``dt / factor``."""
        return TimeGrid(self.m * factor, self.dt / factor, self.n_horizon * factor)


def trapezoid_weights(m: int, dt: float) -> np.ndarray:
    """Trapezoid weights on ``m+1`` nodes of spacing dt; they sum to ``m*dt``."""
    w = np.full(m + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(frozen=True, eq=False)
class Segment:
    """Delay window ``xi(theta)``, theta in [-r0, 0], on ``m+1`` nodes.

    ``values`` has shape ``(m+1, d)``; node ``m`` is theta = 0.
    """

    r0: float
    dt: float
    m: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.m + 1:
            raise ParameterError(f"segment values must have shape (m+1, d) = ({self.m + 1}, d), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, value, dim: int | None = None) -> "Segment":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if dim is not None and value.size == 1:
            value = np.full(dim, value[0])
        return cls(grid.r0, grid.dt, grid.m, np.tile(value, (grid.m + 1, 1)))

    @classmethod
    def from_function(cls, grid: TimeGrid, fn, dim: int = 1) -> "Segment":
        """Sample ``fn(theta)`` on the window nodes."""
        thetas = grid.time(np.arange(grid.m + 1))
        vals = np.array([np.broadcast_to(np.asarray(fn(th), dtype=float), (dim,)) for th in thetas])
        return cls(grid.r0, grid.dt, grid.m, vals)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def grid_meta(self) -> tuple[float, float, int]:
        return (self.r0, self.dt, self.m)

    def thetas(self) -> np.ndarray:
        return -self.r0 + self.dt * np.arange(self.m + 1)

    def __eq__(self, other):
        if not isinstance(other, Segment):
            return NotImplemented
        return self.grid_meta == other.grid_meta and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridPath:
    """A d-dimensional path on ``grid``; ``values`` has shape ``(n_steps+1, d)``."""

    grid: TimeGrid
    values: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_nodes:
            raise ParameterError(f"path values must have shape ({self.grid.n_nodes}, d), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("path contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dim", v.shape[1])

    @classmethod
    def constant_extension(cls, grid: TimeGrid, psi: Segment) -> "GridPath":
        """The path ``psi(t ∧ 0)``: the initial window, then frozen at psi(0)."""
        vals = np.empty((grid.n_nodes, psi.dim))
        vals[: grid.m + 1] = psi.values
        vals[grid.m + 1 :] = psi.values[-1]
        return cls(grid, vals)

    def at(self, t: float) -> np.ndarray:
        return self.values[self.grid.index(t)]


def _check_grid(path: GridPath, k: int):
    if k < path.grid.m:
        raise WindowUnderflowError(f"segment at node {k} needs history before -r0")


def extract_segment_at(path: GridPath, k: int) -> Segment:
    """Segment ending at node index ``k`` (``k >= m``)."""
    _check_grid(path, k)
    g = path.grid
    if k > g.n_steps:
        raise AlignmentError(f"node {k} beyond the path horizon")
    return Segment(g.r0, g.dt, g.m, path.values[k - g.m : k + 1])


def extract_segment(path: GridPath, t: float) -> Segment:
    """The window ``X_t(theta) = X(t + theta)``, theta in [-r0, 0]."""
    if t < 0 and abs(t) > _ALIGN_RTOL * path.grid.dt:
        raise WindowUnderflowError(f"t={t} < 0: window would start before -r0")
    return extract_segment_at(path, path.grid.index(t))


def evaluate(seg: Segment, node_index: int) -> np.ndarray:
    if not 0 <= node_index <= seg.m:
        raise IndexError(f"node index {node_index} outside 0..{seg.m}")
    return seg.values[node_index]


def sup_norm(seg: Segment) -> float:
    """Grid maximum of the Euclidean norm over the window."""
    return float(np.max(np.linalg.norm(seg.values, axis=1)))


def lp_norm(seg: Segment, p: float) -> float:
    """Trapezoid approximation of ``(∫_{-r0}^0 |xi|^p)^{1/p}``."""
    if p < 2:
        raise ParameterError(f"p must be >= 2, got {p}")
    w = trapezoid_weights(seg.m, seg.dt)
    return float(np.dot(w, np.linalg.norm(seg.values, axis=1) ** p) ** (1.0 / p))


# Batched helpers on raw window arrays of shape (..., m+1, d).

def window_sup_sq(windows: np.ndarray) -> np.ndarray:
    return np.max(np.sum(windows * windows, axis=-1), axis=-1)


def window_lp_p(windows: np.ndarray, dt: float, p: float) -> np.ndarray:
    m = windows.shape[-2] - 1
    w = trapezoid_weights(m, dt)
    return np.sum(w * np.linalg.norm(windows, axis=-1) ** p, axis=-1)
