"""Empirical laws on segment space and Wasserstein-2 distances between them.

An ensemble is ``N`` equally weighted segments stored as one array of shape
``(N, m+1, d)``. For equal-size uniform measures the W2 problem is an
assignment problem, solved exactly up to ``DEFAULT_EXACT_CAP`` atoms; larger
problems go to the entropic (Sinkhorn) solver.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .segment_core import Segment, TimeGrid, trapezoid_weights, window_lp_p, window_sup_sq

DEFAULT_EXACT_CAP = 512

# rows per block when building cost matrices (bounds temporary memory)
_COST_BLOCK = 64


class SizeError(ValueError):
    pass


class CapacityError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, gap: float):
        super().__init__(f"{message} (last duality gap {gap:.3e})")
        self.gap = gap


class GroundMetric(enum.Enum):
    SUP = "sup"
    L2 = "l2"

    @classmethod
    def parse(cls, value) -> "GroundMetric":
        if isinstance(value, cls):
            return value
        aliases = {"sup": cls.SUP, "supnorm": cls.SUP, "l2": cls.L2, "l2weighted": cls.L2}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown ground metric {value!r}") from None


class Moment(enum.Enum):
    SUP_SQ = "sup_sq"
    LP_P = "lp_p"


@dataclass(frozen=True, eq=False)
class SegmentEnsemble:
    """Uniform empirical measure over ``values[i]``, shape ``(N, m+1, d)``."""

    r0: float
    dt: float
    m: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[1] != self.m + 1:
            raise SizeError(f"ensemble values must have shape (N, m+1, d), got {v.shape}")
        if v.shape[0] < 1:
            raise SizeError("ensemble needs at least one sample")
        if v.flags.writeable:
            v = v.view()
            v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_segments(cls, segments) -> "SegmentEnsemble":
        segments = list(segments)
        if not segments:
            raise SizeError("ensemble needs at least one sample")
        meta = segments[0].grid_meta
        dim = segments[0].dim
        for s in segments:
            if s.grid_meta != meta or s.dim != dim:
                raise SizeError("all samples must share grid metadata and dimension")
        return cls(*meta, np.stack([s.values for s in segments]))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def grid_meta(self) -> tuple[float, float, int]:
        return (self.r0, self.dt, self.m)

    def sample(self, i: int) -> Segment:
        return Segment(self.r0, self.dt, self.m, self.values[i])

    def __iter__(self):
        return (self.sample(i) for i in range(self.n))

    def mean_at(self, node: int) -> np.ndarray:
        """Sample mean of ``x(theta_node)``; node m is theta = 0."""
        return self.values[:, node, :].mean(axis=0)


class LawFlow:
    """Time-indexed empirical segment laws backed by an ``(N, n_nodes, d)`` path array.

    Snapshot ``j`` is the ensemble of windows ending at horizon step
    ``j * macro_stride``; snapshots are views into the path array.
    """

    def __init__(self, grid: TimeGrid, paths: np.ndarray, macro_stride: int = 1):
        paths = np.asarray(paths, dtype=float)
        if paths.ndim != 3 or paths.shape[1] != grid.n_nodes:
            raise SizeError(f"paths must have shape (N, {grid.n_nodes}, d), got {paths.shape}")
        if macro_stride < 1:
            raise ValueError("macro_stride must be >= 1")
        self.grid = grid
        self.paths = paths
        self.macro_stride = int(macro_stride)

    @classmethod
    def constant(cls, grid: TimeGrid, psi: Segment, n: int, macro_stride: int = 1) -> "LawFlow":
        """Flow of the deterministic path ``psi(t ∧ 0)`` replicated ``n`` times."""
        from .segment_core import GridPath

        path = GridPath.constant_extension(grid, psi).values
        return cls(grid, np.broadcast_to(path, (n,) + path.shape), macro_stride)

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def __len__(self) -> int:
        return self.grid.n_horizon // self.macro_stride + 1

    def snapshot_step(self, j: int) -> int:
        """Horizon step (0 = time 0) of snapshot ``j``."""
        return j * self.macro_stride

    def snapshot(self, j: int) -> SegmentEnsemble:
        if not 0 <= j < len(self):
            raise IndexError(f"snapshot {j} outside 0..{len(self) - 1}")
        return self.at_step(self.snapshot_step(j))

    def at_step(self, step: int) -> SegmentEnsemble:
        """Ensemble of windows ending at horizon step ``step`` (exact, not snapped)."""
        g = self.grid
        k = g.m + step
        return SegmentEnsemble(g.r0, g.dt, g.m, self.paths[:, k - g.m : k + 1, :])

    def lookup(self, step: int) -> SegmentEnsemble:
        """Snapshot at the macro step at-or-before horizon step ``step``."""
        return self.snapshot(min(step // self.macro_stride, len(self) - 1))

    @property
    def snapshots(self) -> list[SegmentEnsemble]:
        return [self.snapshot(j) for j in range(len(self))]

    def snapshot_times(self) -> np.ndarray:
        return np.arange(len(self)) * self.macro_stride * self.grid.dt


def _check_pair(a: SegmentEnsemble, b: SegmentEnsemble):
    if a.grid_meta != b.grid_meta or a.dim != b.dim:
        raise SizeError("ensembles must share grid metadata and dimension")
    if a.n != b.n:
        raise SizeError(f"ensembles must have equal size, got {a.n} and {b.n}")


def pair_sq_distances(x: np.ndarray, y: np.ndarray, metric: GroundMetric, dt: float) -> np.ndarray:
    """Squared ground distance between matched windows ``x[i]`` and ``y[i]``."""
    metric = GroundMetric.parse(metric)
    diff = x - y
    sq = np.sum(diff * diff, axis=-1)
    if metric is GroundMetric.SUP:
        return np.max(sq, axis=-1)
    return np.sum(sq * trapezoid_weights(x.shape[-2] - 1, dt), axis=-1)


def cost_matrix(a: SegmentEnsemble, b: SegmentEnsemble, metric: GroundMetric) -> np.ndarray:
    """``C[i, j] = d(a_i, b_j)^2``."""
    metric = GroundMetric.parse(metric)
    n = a.n
    out = np.empty((n, b.n))
    if metric is GroundMetric.L2:
        w = trapezoid_weights(a.m, a.dt)
    for start in range(0, n, _COST_BLOCK):
        stop = min(start + _COST_BLOCK, n)
        diff = a.values[start:stop, None, :, :] - b.values[None, :, :, :]
        sq = np.sum(diff * diff, axis=-1)
        if metric is GroundMetric.SUP:
            out[start:stop] = np.max(sq, axis=-1)
        else:
            out[start:stop] = np.sum(sq * w, axis=-1)
    return out


def _assignment_value(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    chosen = sorted(cost[rows, cols].tolist())
    return math.sqrt(math.fsum(chosen) / cost.shape[0])


def w2_exact(a: SegmentEnsemble, b: SegmentEnsemble, metric=GroundMetric.SUP, cap: int = DEFAULT_EXACT_CAP) -> float:
    """Exact W2 between equal-size uniform empirical measures (assignment problem)."""
    _check_pair(a, b)
    if a.n > cap:
        raise CapacityError(f"N={a.n} exceeds the exact-solver cap {cap}; use w2_entropic")
    return _assignment_value(cost_matrix(a, b, metric))


def _marginal_values(a: SegmentEnsemble, node: int) -> np.ndarray:
    if a.dim != 1:
        raise SizeError(f"w2_sorted_1d needs d = 1, got d = {a.dim}")
    if not 0 <= node <= a.m:
        raise IndexError(f"node {node} outside 0..{a.m}")
    return a.values[:, node, 0]


def w2_sorted_1d(a: SegmentEnsemble, b: SegmentEnsemble, node: int) -> float:
    """W2 between the scalar marginals at one window node, via monotone pairing."""
    _check_pair(a, b)
    x = np.sort(_marginal_values(a, node))
    y = np.sort(_marginal_values(b, node))
    return math.sqrt(math.fsum(((x - y) ** 2).tolist()) / a.n)


def marginal(a: SegmentEnsemble, node: int) -> SegmentEnsemble:
    """Constant-window ensemble carrying only the marginal at ``node``.

    Its SUP-metric W2 equals the scalar W2 of that marginal.
    """
    vals = a.values[:, node : node + 1, :]
    return SegmentEnsemble(0.0, a.dt, 0, vals)


def _round_to_couplings(plan: np.ndarray, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Project a nearly feasible plan onto the couplings of ``r`` and ``c``.

    Scales down over-full rows and columns, then spreads the missing mass as
    a rank-one correction; the result has exactly the prescribed marginals.
    """
    x = plan * np.minimum(r / plan.sum(axis=1), 1.0)[:, None]
    x = x * np.minimum(c / x.sum(axis=0), 1.0)[None, :]
    err_r = r - x.sum(axis=1)
    err_c = c - x.sum(axis=0)
    mass = err_r.sum()
    if mass > 0:
        x = x + np.outer(err_r, err_c) / mass
    return x


def w2_entropic(a: SegmentEnsemble, b: SegmentEnsemble, metric=GroundMetric.SUP, reg: float = 1e-2,
                max_iter: int = 10_000, tol: float = 1e-4) -> float:
    """Square root of the transport cost of the rounded Sinkhorn plan.

    Log-domain Sinkhorn iterations run until the row marginals match to
    ``tol`` (L1); the plan is then rounded onto the exact coupling set, so
    the returned value is an upper bound of W2 whose bias vanishes as
    ``reg -> 0``. Raises ConvergenceError carrying the primal-dual gap if
    ``tol`` is not reached within ``max_iter`` sweeps.
    """
    _check_pair(a, b)
    if reg <= 0:
        raise ValueError("reg must be positive")
    cost = cost_matrix(a, b, metric)
    n = a.n
    log_w = np.full(n, -math.log(n))
    f = np.zeros(n)
    g = np.zeros(n)
    err = np.inf

    def log_plan():
        return (f[:, None] + g[None, :] - cost) / reg + log_w[:, None] + log_w[None, :]

    for it in range(max_iter):
        f = -reg * logsumexp((g[None, :] - cost) / reg + log_w[None, :], axis=1)
        g = -reg * logsumexp((f[:, None] - cost) / reg + log_w[:, None], axis=0)
        if it % 10 == 0 or it == max_iter - 1:
            err = np.abs(np.exp(log_plan()).sum(axis=1) - 1.0 / n).sum()
            if err < tol:
                break
    lp = log_plan()
    plan = np.exp(lp)
    if err >= tol:
        transport = float(np.sum(plan * cost))
        kl = float(np.sum(plan * (lp - log_w[:, None] - log_w[None, :])) - plan.sum() + 1.0)
        primal = transport + reg * kl
        dual = float(f.mean() + g.mean() - reg * (plan.sum() - 1.0))
        raise ConvergenceError(f"Sinkhorn did not converge in {max_iter} iterations", primal - dual)
    w = np.full(n, 1.0 / n)
    coupling = _round_to_couplings(plan, w, w)
    return math.sqrt(max(float(np.sum(coupling * cost)), 0.0))


def w2(a: SegmentEnsemble, b: SegmentEnsemble, metric=GroundMetric.SUP, cap: int = DEFAULT_EXACT_CAP,
       reg: float | None = None) -> float:
    """Exact W2 when ``N <= cap``, otherwise the entropic approximation."""
    if a.n <= cap:
        return w2_exact(a, b, metric, cap)
    if reg is None:
        reg = 1e-2 * float(np.median(cost_matrix(a, b, metric))) or 1e-12
    return w2_entropic(a, b, metric, reg)


def coupling_upper_bound(pairs, metric=GroundMetric.SUP) -> float:
    """RMS ground distance over explicitly paired segments.

    ``pairs`` is either a sequence of ``(Segment, Segment)`` or a tuple of two
    ``SegmentEnsemble`` paired by index (the synchronous coupling).
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], SegmentEnsemble):
        a, b = pairs
        _check_pair(a, b)
        x, y, dt = a.values, b.values, a.dt
    else:
        pairs = list(pairs)
        if not pairs:
            raise SizeError("need at least one pair")
        for s, t in pairs:
            if s.grid_meta != t.grid_meta or s.dim != t.dim:
                raise SizeError("paired segments must share grid metadata and dimension")
        x = np.stack([s.values for s, _ in pairs])
        y = np.stack([t.values for _, t in pairs])
        dt = pairs[0][0].dt
    sq = pair_sq_distances(x, y, metric, dt)
    return math.sqrt(math.fsum(sq.tolist()) / len(sq))


def ensemble_moment(a: SegmentEnsemble, which=Moment.SUP_SQ, p: float = 2.0) -> float:
    """Sample mean of ``sup_norm^2`` or ``lp_norm^p`` over the ensemble."""
    which = Moment(which) if not isinstance(which, Moment) else which
    if which is Moment.SUP_SQ:
        vals = window_sup_sq(a.values)
    else:
        vals = window_lp_p(a.values, a.dt, p)
    return math.fsum(vals.tolist()) / a.n
