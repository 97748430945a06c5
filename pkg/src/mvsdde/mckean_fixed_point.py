"""Picard iteration on law flows, the interacting-particle solver and an exact mean oracle.

``apply_lambda`` freezes a law flow, solves the resulting path-dependent SDE
for N particles and returns the output law flow. Every call with the same
``(seed, run, N)`` reuses the same Brownian increments, so consecutive Picard
iterates are synchronously coupled and their distance measures the
contraction of the map rather than resampling noise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .empirical_law import (DEFAULT_EXACT_CAP, CapacityError, GroundMetric, LawFlow, SegmentEnsemble,
                            pair_sq_distances, w2_exact)
from .models import LinearMeanFieldParams, ModelCoefficients
from .sdde_euler import EnsembleRun, NoisePlan, euler_kernel, integrate_ensemble
from .segment_core import GridPath, Segment, TimeGrid, window_sup_sq


class Method(enum.Enum):
    PICARD = "picard"
    PARTICLE = "particle"


@dataclass
class McKeanSolution:
    paths: np.ndarray          # (N, n_nodes, d)
    law_flow: LawFlow
    method: Method
    grid: TimeGrid

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    def path(self, i: int) -> GridPath:
        return GridPath(self.grid, self.paths[i])

    def mean_path(self) -> np.ndarray:
        return self.paths.mean(axis=0)

    def mean_stderr(self) -> np.ndarray:
        return self.paths.std(axis=0, ddof=1) / math.sqrt(self.n)


@dataclass(frozen=True)
class PicardRecord:
    iter: int
    flow_distance: float   # W2 between the laws of iterates n and n+1, worst over checked snapshots
    path_distance: float   # mean over particles of sup_t |X^(n) - X^(n+1)|²


@dataclass
class PicardReport:
    records: list[PicardRecord] = field(default_factory=list)
    converged: bool = False
    rms: float = 0.0
    exact_metric: bool = True
    seed: int = 0
    n: int = 0

    @property
    def iterations_used(self) -> int:
        return self.records[-1].iter if self.records else 0

    def flow_distances(self) -> np.ndarray:
        return np.array([r.flow_distance for r in self.records])

    def path_distances(self) -> np.ndarray:
        return np.array([r.path_distance for r in self.records])


def apply_lambda(model: ModelCoefficients, psi: Segment, grid: TimeGrid, seed: int, n: int, input_flow: LawFlow,
                 run: int = 0, workers: int = 1, dw: np.ndarray | None = None) -> EnsembleRun:
    """One application of the fixed-point map: solve with ``input_flow`` frozen."""
    return integrate_ensemble(model, psi, input_flow, grid, seed, n, run=run, workers=workers, dw=dw)


def _checked_steps(grid: TimeGrid, stride: int) -> list[int]:
    steps = list(range(0, grid.n_horizon + 1, stride))
    if steps[-1] != grid.n_horizon:
        steps.append(grid.n_horizon)
    return steps


def flow_distance(a: LawFlow, b: LawFlow, steps, metric=GroundMetric.SUP, cap: int = DEFAULT_EXACT_CAP) -> float:
    """Largest W2 over the given horizon steps.

    Exact when ``N <= cap``; above the cap the index pairing (synchronous
    coupling) gives an upper bound instead.
    """
    worst = 0.0
    for s in steps:
        x, y = a.at_step(s), b.at_step(s)
        if a.n <= cap:
            d = w2_exact(x, y, metric, cap)
        else:
            sq = pair_sq_distances(x.values, y.values, metric, x.dt)
            d = math.sqrt(math.fsum(sq.tolist()) / len(sq))
        worst = max(worst, d)
    return worst


def picard_solve(model: ModelCoefficients, psi: Segment, grid: TimeGrid, seed: int, n: int, max_iters: int = 12,
                 tol: float = 1e-3, run: int = 0, workers: int = 1, metric=GroundMetric.SUP,
                 w2_cap: int = DEFAULT_EXACT_CAP, metric_stride: int | None = None,
                 macro_stride: int = 1) -> tuple[McKeanSolution, PicardReport]:
    """Iterate ``mu <- law(Λ(mu))`` from the constant extension of psi.

    Record ``n`` compares iterates ``n`` and ``n+1`` (iterate 0 is
    ``psi(t ∧ 0)``). Stops once ``flow_distance <= tol * rms`` where ``rms``
    is the root of the largest mean squared sup-norm of the newest iterate's
    segments; at most ``max_iters`` records are produced.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    stride = metric_stride or max(1, grid.m // 4)
    steps = _checked_steps(grid, stride)
    dw = NoisePlan.for_grid(grid, seed, model.dim, run).block(n, workers)
    flow = LawFlow.constant(grid, psi, n, macro_stride)
    report = PicardReport(exact_metric=n <= w2_cap, seed=seed, n=n)
    prev_paths = flow.paths
    out = None

    for it in range(max_iters):
        out = apply_lambda(model, psi, grid, seed, n, flow, run, workers, dw=dw)
        new_flow = LawFlow(grid, out.paths, macro_stride)
        fd = flow_distance(flow, new_flow, steps, metric, w2_cap)
        pd = float(np.mean(window_sup_sq(prev_paths - out.paths)))
        report.records.append(PicardRecord(it, fd, pd))
        report.rms = math.sqrt(max(float(np.mean(window_sup_sq(new_flow.at_step(s).values))) for s in steps))
        flow, prev_paths = new_flow, out.paths
        if fd <= tol * report.rms:
            report.converged = True
            break

    return McKeanSolution(out.paths, flow, Method.PICARD, grid), report


def particle_solve(model: ModelCoefficients, psi: Segment, grid: TimeGrid, seed: int, n: int, run: int = 0,
                   workers: int = 1, macro_stride: int = 1) -> McKeanSolution:
    """N interacting particles: the law argument at each step is the empirical
    law of all current windows, the particle itself included.

    Uses the same noise streams as :func:`integrate_ensemble`, so for a
    law-independent model the two agree bitwise.
    """
    if psi.m != grid.m or psi.dt != grid.dt or psi.dim != model.dim:
        raise ValueError("initial segment does not match grid or model")
    dw = NoisePlan.for_grid(grid, seed, model.dim, run).block(n, workers)
    m = grid.m

    def current_law(k, paths):
        return SegmentEnsemble(grid.r0, grid.dt, m, paths[:, k : m + k + 1])

    paths = euler_kernel(model, psi.values, grid, dw, current_law)
    return McKeanSolution(paths, LawFlow(grid, paths, macro_stride), Method.PARTICLE, grid)


# --- exact mean oracle ---------------------------------------------------------

MAX_ORACLE_INTERVALS = 4


def _cell_solution(a: float, bd: float, f0: float, pg: Polynomial, qg: Polynomial):
    """Solve ``f' = a f + bd g`` on one cell with ``g = e^{aτ} pg(τ) + qg(τ)``, f(0) = f0.

    Returns ``(P, Q)`` with ``f(τ) = e^{aτ} P(τ) + Q(τ)``.
    """
    int_p = pg.integ()
    if a == 0.0:
        return Polynomial([0.0]), f0 + bd * (int_p + qg.integ())
    # particular solution of r' = a r + qg:  r = -Σ_j qg^(j) / a^(j+1)
    r = Polynomial([0.0])
    deriv = qg
    scale = 1.0 / a
    for _ in range(len(qg.coef)):
        r = r - deriv * scale
        deriv = deriv.deriv()
        scale /= a
    return f0 - bd * r(0.0) + bd * int_p, bd * r


def mean_oracle_method_of_steps(params: LinearMeanFieldParams, psi_mean: Segment, grid: TimeGrid) -> GridPath:
    """Mean path of the linear mean-field model by exact integration cell by cell.

    Taking expectations gives ``m' = A m(t) + B m(t - r0)`` with
    ``A = a_self + c_mean`` and ``B = b_delay + e_mean_delay``. psi is read
    as piecewise linear between nodes; on each grid cell the solution has
    the form ``e^{Aτ} P(τ) + Q(τ)`` with polynomials P, Q in local time τ,
    and the delayed argument on a cell is the representation from ``m``
    cells earlier.
    """
    if grid.n_horizon > MAX_ORACLE_INTERVALS * grid.m:
        raise CapacityError(f"mean oracle supports T <= {MAX_ORACLE_INTERVALS} r0")
    a = params.a_self + params.c_mean
    bd = params.b_delay + params.e_mean_delay
    dt, m = grid.dt, grid.m
    out = np.empty((grid.n_nodes, psi_mean.dim))
    out[: m + 1] = psi_mean.values
    tau = Polynomial([0.0, 1.0 / dt])
    zero = Polynomial([0.0])

    for comp in range(psi_mean.dim):
        psi = psi_mean.values[:, comp]
        cells: list[tuple[Polynomial, Polynomial]] = []
        f0 = psi[m]
        for i in range(grid.n_horizon):
            if i < m:
                pg, qg = zero, psi[i] + (psi[i + 1] - psi[i]) * tau
            else:
                pg, qg = cells[i - m]
            P, Q = _cell_solution(a, bd, f0, pg, qg)
            cells.append((P, Q))
            f0 = math.exp(a * dt) * P(dt) + Q(dt)
            out[m + i + 1, comp] = f0
    return GridPath(grid, out)
