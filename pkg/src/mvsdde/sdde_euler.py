"""Euler-Maruyama for the frozen-law delay equation, with replayable noise.

Randomness: every stream is ``numpy.random.default_rng(SeedSequence([seed,
tag, *indices]))`` where ``tag`` names the purpose (see the ``TAG_*``
constants) and ``indices`` are e.g. ``(run, particle)``. Stream contents
therefore depend only on the global seed and the indices, never on how many
particles are simulated or on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .empirical_law import LawFlow, SegmentEnsemble
from .models import ModelCoefficients
from .segment_core import GridPath, Segment, TimeGrid

TAG_SDDE = 1
TAG_GALERKIN = 2
TAG_PROBE = 3


def stream_rng(seed: int, tag: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tag), *map(int, indices)]))


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, particle: int | None = None):
        where = f"step {step}" if particle is None else f"step {step}, particle {particle}"
        super().__init__(f"non-finite state produced at {where}")
        self.step = step
        self.particle = particle


@dataclass(frozen=True)
class NoisePlan:
    """Brownian increments for the streams ``(seed, run, particle)`` over ``n_steps`` steps."""

    seed: int
    run: int
    dim: int
    dt: float
    n_steps: int
    tag: int = TAG_SDDE

    def increments(self, particle: int) -> np.ndarray:
        """Shape ``(n_steps, dim)``; row k is W(t_{k+1}) - W(t_k)."""
        rng = stream_rng(self.seed, self.tag, self.run, particle)
        return rng.standard_normal((self.n_steps, self.dim)) * math.sqrt(self.dt)

    def block(self, particles, workers: int = 1) -> np.ndarray:
        """Increments for a range/sequence (or count) of particles, shape ``(N, n_steps, dim)``."""
        if isinstance(particles, int):
            particles = range(particles)
        particles = list(particles)
        if workers > 1 and len(particles) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(self.increments, particles))
        else:
            rows = [self.increments(i) for i in particles]
        if not rows:
            return np.empty((0, self.n_steps, self.dim))
        return np.stack(rows)

    @classmethod
    def for_grid(cls, grid: TimeGrid, seed: int, dim: int, run: int = 0) -> "NoisePlan":
        return cls(seed=seed, run=run, dim=dim, dt=grid.dt, n_steps=grid.n_horizon)


def aggregate_increments(dw: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive fine increments: ``(N, n*factor, d) -> (N, n, d)``."""
    n, steps, d = dw.shape
    if steps % factor:
        raise ValueError(f"{steps} fine steps do not split into blocks of {factor}")
    return dw.reshape(n, steps // factor, factor, d).sum(axis=2)


class FrozenLawInput:
    """A law flow read piecewise-constantly at the macro step at-or-before each step."""

    def __init__(self, flow: LawFlow):
        self.flow = flow

    def covers(self, grid: TimeGrid) -> bool:
        g = self.flow.grid
        return g.m == grid.m and g.dt == grid.dt and g.n_horizon >= grid.n_horizon

    def lookup(self, step: int) -> SegmentEnsemble:
        return self.flow.lookup(step)


def _as_frozen(flow) -> FrozenLawInput:
    return flow if isinstance(flow, FrozenLawInput) else FrozenLawInput(flow)


def _check_inputs(model: ModelCoefficients, psi: Segment, grid: TimeGrid):
    if psi.m != grid.m or psi.dt != grid.dt:
        raise ValueError("initial segment does not match the grid")
    if psi.dim != model.dim:
        raise ValueError(f"initial segment has dim {psi.dim}, model expects {model.dim}")


def euler_kernel(model: ModelCoefficients, psi_values: np.ndarray, grid: TimeGrid, dw: np.ndarray,
                 law_at, particle_offset: int = 0) -> np.ndarray:
    """Explicit Euler-Maruyama over all particles at once.

    ``law_at(step, paths)`` returns the law argument for horizon step
    ``step``; ``paths`` holds nodes ``<= m + step`` filled in. Node ``m+k+1``
    uses only increments ``dw[:, k]`` and earlier nodes.
    """
    n, n_h, d = dw.shape
    m, dt = grid.m, grid.dt
    paths = np.empty((n, grid.n_nodes, d))
    paths[:, : m + 1] = psi_values
    for k in range(n_h):
        windows = paths[:, k : m + k + 1]
        law = law_at(k, paths)
        t = k * dt
        # overflow is reported below as a DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            drift = model.drift(t, windows, law)
            sig = np.asarray(model.diffusion(t, windows, law))
            if sig.ndim == 2:
                noise = np.sum(sig[None, :, :] * dw[:, k, None, :], axis=-1)
            else:
                noise = np.sum(sig * dw[:, k, None, :], axis=-1)
            new = windows[:, -1] + drift * dt + noise
        finite = np.isfinite(new).all(axis=1)
        if not finite.all():
            raise DivergenceError(k, particle_offset + int(np.argmin(finite)))
        paths[:, m + k + 1] = new
    return paths


def integrate_with_increments(model: ModelCoefficients, psi: Segment, flow, grid: TimeGrid,
                              dw: np.ndarray) -> np.ndarray:
    """Frozen-law Euler run driven by explicit increments ``(N, n_horizon, d)``."""
    _check_inputs(model, psi, grid)
    frozen = _as_frozen(flow)
    if not frozen.covers(grid):
        raise ValueError("law flow does not cover the integration grid")
    if dw.shape[1] != grid.n_horizon or dw.shape[2] != model.dim:
        raise ValueError(f"increments must have shape (N, {grid.n_horizon}, {model.dim})")
    return euler_kernel(model, psi.values, grid, dw, lambda k, _: frozen.lookup(k))


def integrate_sdde(model: ModelCoefficients, psi: Segment, flow, grid: TimeGrid, noise: NoisePlan,
                   particle: int = 0) -> GridPath:
    """One path of the frozen-law equation driven by stream ``(noise.run, particle)``."""
    dw = noise.increments(particle)[None]
    return GridPath(grid, integrate_with_increments(model, psi, flow, grid, dw)[0])


@dataclass
class EnsembleRun:
    paths: np.ndarray
    law_flow: LawFlow
    grid: TimeGrid

    def path(self, i: int) -> GridPath:
        return GridPath(self.grid, self.paths[i])


def _chunks(n: int, workers: int):
    workers = max(1, min(workers, n))
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def integrate_ensemble(model: ModelCoefficients, psi: Segment, flow, grid: TimeGrid, seed: int, n: int,
                       run: int = 0, macro_stride: int = 1, workers: int = 1,
                       dw: np.ndarray | None = None) -> EnsembleRun:
    """N independent frozen-law paths on streams ``(run, 0..N-1)``.

    Particles are split into contiguous chunks across ``workers`` threads;
    the output is bitwise identical for any worker count.
    """
    _check_inputs(model, psi, grid)
    frozen = _as_frozen(flow)
    if not frozen.covers(grid):
        raise ValueError("law flow does not cover the integration grid")
    if dw is None:
        dw = NoisePlan.for_grid(grid, seed, model.dim, run).block(n, workers)

    def solve(bounds):
        a, b = bounds
        return euler_kernel(model, psi.values, grid, dw[a:b], lambda k, _: frozen.lookup(k), particle_offset=a)

    parts = _chunks(n, workers)
    if len(parts) > 1:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            pieces = list(pool.map(solve, parts))
    else:
        pieces = [solve(parts[0])]
    paths = np.concatenate(pieces, axis=0)
    return EnsembleRun(paths, LawFlow(grid, paths, macro_stride), grid)
