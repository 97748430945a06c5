"""Spectral Galerkin scheme for the porous-medium-type delay SPDE on (0, L).

Fields are coefficient vectors in the L²-orthonormal Dirichlet sine basis
``e_k(x) = sqrt(2/L) sin(k pi x / L)`` with ``-Δ e_k = λ_k e_k``. In these
coefficients:

* ``V = L^p(0, L)`` is measured by quadrature on an interior x-grid,
* ``H = (H_0^{1,2})^*`` has ``‖u‖_H² = Σ c_k² / λ_k``,
* the projection ``P_n`` is truncation to the first n coefficients,
* the drift ``Δψ(u)`` has coefficients ``-λ_k ⟨ψ(u), e_k⟩_{L²}``.

The x-grid ``x_j = j L / (n_x + 1)``, ``j = 1..n_x`` with uniform weights
makes the sampled basis exactly orthonormal (it is the DST-I grid) for
every ``k <= n_x``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .empirical_law import LawFlow
from .models import PorousMediumParams, power_law
from .sdde_euler import TAG_GALERKIN, DivergenceError, stream_rng
from .segment_core import TimeGrid

# replicas per independent noise stream; fixed so results do not depend on workers
DEFAULT_CHUNK = 1024
# time steps of noise drawn per RNG call
_NOISE_BLOCK = 32
STABILITY_LIMIT = 0.5


class StiffnessWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GelfandSpec:
    domain_length: float
    p: float
    n_modes: int
    n_x: int | None = None
    basis: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.domain_length > 0:
            raise ValueError("domain length must be positive")
        if not self.p >= 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if self.n_modes < 1:
            raise ValueError("need at least one mode")
        n_x = 8 * self.n_modes if self.n_x is None else int(self.n_x)
        if n_x < self.n_modes:
            raise ValueError("x-grid must have at least n_modes points")
        object.__setattr__(self, "n_x", n_x)
        k = np.arange(1, self.n_modes + 1)
        basis = math.sqrt(2.0 / self.domain_length) * np.sin(np.outer(k, self.x_grid) * math.pi / self.domain_length)
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @property
    def eigenvalues(self) -> np.ndarray:
        return (np.arange(1, self.n_modes + 1) * math.pi / self.domain_length) ** 2

    @property
    def x_grid(self) -> np.ndarray:
        return np.arange(1, self.n_x + 1) * (self.domain_length / (self.n_x + 1))

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_x, self.domain_length / (self.n_x + 1))

    @property
    def h(self) -> float:
        return self.domain_length / (self.n_x + 1)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients ``(..., n_modes)`` to grid values ``(..., n_x)``."""
        return np.asarray(coeffs, dtype=float) @ self.basis

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Grid values ``(..., n_x)`` to coefficients ``(..., n_modes)`` by discrete sine projection."""
        return (np.asarray(values, dtype=float) @ self.basis.T) * self.h

    def with_modes(self, n: int) -> "GelfandSpec":
        return GelfandSpec(self.domain_length, self.p, n)


@dataclass(frozen=True, eq=False)
class SpectralField:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral field has non-finite coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def mode(cls, k: int, n: int, amplitude: float = 1.0) -> "SpectralField":
        """``amplitude * e_k`` in an n-mode representation (k is 1-based)."""
        c = np.zeros(n)
        c[k - 1] = amplitude
        return cls(c)


@dataclass(frozen=True, eq=False)
class SpectralSegment:
    """Window of fields over theta in [-r0, 0]; ``values`` has shape (m+1, n)."""

    r0: float
    dt: float
    m: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.m + 1:
            raise ValueError(f"spectral segment needs shape (m+1, n) = ({self.m + 1}, n), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, field_: SpectralField) -> "SpectralSegment":
        return cls(grid.r0, grid.dt, grid.m, np.tile(field_.coeffs, (grid.m + 1, 1)))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def at_zero(self) -> SpectralField:
        return SpectralField(self.values[-1])


def _coeffs(u) -> np.ndarray:
    return u.coeffs if isinstance(u, SpectralField) else np.asarray(u, dtype=float)


def project_pn(u, n: int) -> SpectralField:
    """Orthogonal projection onto span{e_1..e_n}: keep the first n coefficients."""
    c = _coeffs(u)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > c.shape[-1]:
        raise ValueError(f"cannot project onto {n} modes: field has only {c.shape[-1]}")
    return SpectralField(c[:n])


def project_segment(seg: SpectralSegment, n: int) -> SpectralSegment:
    if n > seg.n:
        raise ValueError(f"cannot project onto {n} modes: segment has only {seg.n}")
    return SpectralSegment(seg.r0, seg.dt, seg.m, seg.values[:, :n])


def _spec_coeffs(u, spec: GelfandSpec) -> np.ndarray:
    c = _coeffs(u)
    if c.shape[-1] > spec.n_modes:
        raise ValueError("field has more modes than the spec")
    if c.shape[-1] < spec.n_modes:
        c = np.concatenate([c, np.zeros(c.shape[:-1] + (spec.n_modes - c.shape[-1],))], axis=-1)
    return c


def norm_V(u, spec: GelfandSpec) -> float:
    """``(Σ_j h |u(x_j)|^p)^(1/p)`` on the x-grid."""
    u_x = spec.synthesize(_spec_coeffs(u, spec))
    return float(np.sum(spec.weights * np.abs(u_x) ** spec.p) ** (1.0 / spec.p))


def norm_H(u, spec: GelfandSpec) -> float:
    c = _spec_coeffs(u, spec)
    return float(math.sqrt(np.sum(c * c / spec.eigenvalues)))


def h_inner(u, v, spec: GelfandSpec) -> float:
    return float(np.sum(_spec_coeffs(u, spec) * _spec_coeffs(v, spec) / spec.eigenvalues))


def duality_pairing(u, v, spec: GelfandSpec) -> float:
    """Quadrature of ``u v`` over (0, L)."""
    u_x = spec.synthesize(_spec_coeffs(u, spec))
    v_x = spec.synthesize(_spec_coeffs(v, spec))
    return float(np.sum(spec.weights * u_x * v_x))


def psi_coefficients(c: np.ndarray, spec: GelfandSpec, p: float) -> np.ndarray:
    """Sine coefficients of ``ψ(u)``; exact identity for p = 2."""
    if p == 2:
        return np.array(c, dtype=float)
    return spec.analyze(power_law(spec.synthesize(c), p))


def drift_field(u, spec: GelfandSpec, p: float | None = None) -> SpectralField:
    """``P_n Δψ(u)`` as coefficients ``-λ_k ⟨ψ(u), e_k⟩``."""
    p = spec.p if p is None else p
    return SpectralField(-spec.eigenvalues * psi_coefficients(_spec_coeffs(u, spec), spec, p))


def ou_variance(lam, t: float) -> np.ndarray:
    """Variance at time t of ``dc = -λ c dt + dβ`` started from a deterministic value."""
    lam = np.asarray(lam, dtype=float)
    return -np.expm1(-2.0 * lam * t) / (2.0 * lam)


# --- integration ---------------------------------------------------------------


@dataclass
class GalerkinRun:
    spec: GelfandSpec
    grid: TimeGrid
    initial: np.ndarray        # projected initial window, (m+1, n)
    final: np.ndarray          # (R, n) coefficients at T
    h_moment: np.ndarray       # E‖X(t)‖_H², t on horizon nodes
    v_moment: np.ndarray       # E‖X(t)‖_V^p
    psi_moment: np.ndarray     # E‖ψ(X(t))‖_{L^p*}^{p*}
    stored: np.ndarray | None  # (R, n_store, n) states at horizon steps store_steps
    store_steps: np.ndarray
    seed: int

    @property
    def n_replicas(self) -> int:
        return self.final.shape[0]

    def times(self) -> np.ndarray:
        return np.arange(self.grid.n_horizon + 1) * self.grid.dt

    def sup_h_moment(self) -> float:
        """``sup`` over [-r0, T] of E‖X(t)‖_H² (initial window is deterministic)."""
        window = np.sum(self.initial**2 / self.spec.eigenvalues, axis=1)
        return float(max(window.max(), self.h_moment.max()))

    def law_flow(self) -> LawFlow:
        """Empirical law flow of the replicas; needs every horizon step stored."""
        if self.stored is None or len(self.store_steps) != self.grid.n_horizon + 1:
            raise ValueError("law flow needs store_stride=1")
        r = self.n_replicas
        head = np.broadcast_to(self.initial[:-1], (r,) + self.initial[:-1].shape)
        return LawFlow(self.grid, np.concatenate([head, self.stored], axis=1))

    def mode_statistics(self) -> dict[str, np.ndarray]:
        """Per-mode mean and variance at T against the OU reference for p = 2."""
        x = self.final
        lam = self.spec.eigenvalues
        mean = x.mean(axis=0)
        var = x.var(axis=0, ddof=1)
        centred = x - mean
        fourth = np.mean(centred**4, axis=0)
        var_se = np.sqrt(np.maximum(fourth - np.mean(centred**2, axis=0) ** 2, 0.0) / x.shape[0])
        return {
            "k": np.arange(1, self.spec.n_modes + 1),
            "lambda_k": lam,
            "mean": mean,
            "mean_se": np.sqrt(var / x.shape[0]),
            "mean_theory": self.initial[-1] * np.exp(-lam * self.grid.T),
            "var": var,
            "var_se": var_se,
            "var_theory": ou_variance(lam, self.grid.T),
        }


def _integrate_chunk(c0: np.ndarray, spec: GelfandSpec, p: float, grid: TimeGrid, rng, n_rep: int,
                     noise_scale: float, store_steps: np.ndarray):
    n, dt = spec.n_modes, grid.dt
    lam = spec.eigenvalues
    pc = p / (p - 1.0)
    sqdt = math.sqrt(dt) * noise_scale
    c = np.tile(c0, (n_rep, 1))
    nh = grid.n_horizon
    sums = np.empty((3, nh + 1))
    stored = np.empty((n_rep, len(store_steps), n)) if len(store_steps) else None
    store_pos = {int(s): i for i, s in enumerate(store_steps)}
    noise = None

    inv_lam = 1.0 / lam
    damping = 1.0 - dt * lam
    sq = np.empty_like(c)
    for k in range(nh + 1):
        if p == 2:
            np.multiply(c, c, out=sq)
            col = sq.sum(axis=0)
            sums[0, k] = col @ inv_lam
            sums[1, k] = col.sum()
            sums[2, k] = sums[1, k]
            # a non-finite coefficient (or one whose square overflows) makes the sum non-finite
            if not math.isfinite(sums[1, k]):
                raise DivergenceError(k - 1)
        else:
            u_x = spec.synthesize(c)
            psi_x = power_law(u_x, p)
            psi_c = spec.analyze(psi_x)
            sums[1, k] = np.sum(spec.weights * np.abs(u_x) ** p)
            sums[2, k] = np.sum(spec.weights * np.abs(psi_x) ** pc)
            sums[0, k] = np.sum(c * c / lam)
        if k in store_pos:
            stored[:, store_pos[k]] = c
        if k == nh:
            break
        j = k % _NOISE_BLOCK
        if j == 0 and noise_scale != 0.0:
            noise = rng.standard_normal((min(_NOISE_BLOCK, nh - k), n_rep, n))
            noise *= sqdt
        if p == 2:
            c *= damping
        else:
            c = c - dt * lam * psi_c
        if noise_scale != 0.0:
            c += noise[j]
        if p != 2 and not np.all(np.isfinite(c)):
            raise DivergenceError(k)
    return c, sums, stored


def galerkin_integrate(params: PorousMediumParams, spec: GelfandSpec, psi0: SpectralSegment, grid: TimeGrid,
                       seed: int, n_replicas: int, store_stride: int | None = None, workers: int = 1,
                       noise_scale: float = 1.0, chunk: int = DEFAULT_CHUNK) -> GalerkinRun:
    """Explicit Euler for the n-mode Galerkin system with additive noise on each mode.

    ``c_k <- c_k - dt λ_k ψ(u)_k + noise_scale * Δβ_k``. Replicas are split
    into fixed chunks of ``chunk``, each with its own stream
    ``(seed, chunk_index)``, so results are independent of ``workers``.
    The nonlinearity acts on the current state (the theta = 0 slice).
    """
    if psi0.m != grid.m or psi0.dt != grid.dt:
        raise ValueError("initial segment does not match the grid")
    if params.p != spec.p:
        raise ValueError("nonlinearity exponent differs from the spec's p")
    initial = project_segment(psi0, spec.n_modes).values
    stiffness = grid.dt * spec.eigenvalues[-1]
    if stiffness > STABILITY_LIMIT:
        warnings.warn(f"dt * lambda_n = {stiffness:.3g} exceeds {STABILITY_LIMIT}; explicit scheme may be unstable",
                      StiffnessWarning, stacklevel=2)
    if store_stride is None:
        store_steps = np.empty(0, dtype=int)
    else:
        store_steps = np.arange(0, grid.n_horizon + 1, int(store_stride))

    bounds = [(a, min(a + chunk, n_replicas)) for a in range(0, n_replicas, chunk)]

    def run(idx):
        a, b = bounds[idx]
        rng = stream_rng(seed, TAG_GALERKIN, idx)
        return _integrate_chunk(initial[-1], spec, params.p, grid, rng, b - a, noise_scale, store_steps)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(bounds))))
    else:
        results = [run(i) for i in range(len(bounds))]

    final = np.concatenate([r[0] for r in results])
    sums = np.sum(np.stack([r[1] for r in results]), axis=0) / n_replicas
    stored = None if store_stride is None else np.concatenate([r[2] for r in results])
    return GalerkinRun(spec, grid, initial, final, sums[0], sums[1], sums[2], stored, store_steps, seed)


# --- uniform-in-n bounds -------------------------------------------------------


@dataclass
class SweepRow:
    n: int
    v_integral: float      # ∫ E‖X‖_V^p dt
    a_dual: float          # ∫ E‖ψ(X)‖_{L^p*}^{p*} dt  (the V*-norm of the drift)
    b_hs: float            # ∫ ‖P_n B‖²_{L_2(U, H)} dt = T Σ_{k<=n} 1/λ_k
    b_count: float         # n T: Hilbert-Schmidt norm counted in L²
    h_sup: float           # sup_t E‖X(t)‖_H²


@dataclass
class SweepTable:
    rows: list[SweepRow]
    seed: int
    n_replicas: int

    def ratio(self, field_name: str = "h_sup") -> float:
        """Largest-n value divided by smallest-n value."""
        return getattr(self.rows[-1], field_name) / getattr(self.rows[0], field_name)


def _time_integral(values: np.ndarray, dt: float) -> float:
    return float(np.sum(0.5 * dt * (values[1:] + values[:-1])))


def uniform_bound_sweep(params: PorousMediumParams, modes, psi0: SpectralSegment, grid: TimeGrid, seed: int,
                        n_replicas: int, workers: int = 1, noise_scale: float = 1.0) -> SweepTable:
    """Evaluate the uniform Galerkin bound quantities for each n in ``modes``."""
    modes = sorted(int(n) for n in modes)
    rows = []
    for n in modes:
        spec = GelfandSpec(params.domain_length, params.p, n)
        seg = psi0 if psi0.n == n else project_segment(psi0, min(n, psi0.n))
        if seg.n < n:
            pad = np.zeros((seg.m + 1, n - seg.n))
            seg = SpectralSegment(seg.r0, seg.dt, seg.m, np.concatenate([seg.values, pad], axis=1))
        run = galerkin_integrate(params, spec, seg, grid, seed, n_replicas, workers=workers, noise_scale=noise_scale)
        T = grid.T
        rows.append(SweepRow(
            n=n,
            v_integral=_time_integral(run.v_moment, grid.dt),
            a_dual=_time_integral(run.psi_moment, grid.dt),
            b_hs=noise_scale**2 * T * float(np.sum(1.0 / spec.eigenvalues)),
            b_count=noise_scale**2 * n * T,
            h_sup=run.sup_h_moment(),
        ))
    return SweepTable(rows, seed, n_replicas)
