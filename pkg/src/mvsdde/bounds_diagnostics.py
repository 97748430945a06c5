"""Evaluate explicit stability and moment bounds against Monte Carlo estimates.

Every check is one-sided: a report passes when ``lhs <= rhs + 3 * stderr +
tolerance``, where ``tolerance`` is nonzero only for deterministic quadrature
checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .segment_core import GridPath, trapezoid_weights

K_STDERR = 3.0
# relative slack for floating-point rounding when a bound is attained with equality
ROUNDING = 1e-12
EPS_GRID = np.geomspace(1e-3, 0.999, 64)


@dataclass
class BoundReport:
    name: str
    lhs: float
    stderr: float
    rhs: float
    tolerance: float = 0.0
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + K_STDERR * self.stderr + self.tolerance


def mean_and_stderr(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _exp(x: float) -> float:
    """``math.exp`` that saturates to inf instead of raising."""
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _trapz(values: np.ndarray, dt: float) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.sum(0.5 * dt * (values[1:] + values[:-1])))


# --- deterministic segment estimate -------------------------------------------


def segment_lp_check(x: GridPath, y: GridPath, lam: float, p: float, t: float) -> BoundReport:
    """Weighted time integral of segment L^p distances against its pointwise majorant.

    LHS = ∫_0^t e^{-λs} ‖X_s - Y_s‖_{L^p}^p ds,
    RHS = r0 ∫_0^t e^{-λs} |X(s) - Y(s)|^p ds + r0 e^{λ r0} ‖X_0 - Y_0‖_{L^p}^p,
    both by trapezoid quadrature; tolerance ``2 p dt scale^p``.
    """
    if x.grid != y.grid:
        raise ValueError("paths must share a grid")
    g = x.grid
    k = g.index(t) - g.m
    if k < 0:
        raise ValueError("t must be >= 0")
    m, dt, r0 = g.m, g.dt, g.r0
    diff = np.linalg.norm(x.values - y.values, axis=1) ** p
    w = trapezoid_weights(m, dt)
    seg_lp = np.array([w @ diff[j : j + m + 1] for j in range(k + 1)])
    s = np.arange(k + 1) * dt
    decay = np.exp(-lam * s)
    lhs = _trapz(decay * seg_lp, dt)
    rhs = r0 * _trapz(decay * diff[m : m + k + 1], dt) + r0 * math.exp(lam * r0) * seg_lp[0]
    scale = float(np.max(diff)) if diff.size else 0.0
    return BoundReport("segment_lp_integral", lhs, 0.0, rhs, tolerance=2 * p * dt * scale,
                       inputs={"lambda": lam, "p": p, "t": t, "r0": r0, "dt": dt})


# name used by the public operation list
lemma_a1_check = segment_lp_check


# --- finite-dimensional stability and moments ---------------------------------


def _check_eps(eps_grid) -> np.ndarray:
    eps = np.asarray(EPS_GRID if eps_grid is None else eps_grid, dtype=float)
    if eps.size == 0 or np.any(eps <= 0) or np.any(eps >= 1):
        raise ValueError("eps grid must lie inside (0, 1)")
    return eps


def stability_rhs_finite(beta: float, e_sup0: float, e_lp0: float, t: float, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    denom = (1 - eps) * eps
    pre = e_sup0 / (1 - eps) + 2 * beta * (eps + 6) / denom * e_lp0
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.exp(4 * beta * (eps + 3) / denom * t)
        return np.where(pre == 0, 0.0, pre * growth)


def _minimize(values: np.ndarray, eps: np.ndarray) -> tuple[float, float, bool]:
    i = int(np.argmin(values))
    return float(values[i]), float(eps[i]), i in (0, len(eps) - 1)


def stability_bound_finite(beta: float, e_sup0: float, e_lp0: float, t: float, lhs: float, lhs_stderr: float,
                           eps_grid=None) -> BoundReport:
    """Coupled-solution sup distance against the infimum over ε of the stability formula.

    ``e_sup0 = E‖X_0 - Y_0‖_∞²`` and ``e_lp0 = E‖X_0 - Y_0‖_{L^p}^p``. With
    β = 0 the infimum is the ε -> 0 limit ``e_sup0``, returned exactly.
    """
    eps = _check_eps(eps_grid)
    rhs, eps_star, at_edge = _minimize(stability_rhs_finite(beta, e_sup0, e_lp0, t, eps), eps)
    if beta == 0:
        rhs, eps_star, at_edge = e_sup0, 0.0, True
    return BoundReport("stability_finite", lhs, lhs_stderr, rhs, tolerance=ROUNDING * rhs,
                       inputs={"beta": beta, "e_sup0": e_sup0, "e_lp0": e_lp0, "t": t,
                               "eps_star": eps_star, "eps_at_edge": at_edge})


def moment_rhs(alpha: float, gamma: float, e_sup0: float, e_lp0: float, T: float) -> float:
    """``(a0 + a1 T) e^{2 a1 T}`` with ``a0 = 2E‖X0‖∞² + 2α E‖X0‖_Lp^p`` and ``a1 = 2(α + 2γ)``."""
    a0 = 2 * e_sup0 + 2 * alpha * e_lp0
    a1 = 2 * (alpha + 2 * gamma)
    return (a0 + a1 * T) * _exp(2 * a1 * T) if a0 + a1 * T > 0 else 0.0


def moment_bound_finite(alpha: float, gamma: float, e_sup0: float, e_lp0: float, T: float, g_estimate: float,
                        g_stderr: float) -> BoundReport:
    """``E[sup |X|² + ∫_0^T |X|^p]`` against the explicit Gronwall constant."""
    return BoundReport("moment_finite", g_estimate, g_stderr, moment_rhs(alpha, gamma, e_sup0, e_lp0, T),
                       inputs={"alpha": alpha, "gamma": gamma, "e_sup0": e_sup0, "e_lp0": e_lp0, "T": T})


def coupled_path_statistics(x: np.ndarray, y: np.ndarray, m: int, dt: float, p: float) -> dict[str, tuple[float, float]]:
    """Mean and stderr of the coupled-run quantities from path arrays (N, n_nodes, d)."""
    diff = np.sum((x - y) ** 2, axis=-1)
    w = trapezoid_weights(m, dt)
    return {
        "sup_sq": mean_and_stderr(diff.max(axis=1)),
        "init_sup_sq": mean_and_stderr(diff[:, : m + 1].max(axis=1)),
        "init_lp": mean_and_stderr((diff[:, : m + 1] ** (p / 2)) @ w),
    }


def moment_statistics(x: np.ndarray, m: int, dt: float, p: float) -> dict[str, tuple[float, float]]:
    """Mean and stderr of ``sup|X|² + ∫_0^T |X|^p`` and of the initial-window moments."""
    sq = np.sum(x * x, axis=-1)
    horizon = sq[:, m:] ** (p / 2)
    integral = np.sum(0.5 * dt * (horizon[:, 1:] + horizon[:, :-1]), axis=1)
    w = trapezoid_weights(m, dt)
    return {
        "G": mean_and_stderr(sq.max(axis=1) + integral),
        "init_sup_sq": mean_and_stderr(sq[:, : m + 1].max(axis=1)),
        "init_lp": mean_and_stderr((sq[:, : m + 1] ** (p / 2)) @ w),
    }


# --- infinite-dimensional stability -------------------------------------------


def stability_rhs_infinite_sup(beta: float, r0: float, e_ch0: float, t: float, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.exp(2 * r0 / (1 - eps) * (1 + 6 / eps) * beta * t)
        return np.where(e_ch0 == 0, 0.0, e_ch0 / (1 - eps) * growth)


def stability_bound_infinite(beta: float, r0: float, t: float, e_ch0: float, lhs_point: float, se_point: float,
                             lhs_sup: float, se_sup: float, eps_grid=None) -> tuple[BoundReport, BoundReport]:
    """Pointwise and sup-in-time H-distance bounds for coupled Galerkin runs.

    ``e_ch0 = E sup_θ ‖X_0(θ) - Y_0(θ)‖_H²``. Returns the pointwise report
    (RHS ``(1 + r0² e^{2β r0²}) e^{2β r0 t} e_ch0``) and the sup report.
    """
    rhs_point = (1 + r0**2 * _exp(2 * beta * r0**2)) * _exp(2 * beta * r0 * t) * e_ch0 if e_ch0 > 0 else 0.0
    point = BoundReport("stability_infinite_point", lhs_point, se_point, rhs_point, tolerance=ROUNDING * rhs_point,
                        inputs={"beta": beta, "r0": r0, "t": t, "e_ch0": e_ch0})
    eps = _check_eps(eps_grid)
    rhs_sup, eps_star, at_edge = _minimize(stability_rhs_infinite_sup(beta, r0, e_ch0, t, eps), eps)
    if beta == 0:
        rhs_sup, eps_star, at_edge = e_ch0, 0.0, True
    sup = BoundReport("stability_infinite_sup", lhs_sup, se_sup, rhs_sup, tolerance=ROUNDING * rhs_sup,
                      inputs={"beta": beta, "r0": r0, "t": t, "e_ch0": e_ch0,
                              "eps_star": eps_star, "eps_at_edge": at_edge})
    return point, sup


# --- Picard contraction summary -----------------------------------------------


@dataclass
class ContractionSummary:
    distances: np.ndarray
    ratios: np.ndarray
    status: str
    floor: float


def contraction_report(report, floor: float | None = None, use: str = "flow") -> ContractionSummary:
    """Ratios ``ρ_n = d(n+1) / d(n)`` of consecutive iterate distances.

    Distances at or below ``floor`` (default: 1e-12 times the first
    distance) count as saturated. Status is "super-geometric consistent"
    (ratios below 1 and decreasing), "geometric" (below 1 only),
    "floor-saturated" or "not contracting".
    """
    dist = report.flow_distances() if use == "flow" else report.path_distances()
    if len(dist) < 4 and not (len(dist) >= 2 and dist[1] == 0.0):
        raise ValueError("contraction summary needs at least 4 recorded iterations")
    if floor is None:
        floor = 1e-12 * float(dist.max())
    below = np.flatnonzero(dist <= floor)
    n_active = int(below[0]) if below.size else len(dist)
    if n_active <= 1:
        return ContractionSummary(dist, np.zeros(0), "floor-saturated", floor)
    ratios = dist[1:n_active] / dist[: n_active - 1]
    tail = ratios[1:] if len(ratios) >= 2 else ratios
    if np.all(tail < 1) and np.all(np.diff(tail) < 0):
        status = "super-geometric consistent"
    elif np.all(tail < 1):
        status = "geometric"
    elif n_active < len(dist):
        status = "floor-saturated"
    else:
        status = "not contracting"
    return ContractionSummary(dist, ratios, status, floor)
