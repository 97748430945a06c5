"""Coefficient pairs (b, sigma), the shipped model families and condition probes.

Coefficients are evaluated in batch: ``drift(t, windows, law)`` takes windows of
shape ``(N, m+1, d)`` plus one :class:`SegmentEnsemble` as the law argument and
returns ``(N, d)``; ``diffusion`` returns ``(d, d)`` when it is state
independent or ``(N, d, d)`` otherwise. Laws enter only through functionals
the coefficient computes itself from the raw ensemble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .empirical_law import GroundMetric, LawFlow, SegmentEnsemble, w2_exact
from .segment_core import Segment, TimeGrid, trapezoid_weights, window_lp_p, window_sup_sq


@dataclass(frozen=True)
class ConditionConstants:
    """Constants of the coercivity/monotonicity/growth conditions, valid on [0, T]."""

    alpha: float
    beta: float
    gamma: float
    q0: int = 1

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("condition constants must be nonnegative")
        if int(self.q0) != self.q0 or self.q0 < 1:
            raise ValueError("q0 must be a positive integer")


@dataclass(frozen=True)
class ModelCoefficients:
    dim: int
    p: float
    drift: Callable
    diffusion: Callable
    constants: ConditionConstants
    mu_dependent: bool = True
    name: str = "custom"

    def drift_at(self, t: float, seg: Segment, law: SegmentEnsemble) -> np.ndarray:
        return self.drift(t, seg.values[None], law)[0]

    def diffusion_at(self, t: float, seg: Segment, law: SegmentEnsemble) -> np.ndarray:
        sig = np.asarray(self.diffusion(t, seg.values[None], law))
        return sig if sig.ndim == 2 else sig[0]

    def diffusion_batch(self, t: float, windows: np.ndarray, law: SegmentEnsemble) -> np.ndarray:
        """Diffusion broadcast to shape ``(N, d, d)``."""
        sig = np.asarray(self.diffusion(t, windows, law))
        if sig.ndim == 2:
            sig = np.broadcast_to(sig, (windows.shape[0],) + sig.shape)
        return sig


@dataclass(frozen=True)
class LinearMeanFieldParams:
    a_self: float = 0.0
    b_delay: float = 0.0
    c_mean: float = 0.0
    e_mean_delay: float = 0.0
    sigma_const: np.ndarray = field(default_factory=lambda: np.eye(1))

    def __post_init__(self):
        sig = np.atleast_2d(np.asarray(self.sigma_const, dtype=float))
        if sig.shape[0] != sig.shape[1]:
            raise ValueError(f"sigma_const must be square, got shape {sig.shape}")
        weights = (self.a_self, self.b_delay, self.c_mean, self.e_mean_delay)
        if not all(math.isfinite(w) for w in weights) or not np.all(np.isfinite(sig)):
            raise ValueError("linear mean-field parameters must be finite")
        sig.setflags(write=False)
        object.__setattr__(self, "sigma_const", sig)

    @property
    def dim(self) -> int:
        return self.sigma_const.shape[0]

    @property
    def weight_sum(self) -> float:
        return abs(self.a_self) + abs(self.b_delay) + abs(self.c_mean) + abs(self.e_mean_delay)


def linear_meanfield_constants(params: LinearMeanFieldParams, horizon: float = 1.0) -> ConditionConstants:
    """Dominating constants for the linear model with p = 2.

    ``S`` is the sum of absolute weights and ``Sigma2`` the squared
    Hilbert-Schmidt norm of sigma (an upper bound for the squared operator
    norm). gamma is scaled by ``max(1, horizon)`` because the mean-field part
    of the drift growth integral scales with elapsed time.
    """
    s = params.weight_sum
    sigma2 = float(np.sum(params.sigma_const**2))
    return ConditionConstants(
        alpha=2 * s + 1,
        beta=4 * (s * s + s),
        gamma=2 * max(4 * s * s, 3 * sigma2, 1.0) * max(1.0, horizon),
        q0=1,
    )


def linear_meanfield_model(params: LinearMeanFieldParams, horizon: float = 1.0) -> ModelCoefficients:
    """Drift ``a*xi(0) + b*xi(-r0) + c*E_mu[x(0)] + e*E_mu[x(-r0)]``, constant diffusion."""
    a, b, c, e = params.a_self, params.b_delay, params.c_mean, params.e_mean_delay
    sigma = params.sigma_const

    def drift(t, windows, law):
        windows = np.asarray(windows)
        out = a * windows[:, -1, :]
        if b != 0.0:
            out = out + b * windows[:, 0, :]
        if c != 0.0:
            out = out + c * law.values[:, -1, :].mean(axis=0)
        if e != 0.0:
            out = out + e * law.values[:, 0, :].mean(axis=0)
        return out

    def diffusion(t, windows, law):
        return sigma

    return ModelCoefficients(
        dim=params.dim,
        p=2.0,
        drift=drift,
        diffusion=diffusion,
        constants=linear_meanfield_constants(params, horizon),
        mu_dependent=(c != 0.0 or e != 0.0),
        name="linear_meanfield",
    )


def zero_model(dim: int = 1, constants: ConditionConstants | None = None, p: float = 2.0) -> ModelCoefficients:
    """b ≡ 0, sigma ≡ 0."""
    if constants is None:
        constants = ConditionConstants(alpha=1.0, beta=0.0, gamma=1.0)
    zero_sigma = np.zeros((dim, dim))

    return ModelCoefficients(
        dim=dim,
        p=p,
        drift=lambda t, w, law: np.zeros((np.shape(w)[0], dim)),
        diffusion=lambda t, w, law: zero_sigma,
        constants=constants,
        mu_dependent=False,
        name="zero",
    )


# --- porous-medium nonlinearity ---------------------------------------------


@dataclass(frozen=True)
class PorousMediumParams:
    """psi(t, xi, mu)(x) = |xi(0)(x)|^(p-2) xi(0)(x) on (0, L)."""

    p: float = 2.0
    domain_length: float = math.pi
    kind: str = "power_law"

    def __post_init__(self):
        if not self.p >= 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if not self.domain_length > 0:
            raise ValueError(f"domain length must be positive, got {self.domain_length}")
        if self.kind != "power_law":
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1.0)


def power_law(u: np.ndarray, p: float) -> np.ndarray:
    """Pointwise ``|u|^(p-2) u``; identity (bitwise) for p = 2."""
    u = np.asarray(u, dtype=float)
    if p == 2:
        return u.copy()
    return np.abs(u) ** (p - 2.0) * u


def psi_constants(params: PorousMediumParams) -> ConditionConstants:
    """Constants for the power law: no coercivity defect, monotone, |psi|^p* = |u|^p."""
    return ConditionConstants(alpha=0.0, beta=0.0, gamma=1.0, q0=1)


def porous_medium_psi(params: PorousMediumParams, field_segment, spec):
    """psi applied to the theta = 0 slice of a spectral segment, re-expanded in the basis.

    ``spec`` is a :class:`mvsdde.galerkin_spde.GelfandSpec`; the field is
    synthesized on its x-grid, the power law applied pointwise, then projected
    back onto the sine basis.
    """
    from .galerkin_spde import SpectralField

    u_x = spec.synthesize(field_segment.values[-1])
    return SpectralField(spec.analyze(power_law(u_x, params.p)))


def power_law_monotonicity(a, b, p: float) -> np.ndarray:
    """Pointwise ``(psi(a) - psi(b)) (a - b)``; nonnegative for p >= 2."""
    return (power_law(a, p) - power_law(b, p)) * (np.asarray(a) - np.asarray(b))


# --- probes --------------------------------------------------------------------


@dataclass
class ProbeReport:
    """Worst margin (RHS - LHS, or LHS - RHS for lower bounds) per condition."""

    margins: dict[str, float]
    violations: dict[str, int]
    n_trials: int

    @property
    def passed(self) -> bool:
        return all(v >= 0 for v in self.margins.values())

    def rows(self):
        for name, margin in self.margins.items():
            yield name, margin, self.violations[name], margin >= 0


@dataclass
class ProbeSample:
    """Paths xi, eta of shape (n_nodes, d) and law-flow paths of shape (M, n_nodes, d)."""

    xi: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    nu: np.ndarray


def random_path_sampler(grid: TimeGrid, dim: int = 1, n_law: int = 6):
    """Random-walk paths with random scale and offset, plus random law flows."""

    def walk(rng, count):
        scale = rng.uniform(0.1, 3.0, size=(count, 1, 1))
        offset = rng.normal(0.0, 2.0, size=(count, 1, dim))
        steps = rng.normal(0.0, math.sqrt(grid.dt), size=(count, grid.n_nodes, dim))
        return offset + scale * np.cumsum(steps, axis=1)

    def sample(rng) -> ProbeSample:
        xi, eta = walk(rng, 2)
        return ProbeSample(xi=xi, eta=eta, mu=walk(rng, n_law), nu=walk(rng, n_law))

    return sample


def _cumtrapz(values: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid integral; entry K is the integral over [0, K*dt]."""
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]))
    return out


def _flow_windows(grid: TimeGrid, path: np.ndarray) -> np.ndarray:
    """Windows ending at each horizon node: shape (n_horizon+1, m+1, d)."""
    m = grid.m
    idx = np.arange(grid.n_horizon + 1)[:, None] + np.arange(m + 1)[None, :]
    return path[idx]


def probe_conditions(model: ModelCoefficients, grid: TimeGrid, sampler=None, n_trials: int = 100,
                     seed: int = 0) -> ProbeReport:
    """Evaluate both sides of the coercivity, monotonicity and growth inequalities.

    Integrals over [0, t] use the trapezoid rule on ``grid`` and every horizon
    node t is checked. Law distances are exact W2 with the sup ground metric.
    """
    from .sdde_euler import stream_rng, TAG_PROBE

    if sampler is None:
        sampler = random_path_sampler(grid, model.dim)
    rng = stream_rng(seed, TAG_PROBE)
    k = model.constants
    p, q0 = model.p, k.q0
    dt, m = grid.dt, grid.m
    names = ["coercivity", "monotonicity_drift", "monotonicity_diffusion", "growth_drift", "growth_diffusion"]
    worst = {n: math.inf for n in names}
    violations = {n: 0 for n in names}
    times = np.arange(grid.n_horizon + 1) * dt

    for _ in range(n_trials):
        s = sampler(rng)
        xi_w, eta_w = _flow_windows(grid, s.xi), _flow_windows(grid, s.eta)
        mu_flow, nu_flow = LawFlow(grid, s.mu), LawFlow(grid, s.nu)
        nh = grid.n_horizon + 1
        b_xi = np.empty((nh, model.dim))
        b_eta = np.empty((nh, model.dim))
        hs_diff = np.empty(nh)
        hs_xi = np.empty(nh)
        w2_sq = np.empty(nh)
        mu_sup = np.empty(nh)
        mu_lp = np.empty(nh)
        for j in range(nh):
            mu_j, nu_j = mu_flow.at_step(j), nu_flow.at_step(j)
            b_xi[j] = model.drift(times[j], xi_w[j : j + 1], mu_j)[0]
            b_eta[j] = model.drift(times[j], eta_w[j : j + 1], nu_j)[0]
            sx = model.diffusion_batch(times[j], xi_w[j : j + 1], mu_j)[0]
            se = model.diffusion_batch(times[j], eta_w[j : j + 1], nu_j)[0]
            hs_diff[j] = np.sum((sx - se) ** 2)
            hs_xi[j] = np.sum(sx**2)
            w2_sq[j] = w2_exact(mu_j, nu_j, GroundMetric.SUP) ** 2
            mu_sup[j] = window_sup_sq(mu_j.values).mean()
            mu_lp[j] = window_lp_p(mu_j.values, dt, p).mean()

        x_now = s.xi[m:]
        d_now = s.xi[m:] - s.eta[m:]
        xi_sup = window_sup_sq(xi_w)
        diff_sup = window_sup_sq(xi_w - eta_w)
        xi0_lp = window_lp_p(xi_w[0], dt, p)
        diff0_lp = window_lp_p(xi_w[0] - eta_w[0], dt, p)
        abs_x = np.linalg.norm(x_now, axis=1)

        # coercivity
        lhs = _cumtrapz(2 * np.sum(b_xi * x_now, axis=1), dt)
        rhs = (-0.5 * _cumtrapz(abs_x**p, dt) + k.alpha * xi0_lp
               + k.alpha * _cumtrapz(1 + xi_sup + mu_sup, dt))
        margins = {"coercivity": (rhs - lhs)[1:]}

        # monotonicity
        mono_rhs = k.beta * _cumtrapz(diff_sup + w2_sq, dt) + k.beta * diff0_lp
        lhs = _cumtrapz(2 * np.sum((b_xi - b_eta) * d_now, axis=1), dt)
        margins["monotonicity_drift"] = (mono_rhs - lhs)[1:]
        margins["monotonicity_diffusion"] = (mono_rhs - _cumtrapz(hs_diff, dt))[1:]

        # growth
        lhs = _cumtrapz(np.linalg.norm(b_xi, axis=1) ** (p / (p - 1)), dt)
        first = (_cumtrapz(abs_x**p + mu_lp, dt) + xi0_lp) ** q0
        second = 1 + np.maximum.accumulate(xi_sup) ** q0 + np.maximum.accumulate(mu_sup) ** q0
        margins["growth_drift"] = (k.gamma * first + k.gamma * second - lhs)[1:]
        margins["growth_diffusion"] = k.gamma * (1 + xi_sup + mu_sup) - hs_xi

        for name, vals in margins.items():
            worst[name] = min(worst[name], float(np.min(vals)))
            violations[name] += int(np.any(vals < 0))

    return ProbeReport(worst, violations, n_trials)


def spectral_path_sampler(grid: TimeGrid, spec, n_law: int = 4):
    """Random coefficient paths (n_nodes, n_modes) with ~1/k spectral decay."""
    decay = 1.0 / np.arange(1, spec.n_modes + 1)

    def walk(rng, count):
        amp = rng.uniform(0.2, 3.0, size=(count, 1, 1))
        base = rng.normal(size=(count, 1, spec.n_modes))
        steps = rng.normal(0.0, math.sqrt(grid.dt), size=(count, grid.n_nodes, spec.n_modes))
        return amp * decay * (base + np.cumsum(steps, axis=1))

    def sample(rng) -> ProbeSample:
        xi, eta = walk(rng, 2)
        return ProbeSample(xi=xi, eta=eta, mu=walk(rng, n_law), nu=walk(rng, n_law))

    return sample


def probe_psi_conditions(params: PorousMediumParams, grid: TimeGrid, spec=None, sampler=None,
                         n_trials: int = 100, seed: int = 0, lambdas=(0.0, 1.0, 5.0)) -> ProbeReport:
    """Probe the power-law nonlinearity's coercivity, monotonicity and growth integrals.

    Spatial integrals use the x-grid quadrature of ``spec``; time integrals
    the trapezoid rule on ``grid``, weighted by ``exp(-lambda s)`` for each
    lambda in ``lambdas``.
    """
    from .galerkin_spde import GelfandSpec
    from .sdde_euler import stream_rng, TAG_PROBE

    if spec is None:
        spec = GelfandSpec(domain_length=params.domain_length, p=params.p, n_modes=8)
    if sampler is None:
        sampler = spectral_path_sampler(grid, spec)
    rng = stream_rng(seed, TAG_PROBE, 1)
    k = psi_constants(params)
    p, pc = params.p, params.p_conj
    dt, m = grid.dt, grid.m
    wq = spec.weights
    w_theta = trapezoid_weights(m, dt)
    times = np.arange(grid.n_horizon + 1) * dt
    names = ["psi_coercivity", "psi_monotonicity", "psi_growth"]
    worst = {n: math.inf for n in names}
    violations = {n: 0 for n in names}

    def h_sq(c):
        return np.sum(c**2 / spec.eigenvalues, axis=-1)

    def v_p(u_x):
        return np.sum(wq * np.abs(u_x) ** p, axis=-1)

    for _ in range(n_trials):
        s = sampler(rng)
        xi_x = spec.synthesize(s.xi)
        eta_x = spec.synthesize(s.eta)
        mu_x = spec.synthesize(s.mu)
        xi_now, eta_now = xi_x[m:], eta_x[m:]
        psi_xi, psi_eta = power_law(xi_now, p), power_law(eta_now, p)

        pair_xi = np.sum(wq * psi_xi * xi_now, axis=1)
        mono = np.sum(wq * (psi_xi - psi_eta) * (xi_now - eta_now), axis=1)
        v_now = v_p(xi_now)
        hs_xi = h_sq(s.xi)
        seg_h = _flow_windows(grid, hs_xi[:, None])[..., 0] @ w_theta
        mu_seg_h = np.mean([_flow_windows(grid, h_sq(c)[:, None])[..., 0] @ w_theta for c in s.mu], axis=0)
        mu_seg_v = np.mean([_flow_windows(grid, v_p(u)[:, None])[..., 0] @ w_theta for u in mu_x], axis=0)
        xi0_v = float(v_p(xi_x[: m + 1]) @ w_theta)

        margins = {n: [] for n in names}
        for lam in lambdas:
            decay = np.exp(-lam * times)
            lhs = _cumtrapz(decay * 2 * pair_xi, dt)
            rhs = -k.alpha * _cumtrapz(decay * (1 + seg_h + mu_seg_h), dt) + 0.5 * _cumtrapz(decay * v_now, dt)
            margins["psi_coercivity"].append((lhs - rhs)[1:])
            margins["psi_monotonicity"].append(_cumtrapz(decay * 2 * mono, dt)[1:])
        growth_lhs = _cumtrapz(np.sum(wq * np.abs(psi_xi) ** pc, axis=1), dt)
        growth_rhs = k.gamma * _cumtrapz(1 + v_now + mu_seg_v, dt) + k.gamma * xi0_v
        margins["psi_growth"].append((growth_rhs - growth_lhs)[1:])

        for name, chunks in margins.items():
            vals = np.concatenate(chunks)
            worst[name] = min(worst[name], float(np.min(vals)))
            violations[name] += int(np.any(vals < 0))

    return ProbeReport(worst, violations, n_trials)
