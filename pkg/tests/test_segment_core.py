import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mvsdde.segment_core import (AlignmentError, GridPath, ParameterError, Segment, TimeGrid, WindowUnderflowError,
                                 evaluate, extract_segment, lp_norm, sup_norm, trapezoid_weights)


def ramp_path(m=2, dt=0.5, T=2.0):
    grid = TimeGrid.from_horizon(m, dt, T)
    return GridPath(grid, grid.times())


def test_grid_derived_quantities():
    g = TimeGrid.from_horizon(4, 0.25, 2.0)
    assert g.r0 == 1.0 and g.n_horizon == 8 and g.n_steps == 12
    assert g.time(g.m) == 0.0
    assert g.index(0.5) == 6


def test_grid_rejects_misaligned_horizon():
    with pytest.raises(ParameterError, match="T not multiple of dt"):
        TimeGrid.from_horizon(2, 0.3, 1.0)


def test_extract_constant_path():
    g = TimeGrid.from_horizon(3, 0.1, 1.0)
    path = GridPath(g, np.full(g.n_nodes, 2.5))
    seg = extract_segment(path, 0.7)
    assert np.all(seg.values == 2.5)


def test_extract_ramp_reads_off_window():
    seg = extract_segment(ramp_path(), 1.0)
    assert seg.values[:, 0].tolist() == [0.0, 0.5, 1.0]


def test_extract_at_zero_is_initial_window():
    g = TimeGrid.from_horizon(5, 0.2, 1.0)
    vals = np.random.default_rng(1).normal(size=(g.n_nodes, 2))
    path = GridPath(g, vals)
    psi = Segment(g.r0, g.dt, g.m, vals[: g.m + 1])
    assert extract_segment(path, 0.0) == psi


def test_extract_errors():
    path = ramp_path()
    with pytest.raises(AlignmentError):
        extract_segment(path, 0.3)
    with pytest.raises(WindowUnderflowError):
        extract_segment(path, -0.5)


def test_sup_norm_examples():
    g = TimeGrid.from_horizon(2, 0.5, 1.0)
    assert sup_norm(Segment(g.r0, g.dt, g.m, [0.0, 0.5, 1.0])) == 1.0
    assert sup_norm(Segment.constant(g, 0.0)) == 0.0
    seg = Segment(1.0, 1.0, 1, [[3.0, 4.0], [0.0, 0.0]])
    assert sup_norm(seg) == 5.0


def test_lp_norm_examples():
    g = TimeGrid.from_horizon(2, 0.5, 1.0)
    assert lp_norm(Segment.constant(g, -3.0), 2) == pytest.approx(3.0, abs=1e-15)
    assert lp_norm(Segment.constant(g, 0.0), 2) == 0.0
    # hand trapezoid: 0.25*0 + 0.5*0.25 + 0.25*1
    assert lp_norm(Segment(g.r0, g.dt, g.m, [0.0, 0.5, 1.0]), 2) == pytest.approx(math.sqrt(0.375), abs=1e-15)
    with pytest.raises(ParameterError):
        lp_norm(Segment.constant(g, 1.0), 1.5)


def test_evaluate_round_trip():
    seg = extract_segment(ramp_path(), 1.0)
    assert evaluate(seg, seg.m)[0] == 1.0
    assert evaluate(seg, 0)[0] == 0.0
    back = np.array([evaluate(seg, i) for i in range(seg.m + 1)])
    assert np.array_equal(back, seg.values)
    with pytest.raises(IndexError):
        evaluate(seg, seg.m + 1)


def test_paths_reject_non_finite():
    g = TimeGrid.from_horizon(2, 0.5, 1.0)
    vals = np.zeros(g.n_nodes)
    vals[3] = np.nan
    with pytest.raises(ParameterError):
        GridPath(g, vals)


def test_trapezoid_weights_sum_to_r0():
    for m, dt in [(1, 0.3), (7, 0.1), (64, 1 / 64)]:
        assert math.fsum(trapezoid_weights(m, dt)) == pytest.approx(m * dt, rel=1e-15)


window_values = hnp.arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 3)),
                           elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(window_values, st.floats(2.0, 6.0))
def test_norm_domination(vals, p):
    m = vals.shape[0] - 1
    seg = Segment(1.0, 1.0 / m, m, vals)
    assert lp_norm(seg, p) ** p <= seg.r0 * sup_norm(seg) ** p * (1 + 1e-12) + 1e-300


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 10), st.integers(0, 2**31))
def test_extraction_is_an_index_shift(m, n_h, seed):
    g = TimeGrid(m, 0.1, n_h)
    vals = np.random.default_rng(seed).normal(size=(g.n_nodes, 2))
    path = GridPath(g, vals)
    for k in range(n_h + 1):
        seg = extract_segment(path, g.time(m + k))
        for i in range(m + 1):
            assert np.array_equal(evaluate(seg, i), vals[k + i])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(2, 10), st.floats(0.01, 2.0), st.integers(0, 2**31))
def test_segment_continuity_in_time(m, n_h, delta, seed):
    g = TimeGrid(m, 0.1, n_h)
    steps = np.random.default_rng(seed).uniform(-delta, delta, size=g.n_nodes)
    path = GridPath(g, np.cumsum(steps))
    for k in range(n_h):
        a = extract_segment(path, g.time(m + k))
        b = extract_segment(path, g.time(m + k + 1))
        assert np.max(np.abs(a.values - b.values)) <= delta
