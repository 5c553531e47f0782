import io
import math

import numpy as np
import pytest

from minstab.criterion import CriterionConstants, check_graph
from minstab.flow import (
    FlowConfig,
    initial_state,
    mcf_step,
    monitor_omega,
    run_flow,
    scale_to_criterion,
    write_trace_csv,
)
from minstab.functions import linear, random_fourier
from minstab.grid import build_grid, df_norm, mean_curvature_vector

from conftest import graph, unit_square

SLOPE1 = math.sqrt(2) - 1


def test_linear_is_fixed_point():
    s = graph(unit_square(9), 2, linear([[0.3, -0.1], [0.2, 0.4]]))
    res = run_flow(s)
    assert res.converged and res.state.steps == 0
    state = mcf_step(initial_state(s), FlowConfig())
    assert np.abs(state.sample.values - s.values).max() < 1e-14
    assert monitor_omega(res.trace).max_drop == 0.0


def test_one_dimensional_flow_reaches_line():
    d = build_grid(1, [(0.0, 1.0)], [17])
    s = graph(d, 1, lambda x: (x[:, 0] + 0.05 * np.sin(np.pi * x[:, 0]))[:, None])
    res = run_flow(s, FlowConfig(residual_target=1e-9))
    assert res.converged
    x = d.coordinates()[..., 0]
    assert np.abs(res.state.sample.values[..., 0] - x).max() < 1e-6


def _rough(res=17):
    return graph(unit_square(res), 2, random_fourier(2, 2, seed=3, amplitude=0.03))


def test_boundary_values_are_frozen():
    s = _rough()
    res = run_flow(s, FlowConfig(max_steps=50))
    ring = ~s.domain.interior_mask()
    assert np.array_equal(res.state.sample.values[ring], s.values[ring])
    assert res.status == "budget_exhausted"


def test_residual_decreases_after_transient():
    res = run_flow(_rough(), FlowConfig(max_steps=2000, log_interval=50))
    residuals = np.array([r for _, r, _ in res.trace])
    tail = residuals[len(residuals) // 4:]
    assert np.all(np.diff(tail) <= 0)
    assert residuals[-1] < residuals[0]


def test_residual_bounds_mean_curvature(minimal_graph):
    s = minimal_graph.state.sample
    h = np.linalg.norm(mean_curvature_vector(s)[s.domain.interior], axis=-1).max()
    assert h <= minimal_graph.state.residual * (1 + 1e-12)
    assert minimal_graph.converged and minimal_graph.state.residual <= 1e-8


def test_scale_to_criterion_examples():
    d = unit_square(9)
    ok = graph(d, 2, linear([[0.1, 0.0], [0.0, 0.2]]))
    assert scale_to_criterion(ok)[1] == 1.0

    rot = np.array([[math.cos(0.3), -math.sin(0.3)], [math.sin(0.3), math.cos(0.3)]])
    unit = graph(d, 2, linear(rot @ np.diag([1.0, 0.5])))
    scaled, t = scale_to_criterion(unit, CriterionConstants.from_dims(2, 2), "slope")
    assert t == pytest.approx(SLOPE1, abs=1e-10)
    assert check_graph(scaled).passed

    two = graph(d, 2, linear(np.diag([2.0, 1.0])))
    _, t = scale_to_criterion(two)
    assert t == pytest.approx(SLOPE1 / 2, abs=1e-10)
    assert df_norm(two.scaled(t)) <= SLOPE1


def test_scale_to_criterion_zero():
    z = graph(unit_square(9), 2, lambda x: np.zeros((len(x), 2)))
    assert scale_to_criterion(z)[1] == 1.0


def test_monitor_omega():
    trace = [(0.0, 1.0, 0.9), (1.0, 0.5, 0.905), (2.0, 0.1, 0.899)]
    rep = monitor_omega(trace, tolerance=0.0)
    assert rep.dropped and rep.max_drop == pytest.approx(0.001)
    assert not monitor_omega(trace, tolerance=0.01).dropped
    assert monitor_omega(trace, 0.01, min_seen=0.85).dropped


def test_minimal_graph_keeps_criterion(minimal_graph):
    s = minimal_graph.state.sample
    h2 = float(np.max(s.domain.spacing)) ** 2
    rep = monitor_omega(minimal_graph.trace, 10 * h2, minimal_graph.min_star_omega_seen)
    assert not rep.dropped
    assert check_graph(s, mode="slope").passed


def test_trace_csv():
    buf = io.StringIO()
    write_trace_csv([(0.0, 1.5, 0.9), (0.25, 1e-9, 0.91)], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,residual,min_star_omega"
    assert lines[2] == "0.25,1e-09,0.91"
