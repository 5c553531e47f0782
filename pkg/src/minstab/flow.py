"""Nonparametric mean curvature flow ``f_t = g^{ij} d_i d_j f`` with Dirichlet data.

Explicit Euler on the interior nodes; the boundary ring is never written.
Stationary states solve the minimal surface system, so a converged run
yields an approximately minimal graph for the stability pipeline.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .criterion import CriterionConstants, check_graph
from .errors import BlowUpError
from .grid import GraphSample, compute_jet, induced_metric

log = logging.getLogger(__name__)


@dataclass
class FlowConfig:
    dt_safety: float = 0.9
    max_steps: int = 1_000_000
    residual_target: float = 1e-8
    omega_floor: float = 0.0
    scaling: float | None = None
    log_interval: int = 100
    growth_abort: float = 1e6
    growth_reject: float = 10.0
    max_halvings: int = 20


@dataclass
class FlowState:
    sample: GraphSample
    t: float
    residual: float
    min_star_omega: float
    steps: int = 0
    dt: float | None = None
    velocity: np.ndarray | None = field(default=None, repr=False)
    cfl_norm: float | None = None


@dataclass
class FlowResult:
    state: FlowState
    trace: list[tuple[float, float, float]]
    status: str  # "converged", "budget_exhausted" or "blow_up"
    message: str = ""
    min_star_omega_seen: float = math.inf

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _velocity(sample: GraphSample, g_inv: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...aij->...a", g_inv, sample.hess)


def flow_diagnostics(sample: GraphSample) -> tuple[float, float, float, np.ndarray]:
    """(residual, min *Omega, CFL factor, interior velocity) for a sample."""
    if not sample.has_jet:
        sample = compute_jet(sample)
    metric = induced_metric(sample)
    inner = sample.domain.interior
    vel = _velocity(sample, metric.g_inv)[inner]
    residual = float(np.max(np.linalg.norm(vel, axis=-1)))
    lam = float(np.max(np.linalg.eigvalsh(metric.g_inv[inner])))
    return residual, float(metric.star_omega[inner].min()), lam, vel


def initial_state(sample: GraphSample) -> FlowState:
    sample = compute_jet(sample)
    residual, omega, lam, vel = flow_diagnostics(sample)
    return FlowState(sample=sample, t=0.0, residual=residual, min_star_omega=omega,
                     velocity=vel, cfl_norm=lam)


def _ensure_diagnostics(state: FlowState) -> FlowState:
    if state.velocity is None or state.cfl_norm is None:
        sample = state.sample if state.sample.has_jet else compute_jet(state.sample)
        residual, omega, lam, vel = flow_diagnostics(sample)
        state = FlowState(sample=sample, t=state.t, residual=residual, min_star_omega=omega,
                          steps=state.steps, dt=state.dt, velocity=vel, cfl_norm=lam)
    return state


def stable_dt(sample: GraphSample, config: FlowConfig, cfl_norm: float) -> float:
    h2 = float(np.min(sample.domain.spacing)) ** 2
    return config.dt_safety * h2 / (2 * sample.n * cfl_norm)


def mcf_step(state: FlowState, config: FlowConfig, dt: float | None = None) -> FlowState:
    """One explicit Euler step; the boundary ring is left untouched."""
    state = _ensure_diagnostics(state)
    sample = state.sample
    if dt is None:
        dt = stable_dt(sample, config, state.cfl_norm)
    values = sample.values.copy()
    values[sample.domain.interior] += dt * state.velocity
    if not np.isfinite(values).all():
        raise BlowUpError("non-finite values after flow step", state)
    new = compute_jet(GraphSample(domain=sample.domain, m=sample.m, values=values))
    residual, omega, lam, vel = flow_diagnostics(new)
    if not math.isfinite(residual):
        raise BlowUpError("non-finite residual after flow step", state)
    return FlowState(sample=new, t=state.t + dt, residual=residual, min_star_omega=omega,
                     steps=state.steps + 1, dt=dt, velocity=vel, cfl_norm=lam)


def run_flow(initial: GraphSample | FlowState, config: FlowConfig | None = None) -> FlowResult:
    """Iterate :func:`mcf_step` until the residual target or the step budget.

    A step whose residual grows by more than ``growth_reject`` is retried
    with half the time step.
    """
    config = config or FlowConfig()
    state = initial if isinstance(initial, FlowState) else initial_state(initial)
    state = _ensure_diagnostics(state)
    r0 = max(state.residual, 1e-300)
    trace = [(state.t, state.residual, state.min_star_omega)]
    seen = state.min_star_omega
    if state.residual <= config.residual_target:
        return FlowResult(state, trace, "converged", "residual already below target", seen)

    status, message = "budget_exhausted", ""
    halvings = 0
    while state.steps < config.max_steps:
        dt = stable_dt(state.sample, config, state.cfl_norm) / 2**halvings
        try:
            nxt = mcf_step(state, config, dt)
        except BlowUpError as exc:
            return FlowResult(state, trace, "blow_up", str(exc), seen)
        if nxt.residual > config.growth_abort * r0:
            return FlowResult(nxt, trace, "blow_up", "residual grew beyond abort threshold", seen)
        if nxt.residual > config.growth_reject * state.residual and halvings < config.max_halvings:
            halvings += 1
            continue
        state = nxt
        seen = min(seen, state.min_star_omega)
        if state.min_star_omega < config.omega_floor:
            log.warning("min *Omega %.6f fell below floor %.6f at t=%.4g",
                        state.min_star_omega, config.omega_floor, state.t)
        if state.steps % config.log_interval == 0:
            trace.append((state.t, state.residual, state.min_star_omega))
        if state.residual <= config.residual_target:
            status, message = "converged", ""
            break
    if trace[-1][0] != state.t:
        trace.append((state.t, state.residual, state.min_star_omega))
    return FlowResult(state, trace, status, message, seen)


def scale_to_criterion(
    phi: GraphSample,
    constants: CriterionConstants | None = None,
    mode: str = "slope",
    tol: float = 1e-12,
    max_iter: int = 200,
) -> tuple[GraphSample, float]:
    """Largest ``t`` in (0, 1] with ``t * phi`` passing ``check_graph`` in ``mode``.

    Bisection keeps the passing end, so the returned sample always passes.
    """
    phi = phi if phi.has_jet else compute_jet(phi)
    if constants is None:
        constants = CriterionConstants.from_dims(phi.n, phi.m)
    if not np.any(phi.values):
        return phi, 1.0

    def passes(t: float) -> bool:
        return check_graph(phi.scaled(t), None, constants, mode).passed

    if passes(1.0):
        return phi, 1.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return phi.scaled(lo), lo


@dataclass
class OmegaReport:
    initial: float
    minimum: float
    max_drop: float
    tolerance: float
    dropped: bool


def monitor_omega(trace: list[tuple[float, float, float]], tolerance: float = 0.0,
                  min_seen: float | None = None) -> OmegaReport:
    """Did ``min *Omega`` ever fall below its initial value minus ``tolerance``?

    ``min_seen`` folds in the running minimum over steps between log points.
    """
    omegas = np.array([row[2] for row in trace])
    initial = float(omegas[0])
    minimum = float(omegas.min()) if min_seen is None else min(float(omegas.min()), min_seen)
    drop = max(0.0, initial - minimum)
    return OmegaReport(initial=initial, minimum=minimum, max_drop=drop, tolerance=tolerance,
                       dropped=bool(drop > tolerance))


def write_trace_csv(trace: list[tuple[float, float, float]], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["t", "residual", "min_star_omega"])
    for t, r, w in trace:
        writer.writerow([repr(float(t)), repr(float(r)), repr(float(w))])
