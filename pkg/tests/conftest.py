from __future__ import annotations

import time

import numpy as np
import pytest

from minstab.criterion import CriterionConstants
from minstab.flow import FlowConfig, run_flow, scale_to_criterion
from minstab.functions import random_fourier
from minstab.grid import build_grid, compute_jet, sample_function

ACCEPTANCE_LINES: list[str] = []


def record(number: int, passed: bool, detail: str, seconds: float, limit: float) -> None:
    status = "PASS" if passed and seconds < limit else "FAIL"
    ACCEPTANCE_LINES.append(f"criterion {number}: {status}  {detail}  [{seconds:.2f} s, limit {limit:g} s]")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def unit_square(res: int = 33):
    return build_grid(2, [(0.0, 1.0), (0.0, 1.0)], [res, res])


def graph(domain, m, evaluator):
    return compute_jet(sample_function(domain, m, evaluator))


@pytest.fixture(scope="session")
def minimal_graph():
    """MCF-converged minimal graph (n = m = 2, 33^2 nodes) from a scaled random phi."""
    start = time.perf_counter()
    dom = unit_square(33)
    phi = graph(dom, 2, random_fourier(2, 2, seed=7))
    scaled, t = scale_to_criterion(phi, CriterionConstants.from_dims(2, 2), "slope")
    result = run_flow(scaled, FlowConfig(residual_target=1e-8))
    result.scale_factor = t
    result.elapsed = time.perf_counter() - start
    return result


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
