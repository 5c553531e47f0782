"""Closed-form stability constants and the graph-level criterion check."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, StateError
from .grid import GraphSample, MetricField, induced_metric, mean_curvature_vector

MODES = ("slope", "omega_paper", "omega_derived", "slope_supported")


def c_constant(n: int, m: int) -> float:
    """1 when m <= 2 or n <= 2, otherwise min(m - 1, n - 1)."""
    if n < 1 or m < 1:
        raise ConfigurationError(f"n and m must be >= 1, got n={n}, m={m}")
    if m <= 2 or n <= 2:
        return 1.0
    return float(min(m - 1, n - 1))


def _check_c(c: float) -> None:
    if not c >= 1:
        raise ConfigurationError(f"c must be >= 1, got {c}")


def critical_slope(c: float) -> float:
    """Largest admissible ``||df||``: (sqrt(1+c) - 1) / sqrt(c)."""
    _check_c(c)
    return (math.sqrt(1.0 + c) - 1.0) / math.sqrt(c)


def epsilon_curve(eps: float, c: float) -> float:
    """eps (1 - eps) / (1 + c eps) on 0 < eps < 1."""
    _check_c(c)
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    return eps * (1.0 - eps) / (1.0 + c * eps)


def epsilon_star(c: float) -> tuple[float, float]:
    """Maximizer of :func:`epsilon_curve` and the maximum value.

    With r = sqrt(1 + c) the maximum is (r - 1)^2 / c^2. The closed form
    (r - 1)^2 / c that is usually quoted agrees only at c = 1; see
    :func:`epsilon_max_quoted`.
    """
    _check_c(c)
    r = math.sqrt(1.0 + c)
    return (r - 1.0) / c, (r - 1.0) ** 2 / c**2


def epsilon_max_quoted(c: float) -> float:
    """(sqrt(c + 1) - 1)^2 / c, equal to ``critical_slope(c)**2``."""
    _check_c(c)
    return (math.sqrt(1.0 + c) - 1.0) ** 2 / c


def supported_slope(c: float) -> float:
    """(sqrt(1+c) - 1) / c: the square root of the true maximum of :func:`epsilon_curve`.

    This is the largest lambda for which the pointwise Cauchy-Schwarz
    argument closes with delta = eps*. It coincides with
    :func:`critical_slope` at c = 1 and is smaller for c > 1.
    """
    _check_c(c)
    return math.sqrt(epsilon_star(c)[1])


def omega_thresholds(c: float) -> tuple[float, float]:
    """Lower bounds on ``*Omega``: (as printed, derived).

    The printed value is c / (2 (c + 1 - sqrt(1 + c))). The derived value is
    1 / sqrt(1 + slope^2), which is what ``*Omega >= t`` needs for
    ``1 + lambda_max^2 <= prod(1 + lambda_i^2) = *Omega^-2`` to force
    ``lambda_max <= slope``. It equals the square root of the printed value.
    """
    _check_c(c)
    printed = c / (2.0 * (c + 1.0 - math.sqrt(1.0 + c)))
    slope = critical_slope(c)
    return printed, 1.0 / math.sqrt(1.0 + slope**2)


@dataclass(frozen=True)
class CriterionConstants:
    n: int
    m: int
    c: float
    slope: float
    delta: float
    epsilon_star: float
    omega_threshold_paper: float
    omega_threshold_derived: float
    slope_supported: float

    @classmethod
    def from_dims(cls, n: int, m: int) -> CriterionConstants:
        c = c_constant(n, m)
        eps, _ = epsilon_star(c)
        printed, derived = omega_thresholds(c)
        return cls(
            n=n,
            m=m,
            c=c,
            slope=critical_slope(c),
            delta=(math.sqrt(1.0 + c) - 1.0) / c,
            epsilon_star=eps,
            omega_threshold_paper=printed,
            omega_threshold_derived=derived,
            slope_supported=supported_slope(c),
        )

    def threshold(self, mode: str) -> float:
        if mode == "slope":
            return self.slope
        if mode == "omega_paper":
            return self.omega_threshold_paper
        if mode == "omega_derived":
            return self.omega_threshold_derived
        if mode == "slope_supported":
            return self.slope_supported
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass
class CriterionReport:
    c: float
    slope: float
    threshold_paper: float
    threshold_derived: float
    max_df_norm: float
    min_star_omega: float
    mean_curvature_residual: float
    verdict_per_mode: dict[str, bool]
    margin_per_mode: dict[str, float]
    mode: str = "slope"

    @property
    def passed(self) -> bool:
        return self.verdict_per_mode[self.mode]

    def to_dict(self) -> dict:
        return asdict(self)


def _attained(sample: GraphSample, metric: MetricField) -> tuple[float, float]:
    inner = sample.domain.interior
    lam1 = np.linalg.norm(sample.df[inner], ord=2, axis=(-2, -1))
    return float(lam1.max()), float(metric.star_omega[inner].min())


def evaluate_modes(max_df: float, min_omega: float, constants: CriterionConstants) -> tuple[dict, dict]:
    """Pass/fail and margin per mode; a positive margin means a pass."""
    margins = {
        "slope": constants.slope - max_df,
        "omega_paper": min_omega - constants.omega_threshold_paper,
        "omega_derived": min_omega - constants.omega_threshold_derived,
        "slope_supported": constants.slope_supported - max_df,
    }
    return {k: bool(v >= 0.0) for k, v in margins.items()}, margins


def check_graph(
    sample: GraphSample,
    metric: MetricField | None = None,
    constants: CriterionConstants | None = None,
    mode: str = "slope",
) -> CriterionReport:
    """Evaluate the criterion as a discrete essential sup over interior nodes.

    Minimality is not enforced; the largest mean-curvature norm over interior
    nodes is reported as a diagnostic.
    """
    if not sample.has_jet:
        raise StateError("check_graph needs the jet; call compute_jet first")
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if metric is None:
        metric = induced_metric(sample)
    if constants is None:
        constants = CriterionConstants.from_dims(sample.n, sample.m)
    max_df, min_omega = _attained(sample, metric)
    verdicts, margins = evaluate_modes(max_df, min_omega, constants)
    hvec = mean_curvature_vector(sample, metric)[sample.domain.interior]
    return CriterionReport(
        c=constants.c,
        slope=constants.slope,
        threshold_paper=constants.omega_threshold_paper,
        threshold_derived=constants.omega_threshold_derived,
        max_df_norm=max_df,
        min_star_omega=min_omega,
        mean_curvature_residual=float(np.linalg.norm(hvec, axis=-1).max()),
        verdict_per_mode=verdicts,
        margin_per_mode=margins,
        mode=mode,
    )


def minimality_tolerance(sample: GraphSample, factor: float = 10.0) -> float:
    """Default scale for the mean-curvature diagnostic: factor * h_max^2."""
    return factor * float(np.max(sample.domain.spacing)) ** 2
