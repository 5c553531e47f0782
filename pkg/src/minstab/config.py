"""INI-style run configuration.

Grammar (``configparser`` syntax, ``key = value``)::

    [domain]
    n = 2
    bounds = 0, 1, 0, 1          # row-major (a1, b1, a2, b2, ...)
    resolution = 33, 33

    [function]
    builtin = linear             # zero | linear | quadratic | sinusoidal | random_fourier
    m = 2
    A = 0.1, 0, 0, 0.2           # m x n, row-major
    Q = ...                      # m x n x n (quadratic)
    amplitude = 1.0
    frequency = 1.0
    phase = 0.0
    seed = 0                     # random_fourier
    modes = 2                    # random_fourier

    [constants]
    mode = slope                 # slope | omega_paper | omega_derived | slope_supported
    seed = 0
    tol_eig = 1e-3               # default 10 h^2
    residual_tol = 1e-6
    xi_count = 100000
    xi_tol = 1e-10
    xi_pairs = 2:2, 3:3, 3:4, 4:3

    [flow]
    dt_safety = 0.9
    max_steps = 1000000
    residual_target = 1e-8
    omega_floor = 0
    scaling = 1.0
    log_interval = 100

    [output]
    dir = out

Numbers may be written in decimal or scientific notation.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Callable

from .criterion import MODES
from .errors import ConfigurationError
from .flow import FlowConfig
from .functions import BUILTINS

SUBCOMMANDS = ("criterion", "analyze", "flow", "verify-algebra", "pipeline")
NEEDS_FUNCTION = {"criterion", "analyze", "flow", "pipeline"}


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [_int(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _pairs(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        a, b = item.split(":")
        out.append((_int(a), _int(b)))
    return out


def _mode(text: str) -> str:
    text = text.strip()
    if text not in MODES:
        raise ValueError(f"{text!r} is not one of {', '.join(MODES)}")
    return text


def _builtin(text: str) -> str:
    text = text.strip()
    if text not in BUILTINS:
        raise ValueError(f"{text!r} is not one of {', '.join(BUILTINS)}")
    return text


SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "domain": {"n": _int, "bounds": _floats, "resolution": _ints},
    "function": {
        "builtin": _builtin, "m": _int, "A": _floats, "Q": _floats, "amplitude": _float,
        "frequency": _float, "phase": _float, "seed": _int, "modes": _int,
    },
    "constants": {
        "mode": _mode, "seed": _int, "tol_eig": _float, "residual_tol": _float,
        "xi_count": _int, "xi_tol": _float, "xi_pairs": _pairs,
    },
    "flow": {
        "dt_safety": _float, "max_steps": _int, "residual_target": _float,
        "omega_floor": _float, "scaling": _float, "log_interval": _int,
    },
    "output": {"dir": str},
}


@dataclass
class RunConfig:
    subcommand: str = "pipeline"
    n: int | None = None
    bounds: list[tuple[float, float]] = field(default_factory=list)
    resolution: list[int] = field(default_factory=list)
    m: int | None = None
    builtin: str | None = None
    params: dict = field(default_factory=dict)
    mode: str = "slope"
    seed: int = 0
    tol_eig: float | None = None
    residual_tol: float = 1e-6
    xi_count: int = 100_000
    xi_tol: float = 1e-10
    xi_pairs: list[tuple[int, int]] = field(default_factory=lambda: [(2, 2), (3, 3), (3, 4), (4, 3)])
    flow: FlowConfig = field(default_factory=FlowConfig)
    out_dir: str = "out"

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "n": self.n,
            "bounds": [list(b) for b in self.bounds],
            "resolution": list(self.resolution),
            "m": self.m,
            "builtin": self.builtin,
            "params": {k: v for k, v in sorted(self.params.items())},
            "mode": self.mode,
            "seed": self.seed,
            "xi_pairs": [list(p) for p in self.xi_pairs],
        }


def parse_config(text: str, subcommand: str = "pipeline") -> RunConfig:
    """Parse and validate a config; all problems are collected before raising."""
    errors: list[str] = []
    if subcommand not in SUBCOMMANDS:
        raise ConfigurationError(f"unknown subcommand {subcommand!r}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keep key case (A, Q)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"[{section}]: unknown section")
            continue
        values[section] = {}
        for key, raw in parser.items(section):
            conv = SCHEMA[section].get(key)
            if conv is None:
                errors.append(f"{section}.{key}: unknown key")
                continue
            try:
                values[section][key] = conv(raw)
            except (ValueError, TypeError) as exc:
                errors.append(f"{section}.{key}: malformed value {raw!r} ({exc})")

    cfg = RunConfig(subcommand=subcommand)
    dom = values.get("domain", {})
    fun = values.get("function", {})
    if subcommand in NEEDS_FUNCTION:
        for key in ("n", "bounds", "resolution"):
            if key not in dom and not any(e.startswith(f"domain.{key}:") for e in errors):
                errors.append(f"domain.{key}: missing required field")
        for key in ("builtin", "m"):
            if key not in fun and not any(e.startswith(f"function.{key}:") for e in errors):
                errors.append(f"function.{key}: missing required field")

    n = dom.get("n")
    if n is not None:
        cfg.n = n
        if "bounds" in dom:
            b = dom["bounds"]
            if len(b) != 2 * n:
                errors.append(f"domain.bounds: expected {2 * n} numbers, got {len(b)}")
            else:
                cfg.bounds = [(b[2 * i], b[2 * i + 1]) for i in range(n)]
                for i, (lo, hi) in enumerate(cfg.bounds):
                    if not lo < hi:
                        errors.append(f"domain.bounds: axis {i + 1} has lower >= upper")
        if "resolution" in dom:
            r = dom["resolution"]
            if len(r) != n:
                errors.append(f"domain.resolution: expected {n} integers, got {len(r)}")
            elif any(x < 5 for x in r):
                errors.append("domain.resolution: every axis needs at least 5 nodes")
            cfg.resolution = list(r)

    m = fun.get("m")
    cfg.m = m
    cfg.builtin = fun.get("builtin")
    cfg.params = {k: v for k, v in fun.items() if k not in ("builtin", "m")}
    if n is not None and m is not None:
        if cfg.builtin == "linear":
            if "A" not in fun:
                errors.append("function.A: missing required field for builtin 'linear'")
            elif len(fun["A"]) != m * n:
                errors.append(f"function.A: expected {m * n} numbers (m x n), got {len(fun['A'])}")
        if cfg.builtin == "quadratic":
            if "Q" not in fun:
                errors.append("function.Q: missing required field for builtin 'quadratic'")
            elif len(fun["Q"]) != m * n * n:
                errors.append(f"function.Q: expected {m * n * n} numbers (m x n x n), got {len(fun['Q'])}")
    if m is not None and m < 1:
        errors.append("function.m: must be >= 1")
    if n is not None and n < 1:
        errors.append("domain.n: must be >= 1")

    const = values.get("constants", {})
    for key in ("mode", "seed", "tol_eig", "residual_tol", "xi_count", "xi_tol", "xi_pairs"):
        if key in const:
            setattr(cfg, key, const[key])
    flow = values.get("flow", {})
    for key, val in flow.items():
        setattr(cfg.flow, key, val)
    if "dt_safety" in flow and not 0 < flow["dt_safety"] <= 1:
        errors.append("flow.dt_safety: must lie in (0, 1]")
    if "dir" in values.get("output", {}):
        cfg.out_dir = values["output"]["dir"]

    if errors:
        raise ConfigurationError(f"{len(errors)} configuration error(s)", errors)
    return cfg
