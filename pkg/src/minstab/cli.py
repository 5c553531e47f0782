"""Command-line entry point.

Usage::

    minstab SUBCOMMAND [--config PATH] [--seed N] [--out DIR] [--mode MODE]

Exit codes: 0 stable / passed, 2 unstable / failed, 3 inconclusive,
1 operational error (bad config, I/O, blow-up).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import adversarial_scan, check_xi_inequality, xi_form_spectrum
from .config import SUBCOMMANDS, RunConfig, parse_config
from .criterion import CriterionConstants, MODES, check_graph, minimality_tolerance
from .errors import MinstabError, ConfigurationError
from .flow import monitor_omega, run_flow, scale_to_criterion, write_trace_csv
from .functions import make_builtin
from .grid import (
    build_grid,
    compute_jet,
    induced_metric,
    mean_curvature_vector,
    sample_function,
)
from .snapshots import write_sample_csv
from .variation import INCONCLUSIVE, STABLE, UNSTABLE, EigenConfig, min_rayleigh

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_ERROR, EXIT_UNSTABLE, EXIT_INCONCLUSIVE = 0, 1, 2, 3
VERDICT_EXIT = {STABLE: EXIT_OK, UNSTABLE: EXIT_UNSTABLE, INCONCLUSIVE: EXIT_INCONCLUSIVE}

log = logging.getLogger("minstab")


def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _sample(cfg: RunConfig):
    dom = build_grid(cfg.n, cfg.bounds, cfg.resolution)
    evaluator = make_builtin(cfg.builtin, cfg.n, cfg.m, cfg.params)
    sample = compute_jet(sample_function(dom, cfg.m, evaluator))
    if cfg.flow.scaling is not None:
        sample = sample.scaled(cfg.flow.scaling)
    return sample


def _tolerances(cfg: RunConfig, sample=None) -> dict:
    tol = {
        "residual_target": cfg.flow.residual_target,
        "eigen_residual_tol": cfg.residual_tol,
        "xi_tol": cfg.xi_tol,
        "dt_safety": cfg.flow.dt_safety,
    }
    if sample is not None:
        h2 = float(np.max(sample.domain.spacing)) ** 2
        tol["tol_eig"] = cfg.tol_eig if cfg.tol_eig is not None else 10.0 * h2
        tol["minimality_tol"] = minimality_tolerance(sample)
        tol["omega_drop_tol"] = 10.0 * h2
    return tol


def _constants_dict(c: CriterionConstants) -> dict:
    return {
        "n": c.n, "m": c.m, "c": c.c, "slope": c.slope, "delta": c.delta,
        "epsilon_star": c.epsilon_star, "omega_threshold_paper": c.omega_threshold_paper,
        "omega_threshold_derived": c.omega_threshold_derived, "slope_supported": c.slope_supported,
    }


def _write_fields(path: Path, sample, eigenfield=None) -> None:
    metric = induced_metric(sample)
    fields = {
        "star_omega": metric.star_omega,
        "mean_curvature": np.linalg.norm(mean_curvature_vector(sample, metric), axis=-1),
    }
    if eigenfield is not None:
        fields["V"] = eigenfield.V
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_sample_csv(sample, fh, fields)


def cmd_criterion(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    sample = _sample(cfg)
    consts = CriterionConstants.from_dims(cfg.n, cfg.m)
    report = check_graph(sample, None, consts, cfg.mode)
    code = EXIT_OK if report.passed else EXIT_UNSTABLE
    return code, {"constants": _constants_dict(consts), "criterion": report.to_dict(),
                  "tolerances": _tolerances(cfg, sample)}


def cmd_analyze(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    sample = _sample(cfg)
    consts = CriterionConstants.from_dims(cfg.n, cfg.m)
    crit = check_graph(sample, None, consts, cfg.mode)
    eig = min_rayleigh(sample, EigenConfig(tol_eig=cfg.tol_eig, residual_tol=cfg.residual_tol, seed=cfg.seed))
    _write_fields(out / "fields.csv", sample, eig.eigenfield)
    return VERDICT_EXIT[eig.verdict], {
        "constants": _constants_dict(consts), "criterion": crit.to_dict(),
        "second_variation": eig.to_dict(), "tolerances": _tolerances(cfg, sample),
    }


def cmd_flow(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    sample = _sample(cfg)
    result = run_flow(sample, cfg.flow)
    with open(out / "trace.csv", "w", encoding="utf-8", newline="") as fh:
        write_trace_csv(result.trace, fh)
    _write_fields(out / "final.csv", result.state.sample)
    h2 = float(np.max(sample.domain.spacing)) ** 2
    omega = monitor_omega(result.trace, 10.0 * h2, result.min_star_omega_seen)
    if result.status == "blow_up":
        code = EXIT_ERROR
    else:
        code = EXIT_OK if result.converged else EXIT_INCONCLUSIVE
    return code, {
        "flow": {"status": result.status, "message": result.message, "steps": result.state.steps,
                 "t": result.state.t, "residual": result.state.residual,
                 "min_star_omega": result.state.min_star_omega},
        "omega_monitor": omega.__dict__,
        "tolerances": _tolerances(cfg, sample),
    }


def cmd_verify_algebra(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    batches = []
    violations = 0
    for k, (n, m) in enumerate(cfg.xi_pairs):
        rep = check_xi_inequality(n, m, count=cfg.xi_count, seed=cfg.seed + k, tol=cfg.xi_tol)
        violations += rep.violations
        batches.append(rep.to_dict())
    controls = []
    for n, m in cfg.xi_pairs:
        scan = adversarial_scan(n, m, lam_value=1.0, max_samples=50_000)
        controls.append({"n": n, "m": m, "examined": scan.examined, "violations": scan.violations,
                         "min_margin": scan.min_margin})
    # exact worst case with every lambda_i at the cap, for both slopes
    exact = []
    for n, m in cfg.xi_pairs:
        consts = CriterionConstants.from_dims(n, m)
        for label, cap in (("slope", consts.slope), ("slope_supported", consts.slope_supported)):
            lam = np.zeros(n)
            lam[: min(n, m)] = cap
            spectrum = xi_form_spectrum(n, m, lam)
            exact.append({"n": n, "m": m, "cap": label, "lambda": cap,
                          "min_eigenvalue": spectrum.min_eigenvalue, "bound_holds": spectrum.positive,
                          "witness": None if spectrum.positive else spectrum.witness})
    code = EXIT_OK if violations == 0 else EXIT_UNSTABLE
    return code, {"xi_batches": batches, "negative_controls": controls, "exact_worst_case": exact,
                  "tolerances": _tolerances(cfg)}


def cmd_pipeline(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    phi = _sample(cfg)
    consts = CriterionConstants.from_dims(cfg.n, cfg.m)
    scaled, t = scale_to_criterion(phi, consts, cfg.mode)
    result = run_flow(scaled, cfg.flow)
    with open(out / "trace.csv", "w", encoding="utf-8", newline="") as fh:
        write_trace_csv(result.trace, fh)
    final = result.state.sample
    crit = check_graph(final, None, consts, cfg.mode)
    eig = min_rayleigh(final, EigenConfig(tol_eig=cfg.tol_eig, residual_tol=cfg.residual_tol, seed=cfg.seed))
    _write_fields(out / "final.csv", final, eig.eigenfield)
    h2 = float(np.max(phi.domain.spacing)) ** 2
    omega = monitor_omega(result.trace, 10.0 * h2, result.min_star_omega_seen)
    if result.status == "blow_up":
        code = EXIT_ERROR
    elif not result.converged:
        code = EXIT_INCONCLUSIVE
    else:
        code = VERDICT_EXIT[eig.verdict]
    return code, {
        "constants": _constants_dict(consts),
        "scaling": {"t": t, "mode": cfg.mode},
        "flow": {"status": result.status, "message": result.message, "steps": result.state.steps,
                 "t": result.state.t, "residual": result.state.residual},
        "omega_monitor": omega.__dict__,
        "criterion": crit.to_dict(),
        "second_variation": eig.to_dict(),
        "tolerances": _tolerances(cfg, phi),
    }


COMMANDS = {
    "criterion": cmd_criterion,
    "analyze": cmd_analyze,
    "flow": cmd_flow,
    "verify-algebra": cmd_verify_algebra,
    "pipeline": cmd_pipeline,
}


def run_pipeline(cfg: RunConfig) -> tuple[int, dict]:
    """Run ``cfg.subcommand``, write ``report.json`` into ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    code, body = COMMANDS[cfg.subcommand](cfg, out)
    report = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "subcommand": cfg.subcommand,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "exit_code": code,
        **body,
    }
    (out / "report.json").write_text(dump_report(report), encoding="utf-8")
    return code, report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minstab", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="INI config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text, args.subcommand)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = str(args.out)
        if args.mode is not None:
            cfg.mode = args.mode
        code, report = run_pipeline(cfg)
    except ConfigurationError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (MinstabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{cfg.subcommand}: exit {code}; report written to {Path(cfg.out_dir) / 'report.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
