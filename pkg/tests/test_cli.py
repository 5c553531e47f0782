import json

import pytest

from minstab.cli import EXIT_ERROR, EXIT_OK, main, run_pipeline
from minstab.config import parse_config
from minstab.errors import ConfigurationError

LINEAR = """
[domain]
n = 2
bounds = 0, 1, 0, 1
resolution = 17, 17

[function]
builtin = linear
m = 2
A = 0.1, 0, 0, 0.2

[flow]
residual_target = 1e-8
"""

ALGEBRA = """
[constants]
xi_count = 2000
xi_pairs = 2:2, 3:3
"""


def test_parse_config_values():
    cfg = parse_config(LINEAR, "pipeline")
    assert cfg.n == 2 and cfg.m == 2
    assert cfg.bounds == [(0.0, 1.0), (0.0, 1.0)]
    assert cfg.resolution == [17, 17]
    assert cfg.params["A"] == [0.1, 0.0, 0.0, 0.2]
    assert cfg.flow.residual_target == 1e-8
    assert cfg.mode == "slope"


def test_parse_config_accumulates_errors():
    text = """
[domain]
n = 2
bounds = 0, 1, 1, 0
resolution = 3, 17

[function]
builtin = nope
m = 2

[constants]
mode = fast
bogus = 1
"""
    with pytest.raises(ConfigurationError) as exc:
        parse_config(text, "pipeline")
    errors = exc.value.errors
    assert any(e.startswith("domain.bounds") for e in errors)
    assert any(e.startswith("domain.resolution") for e in errors)
    assert any(e.startswith("function.builtin") for e in errors)
    assert any(e.startswith("constants.mode") for e in errors)
    assert any(e.startswith("constants.bogus") for e in errors)


def test_parse_config_missing_fields():
    with pytest.raises(ConfigurationError) as exc:
        parse_config("[domain]\nn = 2\n", "analyze")
    assert {e.split(":")[0] for e in exc.value.errors} >= {
        "domain.bounds", "domain.resolution", "function.builtin", "function.m"}


def test_parse_config_shape_checks():
    bad = LINEAR.replace("A = 0.1, 0, 0, 0.2", "A = 0.1, 0, 0")
    with pytest.raises(ConfigurationError) as exc:
        parse_config(bad)
    assert any("expected 4 numbers" in e for e in exc.value.errors)


def test_verify_algebra_needs_no_function():
    cfg = parse_config(ALGEBRA, "verify-algebra")
    assert cfg.xi_pairs == [(2, 2), (3, 3)] and cfg.xi_count == 2000


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_pipeline_linear(tmp_path):
    out = tmp_path / "out"
    code = main(["pipeline", "--config", str(_write(tmp_path, LINEAR)), "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == "1.0"
    assert report["second_variation"]["min_eig_estimate"] > 0
    assert report["criterion"]["verdict_per_mode"]["slope"] is True
    tol = report["tolerances"]
    assert tol["tol_eig"] == pytest.approx(10 / 16**2)
    assert tol["residual_target"] == 1e-8
    assert (out / "trace.csv").exists() and (out / "final.csv").exists()


def test_pipeline_reproducible(tmp_path):
    text = LINEAR.replace("linear", "random_fourier").replace(
        "A = 0.1, 0, 0, 0.2", "seed = 5\namplitude = 0.05").replace("17, 17", "9, 9")
    for name in ("a", "b"):
        cfg = parse_config(text)
        cfg.out_dir = str(tmp_path / name)
        run_pipeline(cfg)
    for name in ("report.json", "trace.csv", "final.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_verify_algebra_cli(tmp_path):
    out = tmp_path / "alg"
    code = main(["verify-algebra", "--config", str(_write(tmp_path, ALGEBRA)), "--out", str(out),
                 "--seed", "3"])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 3
    assert all(b["violations"] == 0 for b in report["xi_batches"])
    assert any(c["violations"] > 0 for c in report["negative_controls"])


def test_criterion_cli_fails_on_steep_graph(tmp_path):
    steep = LINEAR.replace("A = 0.1, 0, 0, 0.2", "A = 2, 0, 0, 1")
    code = main(["criterion", "--config", str(_write(tmp_path, steep)), "--out", str(tmp_path / "c")])
    assert code == 2


def test_malformed_config_exits_one(tmp_path, capsys):
    bad = _write(tmp_path, "[domain]\nn = two\n")
    code = main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert code == EXIT_ERROR
    err = capsys.readouterr().err
    assert "domain.n" in err and "function.builtin" in err


def test_missing_config_file(tmp_path):
    assert main(["analyze", "--config", str(tmp_path / "missing.ini")]) == EXIT_ERROR


def test_analyze_writes_fields(tmp_path):
    out = tmp_path / "an"
    assert main(["analyze", "--config", str(_write(tmp_path, LINEAR)), "--out", str(out)]) == EXIT_OK
    header = (out / "fields.csv").read_text().splitlines()[0]
    assert header.startswith("node_index,x1,x2,f1,f2,star_omega,mean_curvature,V1")


def test_verify_algebra_reports_exact_worst_case(tmp_path):
    cfg = parse_config(ALGEBRA.replace("2:2, 3:3", "4:3"), "verify-algebra")
    cfg.out_dir = str(tmp_path)
    code, report = run_pipeline(cfg)
    rows = {r["cap"]: r for r in report["exact_worst_case"]}
    assert rows["slope_supported"]["bound_holds"]
    assert not rows["slope"]["bound_holds"] and rows["slope"]["witness"] is not None
    assert code == EXIT_OK  # the random batch itself stays clean
