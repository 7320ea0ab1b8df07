import json
import math
import pickle

import numpy as np
import pytest

from itolocal.bv2d import Surface2D
from itolocal.harness import builtins as B
from itolocal.harness.builtins import NAMES, builtin, even_cell
from itolocal.harness.cli import main
from itolocal.harness.config import ConfigError, ExperimentConfig, validate
from itolocal.harness.expr import Expression, ExpressionError, inline_spec
from itolocal.harness.run import Metric, Report, bootstrap_mean_ci, run
from itolocal.harness.speccheck import spec_check
from itolocal.itoformula import FunctionSpec


# ---- builtins -------------------------------------------------------------------

@pytest.mark.parametrize("name", NAMES)
def test_builtins_pass_spec_check(name):
    diag = spec_check(builtin(name))
    assert diag.ok, diag.failures


@pytest.mark.parametrize("name", NAMES)
def test_builtins_pickle(name):
    fs = pickle.loads(pickle.dumps(builtin(name)))
    assert isinstance(fs, FunctionSpec)
    assert np.isfinite(fs.f(0.3, 0.2))


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin("nope")


def test_tanaka_atom_and_square_laplacian():
    tan = builtin("tanaka")
    h = tan.grad_left_v
    assert h.eval_left(0.5, 1e-9) - h.eval_left(0.5, 0.0) == 2.0
    assert builtin("square").lap_left_h(0.2, 5.0) == 2.0


def test_example_1_gradient_as_displayed():
    fs = builtin("paper-example-1")
    t = np.linspace(0.01, 1.99, 23)[:, None]
    x = np.linspace(-1.99, 1.99, 31)[None, :]
    pos = np.sin(np.pi * x) * np.sin(np.pi * t) > 0
    want = np.where(pos, np.pi * np.cos(np.pi * x) * np.sin(np.pi * t), 0.0)
    assert np.allclose(fs.grad_left(t, x), want, atol=1e-12)


def test_even_cell_is_left_continuous():
    assert even_cell(1.0, 1.0) and not even_cell(1.0 + 1e-12, 1.0)
    assert even_cell(0.5, -0.5) == False  # noqa: E712


def test_spec_check_flags_corrupted_split():
    fs = builtin("tanaka")
    bad = FunctionSpec(fs.name, fs.f, fs.dt_left, fs.grad_left, f_v=lambda t, x: -np.abs(x),
                       grad_left_v=fs.grad_left_v)
    diag = spec_check(bad)
    assert not diag.ok
    assert any(f.startswith("split_f") for f in diag.failures)


def test_spec_check_flags_wrong_derivative():
    fs = builtin("square")
    bad = FunctionSpec(fs.name, fs.f, fs.dt_left, lambda t, x: -2 * x, f_h=fs.f_h,
                       grad_h=fs.grad_h)
    diag = spec_check(bad)
    assert not diag.checks["grad_left"] and "t=" in diag.failures[0]


def test_example_2_variation_finite():
    diag = spec_check(builtin("paper-example-2"))
    assert diag.variation_converged and math.isfinite(diag.variation)


def test_sine_curve_variation_exact():
    c = B.SineCurve(0.2, 1.0)
    assert c.variation(1.0) == pytest.approx(0.2 * math.sin(1.0))
    assert c.variation(math.pi) == pytest.approx(0.4)


# ---- expressions ----------------------------------------------------------------

def test_expression_evaluates_and_pickles():
    e = Expression("sin(pi * x) * t + abs(x)")
    e2 = pickle.loads(pickle.dumps(e))
    assert e2(0.5, 0.5) == pytest.approx(0.5 + 0.5)
    assert e(np.zeros(3), 1.0).shape == (3,)


@pytest.mark.parametrize("src", ["__import__('os')", "x.real", "[i for i in x]",
                                 "lambda: 1", "open('f')", "y + 1", "x[0]"])
def test_expression_rejects_unsafe(src):
    with pytest.raises(ExpressionError):
        Expression(src)


def test_inline_spec():
    fs = inline_spec({"f": "x**2", "dt_left": "0*x", "grad_left": "2*x", "f_h": "x**2",
                      "grad_h": "2*x", "lap_left_h": "2 + 0*x"})
    assert spec_check(fs).ok
    with pytest.raises(ExpressionError):
        inline_spec({"f": "x"})


# ---- config ---------------------------------------------------------------------

def test_config_defaults_and_tolerances():
    cfg = ExperimentConfig.from_dict({"kind": "formula-check", "tolerances": {"normalized_residual": 0.2}})
    assert cfg.tolerances["normalized_residual"] == 0.2
    assert cfg.n_steps == 4096 and cfg.function == {"builtin": "tanaka"}


@pytest.mark.parametrize("doc", [
    {"kind": "bogus"},
    {"kind": "occupation", "n_paths": 0},
    {"kind": "occupation", "tolerances": {"relative_error": -1}},
    {"kind": "occupation", "grid": {"n_steps": 10, "dx": 1}},
    {"kind": "occupation", "seed": -3},
])
def test_config_rejects(doc):
    with pytest.raises(ConfigError):
        validate(doc)


def test_config_error_has_line_number(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "kind": "occupation",\n  "n_paths": 10,\n  "grid": {\n    "n_stepz": 4\n  }\n}\n')
    with pytest.raises(ConfigError, match="line 5"):
        ExperimentConfig.load(p)
    p.write_text('{\n  "kind": "occupation",\n  "n_paths": 10,,\n}')
    with pytest.raises(ConfigError, match="line 3"):
        ExperimentConfig.load(p)


# ---- reports --------------------------------------------------------------------

def test_metric_verdicts():
    assert Metric("a", 0.1, 0.2, "<=").verdict is True
    assert Metric("a", math.nan, 0.2, "<=").verdict is False
    assert Metric("a", 1.0).verdict is None
    rep = Report({}, [Metric("a", 0.3, 0.2, "<="), Metric("b", 1.0)])
    assert not rep.passed and "fail" in rep.metrics_csv()


def test_bootstrap_ci_brackets_mean():
    v = np.random.default_rng(0).exponential(size=200)
    lo, hi = bootstrap_mean_ci(v, 1)
    assert lo < v.mean() < hi
    assert bootstrap_mean_ci(v, 1) == (lo, hi)


def test_run_variation_example_1():
    cfg = ExperimentConfig.from_dict({"kind": "variation", "function": {"builtin": "paper-example-1"},
                                      "box": [0, 2, 0, 2]})
    rep = run(cfg)
    assert rep.passed
    val = next(m.value for m in rep.metrics if m.name == "variation")
    assert val == pytest.approx(16 * math.pi, rel=1e-9)


def test_run_writes_files(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "occupation", "n_paths": 8,
                                      "grid": {"n_steps": 1024}})
    rep = run(cfg, tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"report.json", "metrics.csv", "data.csv"}
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["config"]["seed"] == 0 and "rng" in doc
    assert rep.data and len(rep.data) == 8


# ---- CLI ------------------------------------------------------------------------

def _cli(args, tmp_path, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_cli_pass(tmp_path, capsys):
    code, out = _cli(["check", "--builtin", "square", "--paths", "8", "--steps", "1024"], tmp_path)
    assert code == 0
    assert "mean_normalized_residual" in capsys.readouterr().out
    assert (out / "metrics.csv").exists()


def test_cli_tolerance_failure(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "formula-check", "n_paths": 8, "grid": {"n_steps": 256},
                               "tolerances": {"normalized_residual": 1e-9}}))
    code, _ = _cli(["check", "--config", str(cfg)], tmp_path)
    assert code == 1


def test_cli_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nosuch"])
    assert exc.value.code == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"kind": "formula-check", "n_paths": -1}')
    assert main(["check", "--config", str(cfg)]) == 2
    assert "n_paths" in capsys.readouterr().err
    assert main(["check", "--builtin", "nope"]) == 2
    assert main(["occupation", "--config", str(cfg)]) == 2


def test_cli_json_format(capsys):
    assert main(["mollifier", "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["passed"] and doc["config"]["kind"] == "mollifier-report"


def test_same_config_byte_identical_csv(tmp_path):
    args = ["check", "--builtin", "tanaka", "--paths", "16", "--steps", "1024", "--seed", "7"]
    _, a = _cli(args, tmp_path, "a")
    _, b = _cli(args, tmp_path, "b")
    assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_worker_count_does_not_change_results(tmp_path, monkeypatch):
    args = ["check", "--builtin", "paper-example-1", "--paths", "12", "--steps", "512"]
    monkeypatch.setenv("ITOLOCAL_WORKERS", "1")
    _, a = _cli(args, tmp_path, "a")
    monkeypatch.setenv("ITOLOCAL_WORKERS", "3")
    _, b = _cli(args, tmp_path, "b")
    assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()


def test_cli_figures(tmp_path):
    pytest.importorskip("matplotlib")
    code, out = _cli(["mollifier", "--figures"], tmp_path)
    assert code == 0 and list(out.glob("*.png"))
