import csv
import json

import pytest

from romfsi.harness import cli
from romfsi.harness.config import OUTPUT_ENV


@pytest.fixture(autouse=True)
def _output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "out"))
    return tmp_path / "out"


def test_flags_cover_every_config_key():
    args = cli.build_parser().parse_args(
        ["run", "--delta-r", "0.01", "--Z", "none", "--mu", "0.9,4", "--fail-fast", "yes"])
    cfg = cli._config_from_args(args)
    assert cfg.delta_r == 0.01 and cfg.Z is None and cfg.mu == [0.9, 4.0] and cfg.fail_fast


def test_run_compare_and_plots(tmp_path, _output_dir, capsys):
    base = ["run", "--t-end", "1.5", "--t-start", "0.5"]
    assert cli.main(base + ["--predictor", "linear"]) == cli.EXIT_OK
    assert cli.main(base + ["--run-dir", str(tmp_path / "q")]) == cli.EXIT_OK
    lin = _output_dir / "fom-fom_linear"
    summary = json.loads((lin / "summary.json").read_text())
    assert summary["steps"] == 10 and summary["unconverged_steps"] == 0

    out_csv = tmp_path / "cmp.csv"
    assert cli.main(["compare", str(lin), str(tmp_path / "q"), "--out", str(out_csv)]) == cli.EXIT_OK
    assert "mean_error=" in capsys.readouterr().out
    with open(out_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10 and float(rows[0]["relative_error"]) >= 0.0

    plots = tmp_path / "plots"
    assert cli.main(["export-plots", str(lin), str(tmp_path / "q"), "--out", str(plots),
                     "--labels", "lin", "quad"]) == cli.EXIT_OK
    names = {p.name for p in plots.iterdir()}
    assert {"cumulative_iterations.png", "outlet_section.png", "stress_strain_lin.png",
            "stress_strain_quad.csv", "cumulative_iterations_lin.csv"} <= names


def test_unconverged_run_exits_2():
    # plain Gauss-Seidel diverges in the strongly coupled regime
    assert cli.main(["run", "--t-end", "0.5", "--accelerator", "gauss-seidel"]) == cli.EXIT_UNCONVERGED
    assert cli.main(["run", "--t-end", "0.5", "--max-iters", "1", "--fail-fast", "true"]) \
        == cli.EXIT_UNCONVERGED


def test_bad_input_exits_1(tmp_path, capsys):
    assert cli.main(["run", "--mode", "rom-fom"]) == cli.EXIT_ERROR
    assert "model_bundle" in capsys.readouterr().err
    assert cli.main(["compare", str(tmp_path), str(tmp_path)]) == cli.EXIT_ERROR
    with pytest.raises(SystemExit):
        cli.main(["run", "--delta-r", "abc"])


def test_train_then_data_driven_sweep(tmp_path, _output_dir):
    bundle = tmp_path / "bundle"
    assert cli.main(["train", "--t-end", "4", "--p", "100", "--Z", "20",
                     "--bundle", str(bundle)]) == cli.EXIT_OK
    assert (bundle / "manifest.json").exists()
    rc = cli.main(["sweep", "--t-end", "1", "--model-bundle", str(bundle), "--p", "100",
                   "--predictors", "quadratic", "data-driven", "--modes", "fom-fom", "rom-fom"])
    assert rc == cli.EXIT_OK
    with open(_output_dir / "sweep" / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert all(r["unconverged"] == "0" and r["error"] == "" for r in rows)
