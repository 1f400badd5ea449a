import csv
import math
from pathlib import Path

import numpy as np
import pytest

from msanet.cli import (main, parse_config, run_experiment_command,
                        write_loss_history)
from msanet.training import IterationRow, RunRecord


def test_sine_defaults_reproduce_reference_settings():
    cfg = parse_config(["train", "--experiment", "sine"])
    assert cfg.samples == 20
    assert cfg.width == 3
    assert cfg.bounds == (-1.0, 1.0)
    assert cfg.rho == 5.0
    assert cfg.final_time == 5.0
    assert cfg.runs == 20
    assert cfg.iters == 800
    assert cfg.tau == 1e-8
    assert cfg.integrator == "euler"
    assert cfg.multistart_scales == 6
    assert cfg.multistart_draws == 25


def test_classif_defaults():
    cfg = parse_config(["train", "--experiment", "classif"])
    assert cfg.samples == 800
    assert cfg.width == 6
    assert cfg.bounds == (-2.0, 2.0)
    assert cfg.init == "uniform"


def test_step_defaults():
    cfg = parse_config(["train", "--experiment", "step"])
    assert cfg.samples == 800
    assert cfg.width == 3
    assert cfg.bounds == (-1.0, 1.0)


def test_explicit_bounds_override():
    cfg = parse_config(["train", "--experiment", "classif", "--bounds", "-2", "2"])
    assert cfg.bounds == (-2.0, 2.0)
    cfg = parse_config(["train", "--experiment", "sine", "--bounds", "-3", "3"])
    assert cfg.bounds == (-3.0, 3.0)


def test_invalid_runs_is_usage_error():
    with pytest.raises(ValueError, match="runs"):
        parse_config(["train", "--experiment", "sine", "--runs", "0"])
    assert main(["train", "--experiment", "sine", "--runs", "0"]) == 2


def test_config_file_layering(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("experiment = sine\nsamples = 7\nrho = 2.5\n# comment\n")
    cfg = parse_config(["train", "--config", str(f)])
    assert cfg.experiment == "sine"
    assert cfg.samples == 7
    assert cfg.rho == 2.5
    # flags override the file
    cfg = parse_config(["train", "--config", str(f), "--samples", "9"])
    assert cfg.samples == 9


def test_config_file_unknown_key_rejected(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("experiment = sine\nnot_a_key = 3\n")
    with pytest.raises(ValueError, match="unknown key"):
        parse_config(["train", "--config", str(f)])


def _run_cli(tmp_path, name, *extra):
    out = tmp_path / name
    rc = main(["train", "--experiment", "sine", "--strategy", "shallow",
               "--runs", "1", "--iters", "1", "--samples", "4", "--seed", "3",
               "--no-figures", "--out-dir", str(out), *extra])
    assert rc == 0
    return out


def test_smoke_csvs_exist_with_headers(tmp_path):
    out = _run_cli(tmp_path, "smoke")
    hist = (out / "loss_history.csv").read_text().splitlines()
    assert hist[0] == "run_id,iteration,layers,train_loss,test_loss,lambda_sq,wall_ms"
    assert len(hist) == 3  # header + rows for iterations 0 and 1
    summ = (out / "summary.csv").read_text().splitlines()
    assert summ[0] == "run_id,min_train_loss,argmin_iteration,test_loss_at_best,final_layers"
    assert len(summ) == 2
    preds = (out / "predictions.csv").read_text().splitlines()
    assert preds[0] == "run_id,x1,y_true,y_pred"
    assert len(preds) == 1 + 201


def _strip_wall(text: str) -> str:
    lines = text.splitlines()
    return "\n".join(",".join(line.split(",")[:-1]) for line in lines)


def test_same_seed_reproducible_output(tmp_path):
    out1 = _run_cli(tmp_path, "a", "--iters", "8")
    out2 = _run_cli(tmp_path, "b", "--iters", "8")
    h1 = (out1 / "loss_history.csv").read_text()
    h2 = (out2 / "loss_history.csv").read_text()
    # identical except the wall-clock column
    assert _strip_wall(h1) == _strip_wall(h2)
    assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()
    assert (out1 / "predictions.csv").read_bytes() == (out2 / "predictions.csv").read_bytes()


def test_lambda_column_nonnegative_and_round_trip(tmp_path):
    out = _run_cli(tmp_path, "c", "--iters", "6")
    with open(out / "loss_history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    for r in rows:
        assert float(r["lambda_sq"]) >= 0.0
    # 17 significant digits round-trip through text exactly
    vals = [float(r["train_loss"]) for r in rows]
    assert all(float(f"{v:.17g}") == v for v in vals)


def test_write_loss_history_empty_rows(tmp_path):
    path = tmp_path / "empty.csv"
    write_loss_history([RunRecord(rows=[])], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1  # header only


def test_unwritable_out_dir_fails(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rc = main(["train", "--experiment", "sine", "--runs", "1", "--iters", "1",
               "--samples", "4", "--no-figures", "--out-dir", str(blocker / "sub")])
    assert rc == 1


def test_figures_rendered(tmp_path):
    out = tmp_path / "figs"
    rc = main(["train", "--experiment", "sine", "--strategy", "shallow",
               "--runs", "1", "--iters", "2", "--samples", "4", "--seed", "3",
               "--out-dir", str(out)])
    assert rc == 0
    assert (out / "loss_history.png").exists()
    assert (out / "predictions.png").exists()
