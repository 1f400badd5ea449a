"""Command-line driver: multi-run experiments persisted as CSV plus figures.

`msanet train --experiment sine --strategy a2 ...` executes independent
training runs with per-run derived seeds, writes loss_history.csv,
summary.csv and predictions.csv into the output directory, prints an
aggregate table, and (unless disabled) renders the report figures next to
the CSV files.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model, tasks, training
from .integrators import IntegratorKind
from .maximize import AscentConfig, MultistartConfig

_TASK_DEFAULTS = {
    "sine": dict(samples=20, width=3, bounds=(-1.0, 1.0), init="zeros"),
    "step": dict(samples=800, width=3, bounds=(-1.0, 1.0), init="zeros"),
    "classif": dict(samples=800, width=6, bounds=(-2.0, 2.0), init="uniform"),
}

_GLOBAL_DEFAULTS = dict(
    strategy="a2", runs=20, iters=800, seed=0, rho=5.0, final_time=5.0,
    integrator="euler", tau=1e-8, patience=100, threads=1, out_dir="results",
    delta=1.0, const_c=1.0, multistart_scales=6, multistart_draws=25,
    ascent_evals=12, ascent_tol=1e-9, ascent_top_k=4, screen_samples=64,
    figures=True,
)

_INT_KEYS = {"samples", "runs", "iters", "seed", "patience", "threads",
             "multistart_scales", "multistart_draws", "ascent_evals",
             "ascent_top_k", "screen_samples", "width"}
_FLOAT_KEYS = {"rho", "final_time", "tau", "delta", "const_c", "ascent_tol"}
_BOOL_KEYS = {"figures"}


@dataclass
class CliConfig:
    experiment: str
    strategy: str
    runs: int
    iters: int
    samples: int
    seed: int
    rho: float
    final_time: float
    width: int
    bounds: tuple[float, float]
    integrator: str
    tau: float
    patience: int
    init: str
    threads: int
    out_dir: Path
    delta: float
    const_c: float
    multistart_scales: int
    multistart_draws: int
    ascent_evals: int
    ascent_tol: float
    ascent_top_k: int
    screen_samples: int
    figures: bool

    def validate(self) -> None:
        if self.experiment not in tasks.TASKS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.strategy not in training.STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        for key in ("runs", "iters", "samples", "threads", "patience"):
            if getattr(self, key) < 1 and not (key == "iters" and self.iters == 0):
                raise ValueError(f"--{key.replace('_', '-')} must be positive")
        if self.rho <= 0 or self.final_time <= 0 or self.tau <= 0:
            raise ValueError("--rho, --final-time and --tau must be positive")
        if not self.bounds[0] < self.bounds[1]:
            raise ValueError("--bounds must satisfy lo < hi")
        IntegratorKind.parse(self.integrator)

    def problem_spec(self) -> model.ProblemSpec:
        return model.ProblemSpec(
            width=self.width, horizon=self.final_time, bounds=self.bounds,
            rho=self.rho, output_kind=tasks.TASKS[self.experiment].output_kind)

    def train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            rho=self.rho, tau=self.tau, k_max=self.iters,
            strategy=training.strategy_from_name(self.strategy, self.delta, self.const_c),
            integrator=IntegratorKind.parse(self.integrator),
            multistart=MultistartConfig(self.multistart_scales, self.multistart_draws),
            ascent=AscentConfig(self.ascent_evals, self.ascent_tol,
                                self.ascent_top_k, self.screen_samples),
            seed=self.seed, runs=self.runs, patience=self.patience,
            init=self.init)


def _read_config_file(path: Path) -> dict:
    """Flat key=value file; '#' starts a comment; unknown keys are rejected."""
    known = set(_GLOBAL_DEFAULTS) | {"experiment", "samples", "width", "bounds", "init"}
    values: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key == "bounds":
            parts = val.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: bounds needs two numbers")
            values[key] = (float(parts[0]), float(parts[1]))
        elif key in _INT_KEYS:
            values[key] = int(val)
        elif key in _FLOAT_KEYS:
            values[key] = float(val)
        elif key in _BOOL_KEYS:
            values[key] = val.lower() in ("1", "true", "yes", "on")
        else:
            values[key] = val
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msanet",
        description="Train continuous-depth networks by successive "
                    "approximations with shallow-to-deep refinement.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="run one experiment (multiple seeds)")
    p.add_argument("--experiment", choices=sorted(tasks.TASKS), default=None)
    p.add_argument("--strategy", choices=training.STRATEGY_NAMES, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--final-time", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--bounds", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    p.add_argument("--integrator", choices=["euler", "heun"], default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--init", choices=["zeros", "uniform"], default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--delta", type=float, default=None,
                   help="free constant of the theoretical schedule")
    p.add_argument("--const-c", type=float, default=None,
                   help="loss-difference constant of the theoretical schedule")
    p.add_argument("--multistart-scales", type=int, default=None)
    p.add_argument("--multistart-draws", type=int, default=None)
    p.add_argument("--ascent-evals", type=int, default=None)
    p.add_argument("--ascent-tol", type=float, default=None)
    p.add_argument("--ascent-top-k", type=int, default=None)
    p.add_argument("--screen-samples", type=int, default=None)
    p.add_argument("--figures", dest="figures", action="store_true", default=None)
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    p.add_argument("--config", type=str, default=None,
                   help="flat key=value config file; flags override it")
    return parser


def parse_config(argv: list[str]) -> CliConfig:
    """Layer defaults, config-file values and command-line flags."""
    args = _build_parser().parse_args(argv)
    file_values = _read_config_file(Path(args.config)) if args.config else {}

    def pick(key, fallback):
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            return cli_val
        if key in file_values:
            return file_values[key]
        return fallback

    experiment = pick("experiment", None)
    if experiment is None:
        raise ValueError("an experiment must be selected (--experiment)")
    task_defaults = _TASK_DEFAULTS[experiment]

    cfg = CliConfig(
        experiment=experiment,
        strategy=pick("strategy", _GLOBAL_DEFAULTS["strategy"]),
        runs=pick("runs", _GLOBAL_DEFAULTS["runs"]),
        iters=pick("iters", _GLOBAL_DEFAULTS["iters"]),
        samples=pick("samples", task_defaults["samples"]),
        seed=pick("seed", _GLOBAL_DEFAULTS["seed"]),
        rho=pick("rho", _GLOBAL_DEFAULTS["rho"]),
        final_time=pick("final_time", _GLOBAL_DEFAULTS["final_time"]),
        width=pick("width", task_defaults["width"]),
        bounds=tuple(pick("bounds", task_defaults["bounds"])),
        integrator=pick("integrator", _GLOBAL_DEFAULTS["integrator"]),
        tau=pick("tau", _GLOBAL_DEFAULTS["tau"]),
        patience=pick("patience", _GLOBAL_DEFAULTS["patience"]),
        init=pick("init", task_defaults["init"]),
        threads=pick("threads", _GLOBAL_DEFAULTS["threads"]),
        out_dir=Path(pick("out_dir", _GLOBAL_DEFAULTS["out_dir"])),
        delta=pick("delta", _GLOBAL_DEFAULTS["delta"]),
        const_c=pick("const_c", _GLOBAL_DEFAULTS["const_c"]),
        multistart_scales=pick("multistart_scales", _GLOBAL_DEFAULTS["multistart_scales"]),
        multistart_draws=pick("multistart_draws", _GLOBAL_DEFAULTS["multistart_draws"]),
        ascent_evals=pick("ascent_evals", _GLOBAL_DEFAULTS["ascent_evals"]),
        ascent_tol=pick("ascent_tol", _GLOBAL_DEFAULTS["ascent_tol"]),
        ascent_top_k=pick("ascent_top_k", _GLOBAL_DEFAULTS["ascent_top_k"]),
        screen_samples=pick("screen_samples", _GLOBAL_DEFAULTS["screen_samples"]),
        figures=pick("figures", _GLOBAL_DEFAULTS["figures"]),
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# run orchestration


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _train_dataset(cfg: CliConfig) -> tasks.Dataset:
    task = tasks.TASKS[cfg.experiment]
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(cfg.seed, spawn_key=(10_000,))))
    return task.generate(cfg.samples, rng)


def _single_run(cfg: CliConfig, dataset: tasks.Dataset, run_id: int) -> training.RunRecord:
    task = tasks.TASKS[cfg.experiment]
    return training.run_training(
        (dataset.xs, dataset.ys), cfg.problem_spec(), cfg.train_config(),
        run_key=run_id, test_sampler=task.sample_test,
        test_samples=dataset.num_samples)


def run_experiment_command(cfg: CliConfig) -> int:
    """Execute all runs, persist CSVs (and figures), print the summary table."""
    out = cfg.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        print(f"error: output directory {out} is not writable: {err}", file=sys.stderr)
        return 1

    dataset = _train_dataset(cfg)
    t0 = time.perf_counter()
    records: list[training.RunRecord] = []
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            futures = [pool.submit(_single_run, cfg, dataset, rid)
                       for rid in range(cfg.runs)]
            records = [f.result() for f in futures]
    else:
        records = [_single_run(cfg, dataset, rid) for rid in range(cfg.runs)]
    elapsed = time.perf_counter() - t0

    completed = [r for r in records if not r.aborted]
    for rid, rec in enumerate(records):
        if rec.aborted:
            print(f"warning: run {rid} aborted: {rec.abort_reason}", file=sys.stderr)
    if not completed:
        print("error: every run aborted", file=sys.stderr)
        return 1

    write_csv(cfg, records, out)
    _print_table(cfg, records, elapsed)
    if cfg.figures:
        from . import report
        report.render_report(cfg, dataset, records, out)
    return 0


# ---------------------------------------------------------------------------
# CSV writers


def write_csv(cfg: CliConfig, records, out_dir: Path) -> list[Path]:
    """Persist the three experiment files; returns their paths."""
    paths = [out_dir / "loss_history.csv", out_dir / "summary.csv",
             out_dir / "predictions.csv"]
    write_loss_history(records, paths[0])
    write_summary(records, paths[1])
    write_predictions(cfg, records, paths[2])
    return paths


def write_loss_history(records, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "iteration", "layers", "train_loss", "test_loss",
                    "lambda_sq", "wall_ms"])
        for rid, rec in enumerate(records):
            for row in rec.rows:
                w.writerow([rid, row.iteration, row.layers, _fmt(row.train_loss),
                            _fmt(row.test_loss), _fmt(row.lambda_sq),
                            _fmt(row.wall_ms)])


def write_summary(records, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "min_train_loss", "argmin_iteration",
                    "test_loss_at_best", "final_layers"])
        for rid, rec in enumerate(records):
            w.writerow([rid, _fmt(rec.min_train_loss), rec.argmin_iteration,
                        _fmt(rec.test_loss_at_best), rec.final_layers])


def write_predictions(cfg: CliConfig, records, path: Path) -> None:
    task = tasks.TASKS[cfg.experiment]
    grid_xs, y_true = task.grid()
    spec = cfg.problem_spec()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        xcols = ["x1"] if task.input_dim == 1 else ["x1", "x2"]
        w.writerow(["run_id"] + xcols + ["y_true", "y_pred"])
        for rid, rec in enumerate(records):
            if rec.aborted or rec.best_control is None:
                continue
            raw = tasks.predict_grid(rec.best_control, spec, grid_xs,
                                     IntegratorKind.parse(cfg.integrator))
            y_pred = model.prediction_filter(raw) if cfg.experiment == "classif" else raw
            for i in range(grid_xs.shape[0]):
                xs = [_fmt(v) for v in grid_xs[i]]
                w.writerow([rid] + xs + [_fmt(y_true[i]), _fmt(y_pred[i])])


def _print_table(cfg: CliConfig, records, elapsed: float) -> None:
    stats = tasks.aggregate_runs(records)
    mins = stats.min_train_losses
    print(f"experiment={cfg.experiment} strategy={cfg.strategy} runs={len(records)} "
          f"samples={cfg.samples} iters={cfg.iters} ({elapsed:.1f} s)")
    print(f"{'run':>4s} {'min_train':>12s} {'argmin':>7s} {'test@best':>12s} "
          f"{'layers':>6s} {'iters':>6s}")
    for rid, rec in enumerate(records):
        print(f"{rid:4d} {rec.min_train_loss:12.5g} {rec.argmin_iteration:7d} "
              f"{rec.test_loss_at_best:12.5g} {rec.final_layers:6d} "
              f"{rec.rows[-1].iteration:6d}")
    print(f"median min_train_loss: {np.median(mins):.5g}   "
          f"mean: {mins.mean():.5g}   best: {mins.min():.5g}")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return run_experiment_command(cfg)


if __name__ == "__main__":
    sys.exit(main())
