"""``bdmds`` command line: aging data, surrogate training, scheduling and sweeps.

Exit codes: 0 success, 1 usage or input error, 2 infeasible schedule,
3 internal failure.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path

import click
import pandas as pd

from . import aging, dataprep, nnbd
from .cbup import DegradationCostParams, aggregate_cycles, predict_cycles, write_cycles
from .errors import BdmdsError, DomainError, InfeasibleError, ParameterError
from .mds import ExtraConstraints, MicrogridConfig, solve_mds, validate_solution
from .nnodh import (IterationRecord, NnodhConfig, NnodhResult, compare_benchmarks, compute_metrics,
                    default_linear_rate, evaluate, run)
from .pipeline import DEFAULT_ROWS_PER_TEST, fit_surrogate
from .scenario import bundled_scenario, make_scenario, renewable_penetration, rescale_penetration

EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INTERNAL = 1, 2, 3
BATCH_SWEEP = (16, 32, 64, 128, 256, 512, 1024, 2048)
PIPELINES = ("mds", "cycle-limit", "linear-bdc", "nnodh-bcl", "nnodh-pbcl", "nnodh-brl", "nnodh-all")
SIZE_GRID = (200.0, 300.0, 400.0)
PRICE_GRID = (200.0, 250.0, 300.0, 400.0)
BORF_GRID = (0.01, 0.03, 0.05, 0.1, 0.2)
PEN_GRID = (0.2, 0.4, 0.6, 0.8)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    command: str
    out_dir: str
    seed: int
    inputs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = field(default_factory=_version)

    def write(self, out: Path) -> None:
        d = {"command": self.command, "inputs": self.inputs, "seed": self.seed,
             "params": self.params, "out_dir": self.out_dir, "outputs": sorted(self.outputs),
             "version": self.version}
        _write_text(out / "manifest.json", json.dumps(d, indent=2, sort_keys=True) + "\n")


@dataclass
class Context:
    seed: int
    out: Path
    jobs: int
    config_path: Path | None

    def scenario(self) -> MicrogridConfig:
        return bundled_scenario() if self.config_path is None else MicrogridConfig.load(self.config_path)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    tmp.replace(path)


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    tmp = path.with_name(path.name + ".partial")
    frame.to_csv(tmp, index=False, float_format="%.12g", lineterminator="\n")
    tmp.replace(path)


def _write_json(obj, path: Path) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise click.BadParameter("grid must not be empty")
    return values


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Master seed.")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("."),
              show_default=True, help="Output directory.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Worker processes for parallel stages.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="Scenario JSON; defaults to the bundled scenario.")
@click.version_option(_version(), prog_name="bdmds")
@click.pass_context
def cli(ctx, seed, out, jobs, config_path):
    """Battery-degradation-aware microgrid scheduling toolkit."""
    out.mkdir(parents=True, exist_ok=True)
    ctx.obj = Context(seed, out, jobs, config_path)


# ---------------------------------------------------------------------------
# aging data
# ---------------------------------------------------------------------------

@cli.command("simulate-aging")
@click.option("--temps", default="15,25,35", show_default=True, help="Ambient temperatures, degC.")
@click.option("--c-rates", default="0.25,0.5,1", show_default=True, help="C-rates, 1/h.")
@click.option("--full-matrix", is_flag=True, help="Per-cell repeat counts (945 tests) with random conditions.")
@click.option("--max-rows-per-test", type=click.IntRange(min=2), default=DEFAULT_ROWS_PER_TEST,
              show_default=True, help="Rows kept per test, evenly spaced over its life.")
@click.pass_obj
def simulate_aging(ctx: Context, temps, c_rates, full_matrix, max_rows_per_test):
    """Run the synthetic aging campaign and write aging.csv (+ aging.json)."""
    specs = aging.generate_test_matrix(_floats(temps), _floats(c_rates), seed=ctx.seed, full=full_matrix)
    results = aging.run_matrix(specs, jobs=ctx.jobs)
    path = ctx.out / "aging.csv"
    aging.write_dataset(results, path, params=aging.OracleParams(), seed=ctx.seed,
                        max_rows_per_test=max_rows_per_test)
    RunManifest("simulate-aging", str(ctx.out), ctx.seed,
                params={"temps": list(_floats(temps)), "c_rates": list(_floats(c_rates)),
                        "full_matrix": full_matrix, "max_rows_per_test": max_rows_per_test,
                        "n_tests": len(specs)},
                outputs=["aging.csv", "aging.json"]).write(ctx.out)
    click.echo(f"{len(specs)} aging tests -> {path}")


@cli.command("prep")
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--mode", type=click.Choice(dataprep.MODES), default="regressed", show_default=True)
@click.option("--ratio", type=float, default=0.8, show_default=True, help="Share of tests used for training.")
@click.pass_obj
def prep(ctx: Context, dataset, mode, ratio):
    """Pre-process, split by test and standardize an aging CSV."""
    ds = dataprep.build_dataset(aging.read_dataset(dataset), mode)
    tr, va = dataprep.split_by_test(ds, ratio, ctx.seed)
    (tr, va), stats = dataprep.standardize(tr, va)
    dataprep.write_processed(tr, stats, ctx.out / f"train_{mode}.csv", ctx.out / "norm_stats.json")
    dataprep.write_processed(va, stats, ctx.out / f"val_{mode}.csv", ctx.out / "norm_stats.json")
    RunManifest("prep", str(ctx.out), ctx.seed, inputs={"dataset": str(dataset)},
                params={"mode": mode, "ratio": ratio},
                outputs=[f"train_{mode}.csv", f"val_{mode}.csv", "norm_stats.json"]).write(ctx.out)
    click.echo(f"{len(tr.groups())} train / {len(va.groups())} validation tests")


@cli.command("train")
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--mode", type=click.Choice(dataprep.MODES), default="regressed", show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=256, show_default=True)
@click.option("--epochs", type=click.IntRange(min=1), default=65, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=nnbd.TrainConfig.learning_rate,
              show_default=True, help="Initial learning rate.")
@click.option("--shuffle", is_flag=True, help="Shuffle rows every epoch (off by default).")
@click.option("--batch-sweep", is_flag=True, help="Also train at batch sizes 16..2048 and tabulate.")
@click.pass_obj
def train_cmd(ctx: Context, dataset, mode, batch_size, epochs, lr, shuffle, batch_sweep):
    """Train the degradation network; writes model.json and train_report.csv."""
    frame = aging.read_dataset(dataset)
    cfg = nnbd.TrainConfig(batch_size=batch_size, max_epochs=epochs, learning_rate=lr,
                           seed=ctx.seed, shuffle=shuffle)
    fit = fit_surrogate(frame, mode, ctx.seed, cfg)
    fit.model.save(ctx.out / "model.json")
    fit.report.to_csv(ctx.out / "train_report.csv")
    result = {"mode": mode, "val_accuracy_15": fit.val_accuracy, "best_epoch": fit.report.best_epoch,
              "n_train_tests": len(fit.train.groups()), "n_val_tests": len(fit.val.groups())}
    _write_json(result, ctx.out / "train_metrics.json")
    outputs = ["model.json", "train_report.csv", "train_metrics.json"]
    if batch_sweep:
        rows = []
        for bs in BATCH_SWEEP:
            f = fit_surrogate(frame, mode, ctx.seed,
                              nnbd.TrainConfig(batch_size=bs, max_epochs=epochs, learning_rate=lr,
                                               seed=ctx.seed, shuffle=shuffle))
            rows.append({"batch_size": bs, "val_accuracy_15": f.val_accuracy,
                         "val_mse": f.report.best.val_mse, "best_epoch": f.report.best_epoch})
        _write_csv(pd.DataFrame(rows), ctx.out / "batch_sweep.csv")
        outputs.append("batch_sweep.csv")
    RunManifest("train", str(ctx.out), ctx.seed, inputs={"dataset": str(dataset)},
                params={"mode": mode, "batch_size": batch_size, "epochs": epochs, "lr": lr,
                        "shuffle": shuffle, "batch_sweep": batch_sweep},
                outputs=outputs).write(ctx.out)
    click.echo(f"{mode}: validation accuracy {fit.val_accuracy:.4f}")


# ---------------------------------------------------------------------------
# scheduling
# ---------------------------------------------------------------------------

def _load_model(path: Path | None) -> nnbd.DegradationModel:
    if path is None:
        raise click.UsageError("--model is required for this command")
    return nnbd.DegradationModel.load(path)


def _single_result(label: str, config: MicrogridConfig, extra: ExtraConstraints, model,
                   cost_params) -> NnodhResult:
    t0 = time.perf_counter()
    sol = solve_mds(config, extra)
    elapsed = time.perf_counter() - t0
    bd, cost = evaluate(sol, model, cost_params)
    rec = IterationRecord(1, sol, sol.throughput, bd, sol.cost, cost, extra, elapsed)
    return NnodhResult([rec], 1, compute_metrics([rec], 1), "single solve", NnodhConfig(), label)


def run_pipeline(pipeline: str, config: MicrogridConfig, model, cost_params: DegradationCostParams,
                 alpha: float = 0.03, linear_rate: float | None = None, cycle_limit: int = 2) -> NnodhResult:
    if pipeline == "mds":
        return _single_result(pipeline, config, ExtraConstraints(), model, cost_params)
    if pipeline == "cycle-limit":
        return _single_result(pipeline, config, ExtraConstraints(cycle_transition_limit=cycle_limit), model, cost_params)
    if pipeline == "linear-bdc":
        rate = default_linear_rate(config, cost_params) if linear_rate is None else linear_rate
        return _single_result(pipeline, config, ExtraConstraints(linear_bdc_rate=rate), model, cost_params)
    strategy = pipeline.split("-", 1)[1].upper()
    return run(config, model, NnodhConfig(strategy, alpha), cost_params)


def _write_solution_files(result: NnodhResult, model, out: Path, timing: bool) -> list[str]:
    sol = result.best.solution
    _write_csv(sol.to_frame(), out / "schedule.csv")
    cycles = aggregate_cycles(sol)
    write_cycles(cycles, out / "cycles.csv", predict_cycles(model, cycles, sol.config.bess.soh))
    result.write(out / "trace.csv", out / "metrics.json", timing=timing)
    report = validate_solution(sol.config, sol)
    summary = sol.summary()
    summary.update({"max_residual": report.max_residual, "flags": report.flags})
    _write_json(summary, out / "solution.json")
    return ["schedule.csv", "cycles.csv", "trace.csv", "metrics.json", "solution.json"]


@cli.command("schedule")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--pipeline", type=click.Choice(PIPELINES), default="nnodh-bcl", show_default=True)
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.03,
              show_default=True, help="Restriction factor per iteration.")
@click.option("--unit-price", type=float, default=400.0, show_default=True, help="Battery price, $/kWh.")
@click.option("--linear-rate", type=float, default=None, help="Linear degradation price, $/kWh moved.")
@click.option("--cycle-limit", type=click.IntRange(min=0), default=2, show_default=True)
@click.option("--all-strategies", is_flag=True, help="Run all four heuristic strategies and compare.")
@click.option("--timing", is_flag=True, help="Add wall-time columns (outputs no longer reproducible).")
@click.pass_obj
def schedule(ctx: Context, model_path, pipeline, alpha, unit_price, linear_rate, cycle_limit,
             all_strategies, timing):
    """Solve a day-ahead schedule with the chosen pipeline."""
    model = _load_model(model_path)
    config = ctx.scenario()
    cost_params = DegradationCostParams.from_unit_price(unit_price, config.bess.e_max)
    outputs = []
    if all_strategies:
        cols = {}
        for strat in ("bcl", "pbcl", "brl", "all"):
            res = run_pipeline(f"nnodh-{strat}", config, model, cost_params, alpha)
            b = res.best
            cols[f"NNODH-{strat.upper()}"] = {
                "total_cost": b.total_cost, "deg_cost": b.deg_cost, "op_cost": b.op_cost,
                "bd": b.bd, "tcr": res.metrics.tcr, "dcr": res.metrics.dcr, "oci": res.metrics.oci,
                "best_index": res.best_index, "iterations": res.iterations,
                **({"solve_seconds": sum(r.solve_seconds for r in res.trace)} if timing else {})}
        frame = pd.DataFrame(cols)
        frame.index.name = "quantity"
        tmp = ctx.out / "strategies.csv.partial"
        frame.to_csv(tmp, float_format="%.12g", lineterminator="\n")
        tmp.replace(ctx.out / "strategies.csv")
        outputs.append("strategies.csv")
    else:
        res = run_pipeline(pipeline, config, model, cost_params, alpha, linear_rate, cycle_limit)
        outputs += _write_solution_files(res, model, ctx.out, timing)
        m = res.metrics
        click.echo(f"{pipeline}: best iteration {res.best_index}/{res.iterations} "
                   f"total {res.best.total_cost:.2f} $, tcr {m.tcr}, dcr {m.dcr}")
    RunManifest("schedule", str(ctx.out), ctx.seed,
                inputs={"config": None if ctx.config_path is None else str(ctx.config_path),
                        "model": str(model_path)},
                params={"pipeline": pipeline, "alpha": alpha, "unit_price": unit_price,
                        "linear_rate": linear_rate, "cycle_limit": cycle_limit,
                        "all_strategies": all_strategies, "timing": timing},
                outputs=outputs).write(ctx.out)


def _sweep_point(args) -> dict:
    kind, value, config, model_dict, strategy, alpha, timing = args
    model = nnbd.DegradationModel.from_dict(model_dict)
    row = dict(value)
    t0 = time.perf_counter()
    try:
        if kind == "res-penetration":
            config = rescale_penetration(config, value["penetration"])
            cost_params = DegradationCostParams.from_unit_price(400.0, config.bess.e_max)
        elif kind == "size-price":
            config = make_scenario(e_max=value["size_kwh"]) if config is None else config
            cost_params = DegradationCostParams.from_unit_price(value["unit_price"], config.bess.e_max)
        else:
            alpha = value["alpha"]
            cost_params = DegradationCostParams.from_unit_price(400.0, config.bess.e_max)
        res = run(config, model, NnodhConfig(strategy, alpha), cost_params)
        row.update({"status": "ok", "iterations": res.best_index, "trace_length": res.iterations,
                    "total_cost": res.best.total_cost, **res.metrics.to_dict(),
                    "stop_reason": res.stop_reason})
    except BdmdsError as exc:
        row.update({"status": f"failed: {type(exc).__name__}", "iterations": None, "trace_length": None,
                    "total_cost": None, "dcr": None, "tcr": None, "oci": None, "stop_reason": str(exc)})
    if timing:
        row["wall_seconds"] = time.perf_counter() - t0
    return row


@cli.command("sweep")
@click.option("--kind", type=click.Choice(("borf", "res-penetration", "size-price")), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--grid", default=None, help="Comma-separated alphas or penetration levels.")
@click.option("--sizes", default=",".join(f"{v:g}" for v in SIZE_GRID), show_default=True,
              help="Battery sizes for size-price, kWh.")
@click.option("--prices", default=",".join(f"{v:g}" for v in PRICE_GRID), show_default=True,
              help="Unit prices for size-price, $/kWh.")
@click.option("--strategy", type=click.Choice(("BCL", "PBCL", "BRL", "ALL")), default="BCL", show_default=True)
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.03,
              show_default=True)
@click.option("--timing", is_flag=True, help="Add a wall-time column (outputs no longer reproducible).")
@click.pass_obj
def sweep(ctx: Context, kind, model_path, grid, sizes, prices, strategy, alpha, timing):
    """Run the heuristic over a parameter grid; failed points are marked and skipped."""
    model = _load_model(model_path)
    base = ctx.scenario()
    points = []
    if kind == "borf":
        for a in (_floats(grid) if grid else BORF_GRID):
            if not 0 < a < 1:
                raise click.BadParameter(f"alpha {a} outside (0, 1)")
            points.append(({"alpha": a}, base))
    elif kind == "res-penetration":
        points = [({"penetration": p}, base) for p in (_floats(grid) if grid else PEN_GRID)]
    else:
        for size in _floats(sizes):
            for price in _floats(prices):
                cfg = None if ctx.config_path is None else _resize(base, size)
                points.append(({"size_kwh": size, "unit_price": price}, cfg))
    args = [(kind, v, cfg, model.to_dict(), strategy, alpha, timing) for v, cfg in points]
    if ctx.jobs > 1:
        with ProcessPoolExecutor(max_workers=ctx.jobs) as pool:
            rows = list(pool.map(_sweep_point, args))
    else:
        rows = [_sweep_point(a) for a in args]
    name = f"sweep_{kind}.csv"
    _write_csv(pd.DataFrame(rows), ctx.out / name)
    RunManifest("sweep", str(ctx.out), ctx.seed,
                inputs={"config": None if ctx.config_path is None else str(ctx.config_path),
                        "model": str(model_path)},
                params={"kind": kind, "grid": grid, "sizes": sizes, "prices": prices,
                        "strategy": strategy, "alpha": alpha, "timing": timing},
                outputs=[name]).write(ctx.out)
    click.echo(f"{len(rows)} sweep points -> {ctx.out / name}")


def _resize(config: MicrogridConfig, e_max: float) -> MicrogridConfig:
    b = config.bess
    k = e_max / b.e_max
    return replace(config, bess=replace(b, e_max=e_max, e_min=b.e_min * k, p_max=b.p_max * k,
                                        p_min=b.p_min * k, e_initial=b.e_initial * k))


@cli.command("make-scenario")
@click.option("--penetration", type=click.FloatRange(min=0), default=0.8, show_default=True,
              help="Mean renewable output as a fraction of mean load.")
@click.pass_obj
def make_scenario_cmd(ctx: Context, penetration):
    """Write a synthetic 24 h testbed: scenario.json and profiles.csv."""
    config = make_scenario(seed=ctx.seed, penetration=penetration)
    config.save(ctx.out / "scenario.json", ctx.out / "profiles.csv")
    RunManifest("make-scenario", str(ctx.out), ctx.seed, params={"penetration": penetration},
                outputs=["scenario.json", "profiles.csv"]).write(ctx.out)
    click.echo(f"scenario with renewable penetration {renewable_penetration(config.profiles):.3f} "
               f"-> {ctx.out / 'scenario.json'}")


@cli.command("report")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--unit-price", type=float, default=400.0, show_default=True)
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.03,
              show_default=True)
@click.option("--linear-rate", type=float, default=None)
@click.pass_obj
def report(ctx: Context, model_path, unit_price, alpha, linear_rate):
    """Compare traditional, cycle-limit, linear-cost and heuristic schedules."""
    model = _load_model(model_path)
    config = ctx.scenario()
    cost_params = DegradationCostParams.from_unit_price(unit_price, config.bess.e_max)
    table = compare_benchmarks(config, model, cost_params, NnodhConfig("BCL", alpha), linear_rate)
    _write_csv(table, ctx.out / "benchmarks.csv")
    RunManifest("report", str(ctx.out), ctx.seed,
                inputs={"config": None if ctx.config_path is None else str(ctx.config_path),
                        "model": str(model_path)},
                params={"unit_price": unit_price, "alpha": alpha, "linear_rate": linear_rate},
                outputs=["benchmarks.csv"]).write(ctx.out)
    click.echo(table.to_string(index=False))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="bdmds", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except InfeasibleError as exc:
        click.echo(f"infeasible: {exc}", err=True)
        return EXIT_INFEASIBLE
    except (ParameterError, DomainError, OSError, KeyError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_INTERNAL
    return 0

