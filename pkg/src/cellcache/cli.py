"""Experiment runner: plan ingestion, sweeps, and CSV emission.

A plan is a JSON document naming a scenario configuration (or a serialized
scenario file), a sweep axis, the algorithms to compare, and the seeds to
average over.  ``run_plan`` executes every (sweep point x algorithm x seed)
cell, writes one ``results.csv`` row per run plus a ``trace_<run>.csv`` for
every decomposition run, and ``summarize`` aggregates across seeds.

All physical quantities are converted to watts/bits/seconds/Hz at ingestion
(e.g. dBm power fields) so the rest of the package never sees mixed units.
Outputs are deterministic for a fixed plan: rows are emitted in plan order
and wall-clock timings are reported as 0 unless timing is explicitly enabled.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import baselines, gbd_driver
from .exact_model import ObjectiveWeights, model_report
from .master_solver import MasterInfeasible
from .scenario import (GenerationConfig, Scenario, generate_scenario,
                       scenario_from_json, scenario_to_json)

__all__ = [
    "ExperimentPlan",
    "PlanError",
    "load_plan",
    "save_plan",
    "run_plan",
    "summarize",
    "main",
]

RESULTS_SCHEMA_VERSION = 1
RESULTS_HEADER = [
    "schema_version", "axis", "axis_value", "algorithm", "theta", "seed",
    "status", "objective", "total_power_w", "avg_delay_s",
    "power_tx_w", "power_ca_w", "power_bh_w", "power_cc_w",
    "delay_wireless_s", "delay_backhaul_s", "iterations", "wall_ms",
    "trace_file",
]
SUMMARY_HEADER = [
    "algorithm", "axis", "axis_value", "runs",
    "power_mean_w", "power_std_w", "delay_mean_s", "delay_std_s",
    "dominates",
]
SWEEP_AXES = ("theta", "cache", "density", "preference_q", "none")
ALGORITHMS = ("puf", "apuf", "ccp", "df", "oracle")
WORKERS_ENV = "CELLCACHE_WORKERS"


class PlanError(ValueError):
    """Invalid plan document; maps to exit code 1."""


@dataclass(frozen=True)
class ExperimentPlan:
    scenario_config: GenerationConfig | None = None
    scenario_file: str | None = None
    thetas: tuple[float, ...] = (0.5,)
    sweep_axis: str = "none"
    sweep_values: tuple[float, ...] = ()
    algorithms: tuple[str, ...] = ("puf",)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "results"
    epsilon: float = 1e-3
    max_iterations: int = 60
    delta_p: float = 0.002
    delta_d: float = 0.2
    report_timing: bool = False

    def __post_init__(self):
        if not self.algorithms:
            raise PlanError("algorithms: at least one required")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise PlanError(f"algorithms: unknown algorithm {algo!r}")
        if self.sweep_axis not in SWEEP_AXES:
            raise PlanError(f"sweep.axis: unknown axis {self.sweep_axis!r}")
        for th in self.thetas:
            if not 0.0 <= th <= 1.0:
                raise PlanError(f"thetas: {th} outside [0, 1]")
        if any(b <= a for a, b in zip(self.sweep_values, self.sweep_values[1:])):
            raise PlanError("sweep.values: must be strictly increasing")
        if self.sweep_axis not in ("theta", "none") and not self.sweep_values:
            raise PlanError(f"sweep.values: required for axis {self.sweep_axis}")
        if (self.scenario_config is None) == (self.scenario_file is None):
            raise PlanError("exactly one of scenario / scenario_file required")


_DBM_KEYS = {
    # plan key -> (config field, converter)
    "max_tx_power_dbm": "max_tx_power_w",
    "circuit_power_dbm": "circuit_power_w",
}


def _dbm_to_w(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def _parse_scenario_section(section: dict) -> GenerationConfig:
    known = {f.name for f in dataclasses.fields(GenerationConfig)}
    kwargs = {}
    for key, value in section.items():
        if key in _DBM_KEYS:
            kwargs[_DBM_KEYS[key]] = _dbm_to_w(float(value))
        elif key in known:
            if key.endswith("_range") or key == "backhaul_delay_range_s":
                value = tuple(value)
            kwargs[key] = value
        else:
            raise PlanError(f"scenario.{key}: unknown key")
    try:
        return GenerationConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise PlanError(f"scenario: {exc}") from exc


def load_plan(path) -> ExperimentPlan:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise PlanError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}: malformed JSON: {exc}") from exc
    return plan_from_dict(doc)


def plan_from_dict(doc: dict) -> ExperimentPlan:
    if not isinstance(doc, dict):
        raise PlanError("plan: top level must be an object")
    known = {"scenario", "scenario_file", "thetas", "sweep", "algorithms",
             "seeds", "output_dir", "epsilon", "max_iterations",
             "delta_p", "delta_d", "report_timing"}
    for key in doc:
        if key not in known:
            raise PlanError(f"plan.{key}: unknown key")
    sweep = doc.get("sweep", {"axis": "none", "values": []})
    if not isinstance(sweep, dict) or set(sweep) - {"axis", "values"}:
        raise PlanError("plan.sweep: expected {axis, values}")
    scenario_cfg = None
    if "scenario" in doc:
        scenario_cfg = _parse_scenario_section(doc["scenario"])
    return ExperimentPlan(
        scenario_config=scenario_cfg,
        scenario_file=doc.get("scenario_file"),
        thetas=tuple(float(t) for t in doc.get("thetas", [0.5])),
        sweep_axis=sweep.get("axis", "none"),
        sweep_values=tuple(float(v) for v in sweep.get("values", [])),
        algorithms=tuple(doc.get("algorithms", ["puf"])),
        seeds=tuple(int(s) for s in doc.get("seeds", [0])),
        output_dir=str(doc.get("output_dir", "results")),
        epsilon=float(doc.get("epsilon", 1e-3)),
        max_iterations=int(doc.get("max_iterations", 60)),
        delta_p=float(doc.get("delta_p", 0.002)),
        delta_d=float(doc.get("delta_d", 0.2)),
        report_timing=bool(doc.get("report_timing", False)),
    )


def plan_to_dict(plan: ExperimentPlan) -> dict:
    doc: dict = {
        "thetas": list(plan.thetas),
        "sweep": {"axis": plan.sweep_axis, "values": list(plan.sweep_values)},
        "algorithms": list(plan.algorithms),
        "seeds": list(plan.seeds),
        "output_dir": plan.output_dir,
        "epsilon": plan.epsilon,
        "max_iterations": plan.max_iterations,
        "delta_p": plan.delta_p,
        "delta_d": plan.delta_d,
        "report_timing": plan.report_timing,
    }
    if plan.scenario_file is not None:
        doc["scenario_file"] = plan.scenario_file
    else:
        doc["scenario"] = dataclasses.asdict(plan.scenario_config)
        doc["scenario"]["backhaul_delay_range_s"] = list(
            plan.scenario_config.backhaul_delay_range_s)
        for key in ("file_size_bits_range", "rate_requirement_bps_range"):
            doc["scenario"][key] = list(doc["scenario"][key])
    return doc


def save_plan(plan: ExperimentPlan, path) -> None:
    with open(path, "w") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scenario_for(plan: ExperimentPlan, axis_value: float,
                  seed: int) -> Scenario:
    if plan.scenario_file is not None:
        with open(plan.scenario_file) as fh:
            return scenario_from_json(fh.read())
    cfg = plan.scenario_config
    overrides: dict = {"seed": seed}
    if plan.sweep_axis == "cache":
        overrides["cache_capacity_bits"] = axis_value
    elif plan.sweep_axis == "density":
        overrides["num_sbs"] = int(axis_value)
    elif plan.sweep_axis == "preference_q":
        overrides["preference_global_weight"] = axis_value
    return generate_scenario(dataclasses.replace(cfg, **overrides))


@dataclass
class _RunTask:
    index: int
    axis_value: float
    theta: float
    algorithm: str
    seed: int


def _execute(task: _RunTask, plan: ExperimentPlan,
             out_dir: Path) -> dict[str, object]:
    row: dict[str, object] = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "axis": plan.sweep_axis,
        "axis_value": f"{task.axis_value:.10g}",
        "algorithm": task.algorithm,
        "theta": f"{task.theta:.10g}",
        "seed": task.seed,
        "status": "ok", "objective": "", "total_power_w": "",
        "avg_delay_s": "", "power_tx_w": "", "power_ca_w": "",
        "power_bh_w": "", "power_cc_w": "", "delay_wireless_s": "",
        "delay_backhaul_s": "", "iterations": "", "wall_ms": 0,
        "trace_file": "",
    }
    weights = ObjectiveWeights(theta=task.theta, delta_p=plan.delta_p,
                               delta_d=plan.delta_d)
    start = time.perf_counter()
    try:
        scenario = _scenario_for(plan, task.axis_value, task.seed)
        assignment = None
        if task.algorithm in ("puf", "apuf"):
            config = gbd_driver.GbdConfig(
                epsilon=plan.epsilon, max_iterations=plan.max_iterations,
                master_mode="sdr" if task.algorithm == "apuf" else "exact",
                seed=task.seed)
            result = gbd_driver.run_gbd(scenario, weights, config)
            row["iterations"] = result.iterations
            trace_name = (f"trace_{task.index:04d}_{task.algorithm}"
                          f"_s{task.seed}.csv")
            gbd_driver.trace_to_csv(result, out_dir / trace_name)
            row["trace_file"] = trace_name
            if result.assignment is None:
                row["status"] = "infeasible"
                return row
            assignment = result.assignment
        elif task.algorithm == "oracle":
            oracle = baselines.exhaustive_oracle(scenario, weights)
            assignment = oracle.assignment
        elif task.algorithm == "ccp":
            assignment = baselines.ccp_policy(scenario, weights).assignment
        elif task.algorithm == "df":
            assignment = baselines.df_policy(scenario, weights).assignment
        report = model_report(scenario, assignment, weights)
        power = report.per_sbs_power_w
        delay = report.per_user_delay_s
        row.update({
            "objective": f"{report.objective_value:.10g}",
            "total_power_w": f"{power['total'].sum():.10g}",
            "avg_delay_s": f"{delay['total'].mean():.10g}",
            "power_tx_w": f"{power['transmit'].sum():.10g}",
            "power_ca_w": f"{power['caching'].sum():.10g}",
            "power_bh_w": f"{power['backhaul'].sum():.10g}",
            "power_cc_w": f"{power['circuit'].sum():.10g}",
            "delay_wireless_s": f"{delay['wireless'].sum():.10g}",
            "delay_backhaul_s": f"{delay['backhaul'].sum():.10g}",
        })
    except MasterInfeasible:
        row["status"] = "infeasible"
    except Exception as exc:  # recorded per-row, the plan keeps going
        row["status"] = "error"
        row["trace_file"] = type(exc).__name__
    if plan.report_timing:
        row["wall_ms"] = f"{(time.perf_counter() - start) * 1e3:.3f}"
    return row


def _tasks_for(plan: ExperimentPlan) -> list[_RunTask]:
    if plan.sweep_axis == "theta":
        points = [(th, th) for th in plan.thetas]
    elif plan.sweep_axis == "none":
        points = [(0.0, th) for th in plan.thetas]
    else:
        points = [(v, th) for v in plan.sweep_values for th in plan.thetas]
    tasks = []
    for axis_value, theta in points:
        for algorithm in plan.algorithms:
            for seed in plan.seeds:
                tasks.append(_RunTask(index=len(tasks), axis_value=axis_value,
                                      theta=theta, algorithm=algorithm,
                                      seed=seed))
    return tasks


def run_plan(plan: ExperimentPlan) -> int:
    """Execute a plan; returns 0 when every run succeeded, 2 otherwise."""
    out_dir = Path(plan.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = _tasks_for(plan)
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1:
        from multiprocessing import Pool

        with Pool(workers) as pool:
            rows = pool.starmap(_execute,
                                [(t, plan, out_dir) for t in tasks])
    else:
        rows = [_execute(task, plan, out_dir) for task in tasks]
    with open(out_dir / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULTS_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return 0 if all(r["status"] == "ok" for r in rows) else 2


def summarize(results_csv, out_path=None) -> list[dict[str, object]]:
    """Aggregate results per (algorithm, axis value): mean/std of power and
    delay across seeds plus pairwise dominance flags (A dominates B when it
    is no worse on both metrics and better on one)."""
    with open(results_csv, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["status"] == "ok"]
    if not rows:
        raise PlanError(f"{results_csv}: no successful runs to summarize")
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["algorithm"], row["axis_value"]), []).append(row)

    def stats(vals):
        return (statistics.fmean(vals),
                statistics.pstdev(vals) if len(vals) > 1 else 0.0)

    summary = []
    for (algo, axis_value), members in sorted(groups.items()):
        p_mean, p_std = stats([float(r["total_power_w"]) for r in members])
        d_mean, d_std = stats([float(r["avg_delay_s"]) for r in members])
        summary.append({
            "algorithm": algo, "axis": members[0]["axis"],
            "axis_value": axis_value, "runs": len(members),
            "power_mean_w": p_mean, "power_std_w": p_std,
            "delay_mean_s": d_mean, "delay_std_s": d_std,
        })
    for entry in summary:
        dominated = []
        for other in summary:
            if other["axis_value"] != entry["axis_value"] or other is entry:
                continue
            no_worse = (entry["power_mean_w"] <= other["power_mean_w"] + 1e-12
                        and entry["delay_mean_s"] <= other["delay_mean_s"] + 1e-12)
            better = (entry["power_mean_w"] < other["power_mean_w"] - 1e-12
                      or entry["delay_mean_s"] < other["delay_mean_s"] - 1e-12)
            if no_worse and better:
                dominated.append(other["algorithm"])
        entry["dominates"] = ";".join(sorted(dominated))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
            writer.writeheader()
            for entry in summary:
                out = dict(entry)
                for key in ("power_mean_w", "power_std_w",
                            "delay_mean_s", "delay_std_s"):
                    out[key] = f"{entry[key]:.10g}"
                writer.writerow(out)
    return summary


def _cmd_generate(args) -> int:
    overrides = {"seed": args.seed}
    if args.num_sbs:
        overrides["num_sbs"] = args.num_sbs
    if args.num_users:
        overrides["num_users"] = args.num_users
    if args.num_files:
        overrides["num_files"] = args.num_files
    scenario = generate_scenario(GenerationConfig(**overrides))
    text = scenario_to_json(scenario)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_run(args) -> int:
    plan = load_plan(args.plan)
    if args.out:
        plan = dataclasses.replace(plan, output_dir=args.out)
    return run_plan(plan)


def _cmd_sweep(args) -> int:
    thetas = tuple(args.theta) if args.theta else (0.5,)
    if args.axis == "theta" and args.values:
        thetas = tuple(args.values)
    plan = ExperimentPlan(
        scenario_config=GenerationConfig(),
        thetas=thetas,
        sweep_axis=args.axis,
        sweep_values=tuple(args.values) if args.axis != "theta" else (),
        algorithms=tuple(args.algorithms),
        seeds=tuple(args.seed_list) if args.seed_list else (args.seed,),
        output_dir=args.out,
        epsilon=args.epsilon,
    )
    return run_plan(plan)


def _cmd_summarize(args) -> int:
    out = args.out or str(Path(args.results).with_name("summary.csv"))
    summarize(args.results, out)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cellcache",
        description="Joint delay/power optimization experiments for "
                    "cache-enabled small-cell networks")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit a random scenario as JSON")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--num-sbs", type=int, default=0)
    gen.add_argument("--num-users", type=int, default=0)
    gen.add_argument("--num-files", type=int, default=0)
    gen.add_argument("--out", default="")
    gen.set_defaults(func=_cmd_generate)

    run = sub.add_parser("run", help="execute a plan file")
    run.add_argument("plan")
    run.add_argument("--out", default="")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="one-axis sweep without a plan file")
    sweep.add_argument("--axis", choices=SWEEP_AXES, default="theta")
    sweep.add_argument("--values", type=float, nargs="*", default=[])
    sweep.add_argument("--theta", type=float, nargs="*", default=[])
    sweep.add_argument("--algorithms", nargs="+", default=["puf", "ccp", "df"])
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--seed-list", type=int, nargs="*", default=[])
    sweep.add_argument("--epsilon", type=float, default=1e-3)
    sweep.add_argument("--out", default="results")
    sweep.set_defaults(func=_cmd_sweep)

    summ = sub.add_parser("summarize", help="aggregate a results.csv")
    summ.add_argument("results")
    summ.add_argument("--out", default="")
    summ.set_defaults(func=_cmd_summarize)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure outside per-row handling
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
