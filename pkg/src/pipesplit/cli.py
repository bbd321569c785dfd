"""Command-line front door: scenario generation, optimization, simulation,
parameter sweeps, and oracle comparisons.

Exit codes: 0 success, 1 usage, 2 validation, 3 infeasible, 4 internal error.
All randomness comes from explicit seed flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import __version__
from .bcd import solve_baseline, solve_joint
from .costmodel import InfeasiblePlanError, PlanEvaluator, ScenarioCosts
from .microbatch import MicrobatchInfeasibleError
from .mspgraph import InfeasibleScenarioError
from .oracle import EnumerationLimitError, enumerate_joint
from .pipesim import export_event_log, simulate
from .relaxation import bound_provider
from .scenario import (
    GeneratorKnobs,
    PlanError,
    ScenarioError,
    generate_scenario,
    load_plan,
    load_scenario,
    save_plan,
    save_scenario,
    validate_scenario,
)

SWEEP_COLUMNS = ["param_value", "trial", "scheme", "L_t", "T_f", "T_i", "b",
                 "runtime_ms"]
SWEEP_PARAMS = ("servers", "bandwidth", "compute", "memory", "topology")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage problems, not argparse's 2
        raise UsageError(message)


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _parse_values(raw: str) -> list[str]:
    """Comma list with integer range support: '2..10' or '2..10..2'."""
    out: list[str] = []
    for part in raw.split(","):
        part = part.strip()
        if ".." in part:
            pieces = part.split("..")
            if len(pieces) not in (2, 3):
                raise UsageError(f"bad range {part!r}")
            lo, hi = int(pieces[0]), int(pieces[1])
            step = int(pieces[2]) if len(pieces) == 3 else 1
            out.extend(str(v) for v in range(lo, hi + 1, step))
        elif part:
            out.append(part)
    if not out:
        raise UsageError("empty --values")
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="pipesplit", description=__doc__)
    parser.add_argument(
        "--version", action="store_true", help="print version and git hash")
    sub = parser.add_subparsers(dest="command")

    g = sub.add_parser("generate", help="write a randomized scenario file")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--servers", type=int, default=6)
    g.add_argument("--clients", type=int, default=1)
    g.add_argument("--topology", default="mesh",
                   choices=("mesh", "line", "star", "tree"))
    g.add_argument("--bandwidth", default="sub6", choices=("sub6", "mmwave"))
    g.add_argument("--layers", type=int, default=16)
    g.add_argument("--minibatch", type=int, default=512)
    g.add_argument("--max-submodels", type=int, default=3)
    g.add_argument("--model-scale", type=float, default=1.0)
    g.add_argument("-o", "--output", required=True)

    o = sub.add_parser("optimize", help="plan splitting/placement/micro-batch")
    o.add_argument("scenario")
    o.add_argument("-o", "--output", help="plan file to write")
    o.add_argument("--scheme", default="bcd",
                   choices=("bcd", "rc_op", "rp_oc", "no_pipeline"))
    o.add_argument("--K", type=int, help="override the submodel cap")
    o.add_argument("--b0", type=int, default=20)
    o.add_argument("--tol", type=float, default=0.01)
    o.add_argument("--max-iters", type=int, default=50)
    o.add_argument("--seed", type=int, default=0, help="for the random schemes")
    o.add_argument("--bound", default="fast", choices=("fast", "rlt"))
    o.add_argument("--no-prune", action="store_true")
    o.add_argument("--strict-paper-ti", action="store_true",
                   help="literal steady-interval reading that excludes the "
                        "final submodel's compute")
    o.add_argument("--allow-node-reuse", action="store_true",
                   help="let one server host several non-adjacent submodels")

    s = sub.add_parser("simulate", help="discrete-event run of a plan file")
    s.add_argument("scenario")
    s.add_argument("plan")
    s.add_argument("--cv", type=float, default=0.0,
                   help="coefficient of variation for compute and rates")
    s.add_argument("--seeds", type=int, default=1, help="number of runs")
    s.add_argument("--seed", type=int, default=0, help="base seed")
    s.add_argument("--ragged-last", action="store_true")
    s.add_argument("--events", help="CSV event log (single nominal run)")
    s.add_argument("-o", "--output", help="CSV output (default stdout)")
    s.add_argument("--plot", help="render a makespan figure to this file")

    w = sub.add_parser("sweep", help="latency trends over a parameter range")
    w.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    w.add_argument("--values", required=True,
                   help="comma list; integer ranges as lo..hi[..step]")
    w.add_argument("--trials", type=int, default=3)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--schemes", default="bcd,rc_op,rp_oc,no_pipeline")
    w.add_argument("--servers", type=int, default=6)
    w.add_argument("--clients", type=int, default=1)
    w.add_argument("--topology", default="mesh")
    w.add_argument("--bandwidth", default="sub6")
    w.add_argument("--layers", type=int, default=16)
    w.add_argument("--minibatch", type=int, default=512)
    w.add_argument("--max-submodels", type=int, default=3)
    w.add_argument("--model-scale", type=float, default=1.0)
    w.add_argument("--b0", type=int, default=20)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("-o", "--output", help="CSV output (default stdout)")
    w.add_argument("--plot", help="render the trend figure to this file")

    r = sub.add_parser("oracle", help="exhaustive joint optimum vs the solver")
    r.add_argument("scenario")
    r.add_argument("--limit", type=float, default=1e7)
    r.add_argument("--b0", type=int, default=20)
    r.add_argument("--allow-node-reuse", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# subcommands


def _cmd_generate(args) -> int:
    knobs = GeneratorKnobs(
        servers=args.servers,
        clients=args.clients,
        topology=args.topology,
        bandwidth=args.bandwidth,
        layer_count=args.layers,
        minibatch=args.minibatch,
        max_submodels=args.max_submodels,
        model_scale=args.model_scale,
    )
    scenario = generate_scenario(args.seed, knobs)
    save_scenario(scenario, args.output)
    print(f"wrote {args.output}: {len(scenario.servers())} servers, "
          f"{scenario.layer_count} layers, topology {scenario.topology}")
    return 0


def _report_dict(sol, runtime_ms: float) -> dict:
    return {
        "L_t": sol.report.total_s,
        "T_f": sol.report.first_batch_s,
        "T_i": sol.report.interval_s,
        "b": sol.b,
        "num_micro_batches": sol.report.num_micro_batches,
        "cuts": list(sol.plan.cuts),
        "placement": list(sol.plan.placement),
        "subgraphs_searched": sol.subgraphs_searched,
        "subgraphs_pruned": sol.subgraphs_pruned,
        "runtime_ms": runtime_ms,
    }


def _run_scheme(scenario, scheme, seed, b0, *, bound="fast", prune=True,
                strict=False, reuse=False, tol=0.01, max_iters=50):
    provider = bound_provider(bound)
    if scheme == "bcd":
        trace = solve_joint(
            scenario, tol=tol, b0=b0, max_iters=max_iters,
            lower_bound_provider=provider, prune=prune,
            allow_node_reuse=reuse, strict_interval=strict,
        )
        return trace.final
    return solve_baseline(
        scenario, scheme, seed=seed, b0=b0, tol=tol, max_iters=max_iters,
        allow_node_reuse=reuse, strict_interval=strict,
    )


def _cmd_optimize(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.K is not None:
        scenario = replace(scenario, max_submodels=args.K)
        validate_scenario(scenario)
    t0 = time.perf_counter()
    sol = _run_scheme(
        scenario, args.scheme, args.seed, args.b0,
        bound=args.bound, prune=not args.no_prune,
        strict=args.strict_paper_ti, reuse=args.allow_node_reuse,
        tol=args.tol, max_iters=args.max_iters,
    )
    runtime_ms = (time.perf_counter() - t0) * 1e3
    if args.output:
        save_plan(sol.plan, sol.b, args.output)
    print(json.dumps(_report_dict(sol, runtime_ms), indent=1))
    return 0


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    plan, b = load_plan(args.plan, scenario)
    costs = ScenarioCosts(scenario)
    analytic = PlanEvaluator(costs, plan).report(b)
    rows = []
    for i in range(args.seeds):
        mode = "perturbed" if args.cv > 0 else "nominal"
        res = simulate(
            scenario, plan, b, mode=mode, cv_compute=args.cv, cv_rate=args.cv,
            seed=args.seed + i, ragged_last=args.ragged_last, costs=costs,
            collect_events=bool(args.events) and args.seeds == 1,
        )
        rows.append({
            "seed": args.seed + i,
            "cv": args.cv,
            "makespan_s": repr(res.makespan),
            "analytic_L_t": repr(analytic.total_s),
            "num_micro_batches": res.num_micro_batches,
        })
        if args.events and res.events is not None:
            export_event_log(res, args.events)
    _write_csv(rows, ["seed", "cv", "makespan_s", "analytic_L_t",
                      "num_micro_batches"], args.output)
    if args.plot:
        from .plotting import render_simulate_figure
        render_simulate_figure(rows, args.plot)
    return 0


def _sweep_knobs(args, param: str, value: str) -> GeneratorKnobs:
    knobs = GeneratorKnobs(
        servers=args.servers,
        clients=args.clients,
        topology=args.topology,
        bandwidth=args.bandwidth,
        layer_count=args.layers,
        minibatch=args.minibatch,
        max_submodels=args.max_submodels,
        model_scale=args.model_scale,
    )
    if param == "servers":
        return replace(knobs, servers=int(value))
    if param == "bandwidth":
        mhz = float(value)
        return replace(knobs, bandwidth=(mhz, mhz))
    if param == "compute":
        tflops = float(value) * 1e10 / 1e12
        return replace(knobs, compute_tflops=(tflops, tflops))
    if param == "memory":
        gb = float(value)
        return replace(knobs, memory_gb=(gb, gb))
    if param == "topology":
        return replace(knobs, topology=value)
    raise UsageError(f"unknown sweep parameter {param!r}")


def _sweep_cell(task) -> list[dict]:
    args, param, vindex, value, trial, schemes = task
    knobs = _sweep_knobs(args, param, value)
    scenario = generate_scenario(args.seed + trial, knobs)
    rows = []
    for scheme in schemes:
        t0 = time.perf_counter()
        try:
            sol = _run_scheme(scenario, scheme, args.seed + trial, args.b0)
            row = {
                "param_value": value,
                "trial": trial,
                "scheme": scheme,
                "L_t": repr(sol.report.total_s),
                "T_f": repr(sol.report.first_batch_s),
                "T_i": repr(sol.report.interval_s),
                "b": sol.b,
                "runtime_ms": round((time.perf_counter() - t0) * 1e3, 3),
            }
        except (InfeasibleScenarioError, MicrobatchInfeasibleError,
                InfeasiblePlanError):
            row = {
                "param_value": value, "trial": trial, "scheme": scheme,
                "L_t": "inf", "T_f": "inf", "T_i": "inf", "b": 0,
                "runtime_ms": round((time.perf_counter() - t0) * 1e3, 3),
            }
        row["_vindex"] = vindex
        rows.append(row)
    return rows


def _cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    if args.param == "topology":
        for v in values:
            if v not in ("mesh", "line", "star", "tree"):
                raise UsageError(f"bad topology value {v!r}")
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    for s in schemes:
        if s not in ("bcd", "rc_op", "rp_oc", "no_pipeline"):
            raise UsageError(f"unknown scheme {s!r}")
    tasks = [
        (args, args.param, vi, value, trial, schemes)
        for vi, value in enumerate(values)
        for trial in range(args.trials)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            chunks = list(pool.map(_sweep_cell, tasks))
    else:
        chunks = [_sweep_cell(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["_vindex"], r["trial"], r["scheme"]))
    for row in rows:
        row.pop("_vindex")
    _write_csv(rows, SWEEP_COLUMNS, args.output)
    if args.plot:
        from .plotting import render_sweep_figure
        render_sweep_figure(rows, args.plot)
    return 0


def _cmd_oracle(args) -> int:
    scenario = load_scenario(args.scenario)
    t0 = time.perf_counter()
    joint = enumerate_joint(
        scenario, limit=int(args.limit), allow_node_reuse=args.allow_node_reuse)
    t_joint = time.perf_counter() - t0
    t0 = time.perf_counter()
    trace = solve_joint(scenario, b0=args.b0,
                        allow_node_reuse=args.allow_node_reuse)
    t_bcd = time.perf_counter() - t0
    gap = (trace.final.report.total_s - joint.report.total_s) / joint.report.total_s
    print(f"joint_optimum_L_t {joint.report.total_s!r}")
    print(f"joint_optimum_b {joint.b}")
    print(f"bcd_L_t {trace.final.report.total_s!r}")
    print(f"bcd_b {trace.final.b}")
    print(f"gap_pct {100.0 * gap:.4f}")
    print(f"oracle_runtime_s {t_joint:.3f}")
    print(f"bcd_runtime_s {t_bcd:.3f}")
    return 0


def _write_csv(rows: list[dict], columns: list[str], path: str | None) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if path:
            fh.close()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            print(f"pipesplit {__version__} ({_git_hash()})")
            return 0
        if args.command is None:
            parser.print_usage()
            return 1
        handler = {
            "generate": _cmd_generate,
            "optimize": _cmd_optimize,
            "simulate": _cmd_simulate,
            "sweep": _cmd_sweep,
            "oracle": _cmd_oracle,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (InfeasibleScenarioError, InfeasiblePlanError,
            MicrobatchInfeasibleError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except (ScenarioError, PlanError, EnumerationLimitError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
