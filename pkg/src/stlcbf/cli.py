"""Command-line front end.

Subcommands mirror the pipeline stages: ``parse``, ``transform``, ``tree``,
``synth`` print stage artifacts; ``simulate`` runs the closed loop, writes
the CSV log (plus figures), and monitors the produced trajectory against
the ORIGINAL formula; ``monitor`` checks an existing CSV; ``plot`` renders
figures from an existing log.

Exit codes: 0 success / specification satisfied, 2 configuration or input
error, 3 specification violated, 4 integration fault.  Machine-readable
result lines are prefixed ``REPORT:``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .barrier import synthesize
from .formulas import (
    FormulaError,
    format_formula,
    parse_formula,
    predicate_dim,
)
from .monitor import SampledSignal, SignalDomainError, monitor_verdict
from .scenario import ScenarioError, load_scenario
from .simulate import IntegrationFault, resolve_node_keys, run_scenario
from .transform import to_desired_form
from .tree import assign_times, build_tree

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATED = 3
EXIT_FAULT = 4


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_CONFIG


def _stage_inputs(args):
    cfg = load_scenario(args.config)
    if args.dt is not None:
        cfg.raw.setdefault("sim", {})["dt"] = args.dt
    table = cfg.build_table()
    original = parse_formula(cfg.formula_text, table)
    return cfg, table, original


def cmd_parse(args) -> int:
    cfg, table, original = _stage_inputs(args)
    print(f"formula: {format_formula(original)}")
    print(f"predicates: {', '.join(sorted(table))}")
    if args.json:
        print(json.dumps({"formula": format_formula(original)}))
    return EXIT_OK


def cmd_transform(args) -> int:
    cfg, table, original = _stage_inputs(args)
    desired, trace = to_desired_form(original, table, cfg.build_transform_config())
    print(f"desired form: {format_formula(desired)}")
    print(f"trace ({len(trace)} steps):")
    for step in trace:
        print(
            f"  {step.rule}: {format_formula(step.source)}"
            f"  ->  {format_formula(step.result)}"
        )
    if args.json:
        print(
            json.dumps(
                {
                    "desired": format_formula(desired),
                    "trace": [
                        {
                            "rule": s.rule,
                            "source": format_formula(s.source),
                            "result": format_formula(s.result),
                        }
                        for s in trace
                    ],
                }
            )
        )
    return EXIT_OK


def _timed_tree(cfg, table, original):
    desired, _ = to_desired_form(original, table, cfg.build_transform_config())
    nodes = build_tree(desired)
    tree = assign_times(nodes)
    overrides = resolve_node_keys(tree, cfg.t_star_overrides, "t_star")
    if overrides:
        tree = assign_times(nodes, overrides)
    return desired, tree


def cmd_tree(args) -> int:
    cfg, table, original = _stage_inputs(args)
    desired, tree = _timed_tree(cfg, table, original)

    def show(idx: int, depth: int):
        node = tree.node(idx)
        timing = tree.timing(idx)
        win = f"[{timing.active:g},{timing.terminal:g}]"
        rel = f" release={timing.release:g}" if timing.release is not None else ""
        print(
            f"  {'  ' * depth}#{idx} {node.kind:<11} {win:<12}{rel} "
            f"{format_formula(node.formula)}"
        )
        for c in node.children:
            show(c, depth + 1)

    print(f"desired form: {format_formula(desired)}")
    show(0, 0)
    print(f"horizon: {tree.horizon:g}")
    seq = ", ".join(
        f"{s.time:g}{'*' if s.is_release else ''}" for s in tree.switching
    )
    print(f"switching sequence (release times starred): {seq}")
    if args.json:
        print(json.dumps(tree.to_json_dict()))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg, table, original = _stage_inputs(args)
    desired, tree = _timed_tree(cfg, table, original)
    margins = resolve_node_keys(tree, cfg.margins, "margin")
    spec = synthesize(tree, table, margins, cfg.build_transform_config().kappa)
    print(f"{'node':>4}  {'a':>8}  {'b':>8}  {'active':>8}  {'terminal':>8}  formula")
    rows = []
    for idx in sorted(spec.decay):
        d = spec.decay[idx]
        timing = tree.timing(idx)
        rows.append(
            {
                "node": idx,
                "a": d.a,
                "b": d.b,
                "active": timing.active,
                "terminal": timing.terminal,
                "formula": format_formula(tree.node(idx).formula),
            }
        )
        print(
            f"{idx:>4}  {d.a:>8.4g}  {d.b:>8.4g}  {timing.active:>8g}  "
            f"{timing.terminal:>8g}  {format_formula(tree.node(idx).formula)}"
        )
    for idx in tree.indices_of_kind("leaf"):
        print(
            f"{idx:>4}  {'-':>8}  {'-':>8}  {tree.timing(idx).active:>8g}  "
            f"{tree.timing(idx).terminal:>8g}  {tree.node(idx).pred_name}"
            f" (release {tree.releases[idx]:g})"
        )
    if args.json:
        print(json.dumps({"kappa": spec.kappa, "nodes": rows}))
    return EXIT_OK


def _monitor_log_signal(run):
    plant = run.config.build_plant()
    sig = run.log.signal(plant.cbf_state)
    return monitor_verdict(run.original_formula, sig, run.table)


def _simulate_one(config_path: str, out_dir: str, dt, make_plots: bool) -> int:
    cfg = load_scenario(config_path)
    if dt is not None:
        cfg.raw.setdefault("sim", {})["dt"] = dt
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    run = run_scenario(cfg)
    csv_path = out / cfg.csv_name
    run.log.write_csv(csv_path)
    (out / (csv_path.stem + "_config.json")).write_text(
        json.dumps(cfg.effective_dict(), indent=2) + "\n"
    )
    verdict = _monitor_log_signal(run)
    counts = run.log.flag_counts()
    finite = np.isfinite(run.log.hhat)
    min_hhat = float(run.log.hhat[finite].min()) if finite.any() else float("inf")
    with np.errstate(invalid="ignore"):
        ratio = run.log.e[finite] / run.log.rho[finite]
    max_ratio = float(ratio.max()) if finite.any() else float("nan")
    wall = time.perf_counter() - started
    print(f"REPORT: config={config_path}")
    print(f"REPORT: verdict={'satisfied' if verdict.satisfied else 'violated'}")
    print(f"REPORT: robustness={verdict.robustness:.6g}")
    print(f"REPORT: min_hhat={min_hhat:.6g}")
    print(f"REPORT: max_e_over_rho={max_ratio:.6g}")
    for key in ("guard_clamp", "clamp_u", "qp_infeasible", "reset_fault", "expired"):
        print(f"REPORT: flags.{key}={counts.get(key, 0)}")
    print(f"REPORT: csv={csv_path}")
    print(f"REPORT: wall_time_s={wall:.3f}")
    if make_plots or cfg.svg_name:
        from .plots import render_run

        svg_path = out / (cfg.svg_name or (csv_path.stem + ".svg"))
        render_run(run, svg_path)
        print(f"REPORT: svg={svg_path}")
    return EXIT_OK if verdict.satisfied else EXIT_VIOLATED


def cmd_simulate(args) -> int:
    configs = [args.config] + (args.batch or [])
    if len(configs) == 1:
        return _simulate_one(configs[0], args.out, args.dt, args.plots)
    with ProcessPoolExecutor(max_workers=min(len(configs), 4)) as pool:
        codes = list(
            pool.map(
                _simulate_one,
                configs,
                [args.out] * len(configs),
                [args.dt] * len(configs),
                [args.plots] * len(configs),
            )
        )
    return max(codes)


def _read_csv_signal(path: Path, dims: int | None):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if not header or not rows:
        raise ScenarioError(f"empty trajectory CSV: {path}")
    if "t" not in header:
        raise ScenarioError(f"CSV {path} lacks a 't' column")
    state_cols = [i for i, name in enumerate(header) if name.startswith("x") and name[1:].isdigit()]
    if not state_cols:
        raise ScenarioError(f"CSV {path} lacks state columns x0..xn")
    if dims is not None:
        state_cols = state_cols[:dims]
    t_col = header.index("t")
    times = np.array([float(r[t_col]) for r in rows])
    states = np.array([[float(r[i]) for i in state_cols] for r in rows])
    return SampledSignal(times, states)


def cmd_monitor(args) -> int:
    cfg = load_scenario(args.config)
    table = cfg.build_table()
    formula_text = args.formula or cfg.formula_text
    formula = parse_formula(formula_text, table)
    dims = args.dims or predicate_dim(next(iter(table.values())))
    signal = _read_csv_signal(Path(args.csv), dims)
    verdict = monitor_verdict(formula, signal, table, t=args.at)
    print(f"REPORT: verdict={'satisfied' if verdict.satisfied else 'violated'}")
    print(f"REPORT: robustness={verdict.robustness:.6g}")
    return EXIT_OK if verdict.satisfied else EXIT_VIOLATED


def cmd_plot(args) -> int:
    cfg = load_scenario(args.config)
    run = run_scenario(cfg)  # regenerate run context for regions/params
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .plots import render_run

    svg_path = out / (cfg.svg_name or "run.svg")
    render_run(run, svg_path)
    print(f"REPORT: svg={svg_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stlcbf",
        description="compile temporal-logic tasks to barrier functions and "
        "run the disturbance-rejection closed loop",
    )
    ap.add_argument("--seed", type=int, default=None,
                    help="seed for randomized corpora (reserved)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, with_json=True):
        p.add_argument("--config", required=True, help="scenario JSON path")
        p.add_argument("--dt", type=float, default=None, help="override sim.dt")
        if with_json:
            p.add_argument("--json", action="store_true", help="emit a JSON block too")

    p = sub.add_parser("parse", help="parse the formula and echo it")
    common(p)
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("transform", help="rewrite to the tree-compatible form")
    common(p)
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("tree", help="print the timed specification tree")
    common(p)
    p.set_defaults(fn=cmd_tree)

    p = sub.add_parser("synth", help="print the synthesized decay table")
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("simulate", help="run the closed loop and monitor it")
    common(p, with_json=False)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--plots", action="store_true", help="render figures")
    p.add_argument("--batch", nargs="+", default=None,
                   help="additional scenario files to run in parallel")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("monitor", help="check a trajectory CSV against a formula")
    p.add_argument("--config", required=True, help="scenario JSON (predicate table)")
    p.add_argument("--csv", required=True, help="trajectory CSV")
    p.add_argument("--formula", default=None, help="formula text (default: scenario formula)")
    p.add_argument("--at", type=float, default=0.0, help="evaluation instant")
    p.add_argument("--dims", type=int, default=None,
                   help="number of leading state columns the predicates see")
    p.set_defaults(fn=cmd_monitor)

    p = sub.add_parser("plot", help="render figures for a scenario run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, FormulaError, SignalDomainError, FileNotFoundError) as exc:
        return _fail(str(exc))
    except IntegrationFault as exc:
        print(f"integration fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
