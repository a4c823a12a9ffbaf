"""Command-line experiment runner: ``generate``, ``run``, ``report``, ``validate``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, ExperimentConfig
from .engine import Simulation
from .metrics import (MetricsReport, build_report, compare_runs, footprint_table, rows_to_csv,
                      summary_rows)
from .traffic import read_trace, validate_trace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _common_flags(sub=False):
    """Global flags, accepted before or after the subcommand.

    The subcommand copy uses suppressed defaults so it cannot clobber values
    given before the subcommand name.
    """
    def dflt(v):
        return argparse.SUPPRESS if sub else v
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=dflt(None), help="experiment config file (INI)")
    g.add_argument("--preset", default=dflt(None), help=f"named preset: {', '.join(sorted(PRESETS))}")
    g.add_argument("--set", action="append", default=dflt([]), metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    g.add_argument("--seed", type=int, default=dflt(None), help="single seed (overrides run.seeds)")
    g.add_argument("--seeds", default=dflt(None), help="seed list, e.g. 1,2,5 or 1-30")
    g.add_argument("--out", default=dflt(None), help="output directory (overrides run.out)")
    g.add_argument("--jobs", type=int, default=dflt(1), help="parallel simulation cells")
    g.add_argument("--debug-logs", action="store_true", default=dflt(False),
                   help="also write event log, rule log and demand CSVs per cell")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags(sub=True)
    ap = argparse.ArgumentParser(prog="ocsim", parents=[_common_flags()],
                                 description="Hybrid packet/circuit data center network simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write trace CSV(s) with metadata sidecars")
    g.add_argument("--topology-csv", action="store_true", help="also dump the switch adjacency list")

    r = sub.add_parser("run", parents=[common], help="simulate every (seed x mode) cell")
    r.add_argument("--modes", help="circuit modes, e.g. private,shared")
    r.add_argument("--rules", help="rule modes, e.g. cshare,per_flow")

    rep = sub.add_parser("report", parents=[common], help="compare report files")
    rep.add_argument("reports", nargs="+", help="report JSON files or directories")

    v = sub.add_parser("validate", parents=[common], help="check a config and/or a trace file")
    v.add_argument("trace", nargs="?", help="trace CSV to validate (default: generated from config)")
    return ap


def load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    elif args.preset:
        cfg = ExperimentConfig.preset(args.preset)
    else:
        cfg = ExperimentConfig()
    cfg.override(args.set)
    if args.seed is not None:
        cfg.set("run", "seeds", [args.seed])
    if args.seeds:
        cfg.set("run", "seeds", args.seeds)
    if args.out:
        cfg.set("run", "out", args.out)
    if getattr(args, "modes", None):
        cfg.set("modes", "circuit", args.modes)
    if getattr(args, "rules", None):
        cfg.set("modes", "rules", args.rules)
    return cfg.validate()


def out_dir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg["run"]["out"])
    p = p if p.is_absolute() else Path.cwd() / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def cell_name(topo_name, circuit, rules, seed):
    return f"{topo_name}_{circuit}_{rules}_seed{seed}"


def run_cell(cfg_text: str, base_dir: str, seed: int, circuit: str, rules: str,
             out: str | None = None, debug: bool = False) -> MetricsReport:
    """Run one (seed, circuit mode, rule mode) cell; picklable for worker processes."""
    import time
    cfg = ExperimentConfig.from_string(cfg_text, base_dir=base_dir)
    topo = cfg.build_topology()
    trace = cfg.build_trace(seed, topo)
    sim_cfg = cfg.sim_config(circuit, rules, seed, record_events=debug, record_demand=debug)
    t0 = time.perf_counter()
    sim = Simulation(topo, trace, sim_cfg).run()
    report = build_report(sim, wallclock=time.perf_counter() - t0)
    report.label["seed"] = seed
    if out is not None:
        name = cell_name(topo.name, circuit, rules, seed)
        report.write(Path(out) / f"report_{name}.json")
        if debug:
            write_debug_logs(sim, Path(out), name)
    return report


def write_debug_logs(sim, out: Path, name: str):
    (out / f"events_{name}.log").write_text("".join(line + "\n" for line in sim.event_log))
    with open(out / f"rules_{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "switch", "op", "origin", "dscp", "dst_switch", "meta_value", "meta_mask"])
        w.writerows(sim.sw.rule_log)
    with open(out / f"demand_{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "transit_switch", "dst_switch", "rate_bps", "flows"])
        w.writerows(sim.demand_log)


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    out = out_dir(cfg)
    topo = cfg.build_topology()
    if args.topology_csv:
        (out / f"topology_{topo.name}.csv").write_text(topo.adjacency_csv())
    if cfg["traffic"]["source"] != "generate":
        raise ConfigError("generate needs traffic.source = generate")
    for seed in cfg["run"]["seeds"]:
        trace = cfg.build_trace(seed, topo)
        path = out / f"trace_{topo.name}_seed{seed}.csv"
        trace.write(path)
        rep = validate_trace(trace, topo)
        print(f"{path}: {rep.summary().splitlines()[0]} "
              f"elephant_demand_fraction={rep.elephant_demand_fraction:.3f}")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> list[MetricsReport]:
    out = out_dir(cfg)
    cfg.write(out / "config.ini")
    text = cfg.to_string()
    base = str(cfg.base_dir)
    jobs = [(text, base, seed, c, r, str(out), args.debug_logs)
            for seed in cfg["run"]["seeds"] for c, r in cfg.cells()]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reports = list(ex.map(run_cell, *zip(*jobs)))
    else:
        reports = [run_cell(*j) for j in jobs]
    for rep in reports:
        lab = rep.label
        print(f"{lab['topology']} {lab['circuit_mode']}/{lab['rule_mode']} seed={lab['seed']} "
              f"flows={lab['n_flows']} events={rep.n_events} hash={rep.event_log_hash[:12]} "
              f"wall={rep.wallclock_s:.2f}s")
    (out / "summary.csv").write_text(rows_to_csv(_cell_summaries(reports)))
    return reports


def _cell_summaries(reports):
    groups: dict[tuple, list] = {}
    for r in reports:
        groups.setdefault((r.label["topology"], r.label["circuit_mode"], r.label["rule_mode"]), []).append(r)
    rows = []
    for _, rs in sorted(groups.items()):
        rows.extend(summary_rows(rs))
    return rows


def _collect_reports(paths) -> list[MetricsReport]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("report_*.json")))
        else:
            files.append(p)
    if not files:
        raise FileNotFoundError("no report files found")
    out = []
    for f in files:
        try:
            out.append(MetricsReport.read(f))
        except (OSError, ValueError, KeyError) as e:
            raise RuntimeError(f"unreadable report {f}: {e}") from e
    return out


def comparison_rows(reports) -> list[dict]:
    """Pairwise comparisons within each topology, paired by seed.

    private -> shared for each rule mode, and cshare -> per_flow for each
    circuit mode.
    """
    cells: dict[tuple, dict] = {}
    for r in reports:
        key = (r.label["topology"], r.label["circuit_mode"], r.label["rule_mode"])
        cells.setdefault(key, {})[r.seed] = r
    rows = []
    pairs = []
    for (topo, c, ru) in sorted(cells):
        if c == "private" and (topo, "shared", ru) in cells:
            pairs.append(((topo, "private", ru), (topo, "shared", ru)))
        if ru == "cshare" and (topo, c, "per_flow") in cells:
            pairs.append(((topo, c, "cshare"), (topo, c, "per_flow")))
        if c == "none":
            for other in ("private", "shared"):
                for rr in ("cshare", "per_flow"):
                    if (topo, other, rr) in cells:
                        pairs.append(((topo, "none", ru), (topo, other, rr)))
    for ka, kb in pairs:
        seeds = sorted(set(cells[ka]) & set(cells[kb]))
        if not seeds:
            continue
        a = [cells[ka][s] for s in seeds]
        b = [cells[kb][s] for s in seeds]
        for row in compare_runs(a, b):
            row.update(topology=ka[0], a_mode=f"{ka[1]}/{ka[2]}", b_mode=f"{kb[1]}/{kb[2]}",
                       mode=f"{kb[1]}/{kb[2]} vs {ka[1]}/{ka[2]}", value=row["delta_pct"])
            rows.append(row)
    return rows


def cmd_report(cfg: ExperimentConfig, args) -> int:
    reports = _collect_reports(args.reports)
    out = out_dir(cfg)
    summary = _cell_summaries(reports)
    (out / "summary.csv").write_text(rows_to_csv(summary))
    comp = comparison_rows(reports)
    (out / "comparison.csv").write_text(rows_to_csv(comp))
    (out / "comparison.json").write_text(json.dumps(comp, indent=1, default=float))
    fp = footprint_table(reports)
    if fp:
        cols = list(dict.fromkeys(k for row in fp for k in row))
        (out / "footprint_table.csv").write_text(rows_to_csv(fp, cols))
    (out / "completion_by_topology.csv").write_text(rows_to_csv(_size_table(comp), SIZE_COLUMNS))
    if len(reports) == 1:
        print(rows_to_csv(summary), end="")
    else:
        for row in comp:
            if row["metric"] in ("completion_time_mean", "rules_installed_per_minute"):
                print(f"{row['topology']:>10} {row['mode']:<34} {row['metric']}[{row['class']}] "
                      f"{row['delta_pct']:+.1f}% (CI {row['ci_low']:+.1f}..{row['ci_high']:+.1f}, "
                      f"n={row['trials']}) {row['warning']}")
    print(f"wrote {out}")
    return EXIT_OK


SIZE_COLUMNS = ("topology", "comparison", "mice_coflow_improvement_pct", "elephant_improvement_pct",
                "mean_improvement_pct", "trials")


def _size_table(comp) -> list[dict]:
    """Completion-time improvement (lower is better, so sign-flipped) per topology."""
    rows = {}
    for r in comp:
        if r["metric"] != "completion_time_mean" or r["a_mode"].split("/")[0] != "private" \
                or r["b_mode"].split("/")[0] != "shared":
            continue
        key = (r["topology"], r["mode"])
        row = rows.setdefault(key, {"topology": r["topology"], "comparison": r["mode"],
                                    "trials": r["trials"]})
        row[f"{r['class']}_improvement_pct"] = -r["delta_pct"]
    for row in rows.values():
        vals = [row.get("mice_coflow_improvement_pct"), row.get("elephant_improvement_pct")]
        vals = [v for v in vals if v is not None]
        row["mean_improvement_pct"] = float(np.mean(vals)) if vals else float("nan")
    return sorted(rows.values(), key=lambda r: (len(r["topology"]), r["topology"]))


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    topo = cfg.build_topology()
    if args.trace:
        trace = read_trace(args.trace)
    else:
        trace = cfg.build_trace(cfg["run"]["seeds"][0], topo)
    rep = validate_trace(trace, topo)
    print(rep.summary())
    return EXIT_OK if rep.ok else EXIT_RUNTIME


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "generate":
            return cmd_generate(cfg, args)
        if args.command == "run":
            cmd_run(cfg, args)
            return EXIT_OK
        if args.command == "report":
            return cmd_report(cfg, args)
        return cmd_validate(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:   # noqa: BLE001 - any failure inside a run maps to exit 3
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
