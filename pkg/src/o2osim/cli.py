"""Command-line entry points: simulate, experiment, analyze, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, experiment, io
from .agents import Intention
from .config import ConfigError, RunConfig, load_config, write_config
from .engine import run

log = logging.getLogger("o2osim")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
STAGE_DAYS = 3  # window length for stage flows, heatmaps and clustering


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def stage_window(config: RunConfig) -> int:
    """Three days when that splits the horizon, else one day, else the horizon."""
    day = config.world.steps_per_day
    horizon = config.world.horizon
    for w in (STAGE_DAYS * day, day):
        if horizon % w == 0 and w < horizon:
            return w
    return horizon


def _build_parser() -> _Parser:
    p = _Parser(prog="o2osim", description="Delivery-platform artificial society simulator.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="run one simulation")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("experiment", help="run the factorial design in the config")
    e.add_argument("--config", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--parallel", type=int, default=1, help="max concurrent runs")

    a = sub.add_parser("analyze", help="run one analysis layer")
    a.add_argument("--in", dest="inp", required=True, type=Path)
    a.add_argument("--layer", required=True, choices=["observe", "intervene", "mechanism"])
    a.add_argument("--out", required=True, type=Path)

    r = sub.add_parser("report", help="combine analysis outputs into one summary")
    r.add_argument("--in", dest="inp", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    return p


def _simulate(args) -> None:
    started = time.time()
    cfg = load_config(args.config)
    out = io.ensure_dir(args.out)
    trace = run(cfg, args.seed)
    window = stage_window(cfg)
    files = io.export_artifacts(out, trace=trace, heatmaps=analysis.density_heatmap(trace, window))
    write_config(cfg, out / "config.toml")
    summary = dict(trace.summary, seed=args.seed, heatmap_window=window)
    io.write_json(summary, out / "summary.json")
    files += ["config.toml", "summary.json"]
    io.write_manifest(out, config_hash=cfg.content_hash(), seed=args.seed, files=files, started=started)
    log.info("simulate: involution index %s", summary["involution_index"])


def _experiment(args) -> None:
    started = time.time()
    cfg = load_config(args.config)
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    out = io.ensure_dir(args.out)
    ex = cfg.experiment
    design = experiment.build_design(ex.factors, ex.replicates, ex.base_seed)
    log.info("experiment: %d runs over %d design points", len(design), design.n_points)
    table = experiment.execute_design(design, cfg, parallelism=args.parallel)
    files = io.export_artifacts(out, results=table)
    write_config(cfg, out / "config.toml")
    files.append("config.toml")
    seeds = sorted({r.seed for r in design.rows})
    io.write_manifest(out, config_hash=cfg.content_hash(), seed=seeds, files=files, started=started)
    failed = sum(not r.ok for r in table.rows)
    if failed:
        log.warning("experiment: %d of %d runs failed", failed, len(table))


def _load_dir_config(inp: Path) -> RunConfig:
    path = inp / "config.toml"
    return load_config(path) if path.exists() else RunConfig()


def _observe(inp: Path, out: Path) -> dict:
    summary: dict = {}
    files = []
    if (inp / "results.csv").exists():
        table = io.read_results(inp / "results.csv")
        dist = analysis.involution_distribution(table)
        summary.update(counts=dist.counts, fraction_high=dist.fraction_high,
                       undefined=dist.undefined, levels=dist.levels)
        vals = [r.metrics["involution_index"] for r in table.rows if r.ok]
        summary["median_index"] = float(np.median(vals)) if vals else None
        if len(vals) >= 4:
            rep = analysis.detect_anomalies(table)
            summary["anomalies"] = [{"row": i, "design_point": table.rows[i].design_point,
                                     "seed": table.rows[i].seed,
                                     "involution_index": table.rows[i].metrics["involution_index"]}
                                    for i in rep.flagged]
    if (inp / "trace.jsonl").exists():
        cfg = _load_dir_config(inp)
        trace = io.read_trace(inp / "trace.jsonl", cfg)
        window = stage_window(cfg)
        files += io.write_heatmaps(analysis.density_heatmap(trace, window), out)
        from .engine import daily_involution
        summary["daily_involution"] = daily_involution(trace)
        summary["heatmap_window"] = window
    if not summary:
        raise FileNotFoundError(f"{inp} has neither results.csv nor trace.jsonl")
    summary["files"] = files
    return summary


def _intervene(inp: Path, out: Path) -> dict:
    table = io.read_results(inp / "results.csv")
    varied = [n for n in table.factor_names if len({r.levels[n] for r in table.rows}) > 1]
    summary: dict = {"ate": experiment.factor_ates(table), "factors": varied, "files": []}
    if varied:
        try:
            coefs = analysis.path_coefficients(table, "involution_index", varied)
        except ValueError as exc:
            summary["path_error"] = str(exc)
        else:
            io.export_artifacts(out, coefficients=coefs)
            summary["path_coefficients"] = coefs
            summary["files"].append("coefficients.csv")
        rows = [r for r in table.rows if r.ok]
        X = np.array([[analysis._code(r.levels[n]) for n in varied] for r in rows], dtype=float)
        y = np.array([r.metrics["involution_index"] for r in rows], dtype=float)
        fits = {}
        for degree in (1, 2):
            try:
                fits[degree] = experiment.fit_metamodel(X, y, degree, varied).r2
            except ValueError as exc:
                fits[degree] = str(exc)
        summary["metamodel_r2"] = fits
    return summary


def _mechanism(inp: Path, out: Path) -> dict:
    cfg = _load_dir_config(inp)
    trace = io.read_trace(inp / "trace.jsonl", cfg)
    logs = analysis.IntentionLog.from_trace(trace)
    window = stage_window(cfg)
    flow = analysis.stage_flow_matrix(logs, window)
    io.export_artifacts(out, flows=flow)
    labels = flow.labels
    io.write_matrix(flow.shares, [f"{a}-{b}" for a, b in flow.windows], labels, out / "shares.csv")
    files = ["flows.csv", "shares.csv"]
    summary: dict = {
        "window": window,
        "shares": {lab: flow.shares[:, i].tolist() for i, lab in enumerate(labels)},
        "risk_avoidant_nondecreasing_final_third":
            analysis.risk_avoidant_trend(flow.shares, flow.windows, logs.n_steps),
    }
    clusters = analysis.cluster_intentions(logs, window)
    summary["clusters"] = {"k": clusters.k, "silhouette": clusters.silhouette,
                           "sizes": np.bincount(clusters.assignments).tolist(), "note": clusters.note}
    if len(flow.windows) >= 3:
        corr = analysis.intention_behavior_correlation(logs, window)
        io.write_matrix(corr.r, corr.row_labels, corr.col_labels, out / "correlation.csv")
        files.append("correlation.csv")
        ra = corr.row_labels.index(analysis.INTENTION_NAMES[Intention.RISK_AVOIDANT])
        summary["risk_avoidant_vs_switch_zone"] = _finite(corr.r[ra, corr.col_labels.index("SWITCH_ZONE")])
    summary["files"] = files
    return summary


def _finite(v):
    return float(v) if np.isfinite(v) else None


LAYERS = {"observe": _observe, "intervene": _intervene, "mechanism": _mechanism}


def _analyze(args) -> None:
    out = io.ensure_dir(args.out)
    summary = LAYERS[args.layer](args.inp, out)
    summary["layer"] = args.layer
    io.write_json(summary, out / f"{args.layer}.json")
    if args.layer == "observe" and "fraction_high" in summary:
        print(f"fraction_high={summary['fraction_high']:.4f} counts={summary['counts']}")
    else:
        print(f"{args.layer}: wrote {out / (args.layer + '.json')}")


def _report(args) -> None:
    out = io.ensure_dir(args.out)
    parts = {}
    for name in ("summary", "observe", "intervene", "mechanism"):
        path = args.inp / f"{name}.json"
        if path.exists():
            parts[name] = json.loads(path.read_text())
    if not parts:
        raise FileNotFoundError(f"no summary or analysis JSON found in {args.inp}")
    io.write_json(parts, out / "report.json")
    lines = ["# Simulation report", ""]
    if "summary" in parts:
        s = parts["summary"]
        lines += ["## Run", "", f"- involution index: {s.get('involution_index')}",
                  f"- swf: {s.get('swf')}", f"- mean utility: {s.get('mean_utility')}",
                  f"- risk-avoidant share at end: {s.get('frac_risk_avoidant')}", ""]
    if "observe" in parts and "counts" in parts["observe"]:
        o = parts["observe"]
        lines += ["## Observation", "", f"- level counts: {o['counts']}",
                  f"- fraction_high: {o['fraction_high']}",
                  f"- anomalous runs: {len(o.get('anomalies', []))}", ""]
    if "intervene" in parts:
        lines += ["## Intervention", ""]
        for a in parts["intervene"]["ate"]:
            lines.append(f"- {a['factor']} {a['control']} -> {a['treated']}: ATE {a['estimate']:.4g} "
                         f"[{a['ci_low']:.4g}, {a['ci_high']:.4g}]")
        for name, c in parts["intervene"].get("path_coefficients", {}).items():
            lines.append(f"- path {name}: beta {c['beta']:.4g} (p={c['p']:.3g})")
        lines.append("")
    if "mechanism" in parts:
        m = parts["mechanism"]
        ra = m["shares"]["RiskAvoidant"]
        lines += ["## Mechanism", "", f"- risk-avoidant share by window: {[round(v, 3) for v in ra]}",
                  f"- clusters: k={m['clusters']['k']} sizes={m['clusters']['sizes']}", ""]
    (out / "report.md").write_text("\n".join(lines))
    print(f"report: wrote {out / 'report.md'}")


COMMANDS = {"simulate": _simulate, "experiment": _experiment, "analyze": _analyze, "report": _report}


def _configure_logging() -> None:
    level = os.environ.get("SIM_LOG_LEVEL", "info").lower()
    if level not in ("error", "info", "debug"):
        level = "info"
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
