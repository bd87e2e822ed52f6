"""Byte-deterministic exports: trace JSONL, CSV tables and run manifests.

Floats are written with 9 significant digits and every row ends in a
newline, so identical inputs give identical files.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import time
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import __version__
from .experiment import RESULT_METRICS, ResultRow, ResultTable


def fmt(x) -> str:
    """Canonical text for one number (9 significant digits)."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9g}"


def _num(x):
    # JSON number with 9 significant digits; ints stay ints
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    v = float(f"{float(x):.9g}")
    return v if math.isfinite(v) else None


def trace_lines(trace) -> Iterator[str]:
    """One JSON line per step.

    ``riders`` holds ``[action, intention, x, y, income_delta, cost_delta]``
    per rider, in rider-id order.
    """
    acts = trace.actions.tolist()
    ints = trace.intentions.tolist()
    pos = trace.positions.tolist()
    inc = trace.income_delta
    cst = trace.cost_delta
    for t, ev in enumerate(trace.events):
        riders = [
            [acts[t][i], ints[t][i], pos[t][i][0], pos[t][i][1], _num(inc[t, i]), _num(cst[t, i])]
            for i in range(trace.n_riders)
        ]
        rec = {
            "step": t,
            "created": ev["created"],
            "assigned": [list(p) for p in ev["assigned"]],
            "delivered": [[o, r, _num(f)] for o, r, f in ev["delivered"]],
            "expired": ev["expired"],
            "riders": riders,
        }
        yield json.dumps(rec, separators=(",", ":")) + "\n"


def write_trace(trace, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in trace_lines(trace):
            fh.write(line)
    return path


def read_trace_records(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def write_results(table, path: str | Path) -> Path:
    """``results.csv``: one row per design row, in design order."""
    factor_names = list(table.factor_names)
    header = ["design_point", "seed"] + [f"factor_{n}" for n in factor_names] + list(RESULT_METRICS) + ["status"]
    rows = []
    for r in table.rows:
        rows.append([r.design_point, r.seed] + [str(r.levels[n]) for n in factor_names]
                    + [r.metrics.get(m) if r.metrics else None for m in RESULT_METRICS]
                    + [r.status])
    return _write_csv(Path(path), header, rows)


def read_results(path: str | Path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        factor_names = [h[len("factor_"):] for h in reader.fieldnames if h.startswith("factor_")]
        rows = []
        for rec in reader:
            metrics = {m: (float(rec[m]) if rec[m] not in ("", None) else None) for m in RESULT_METRICS}
            levels = {n: _parse_level(rec[f"factor_{n}"]) for n in factor_names}
            rows.append(ResultRow(int(rec["design_point"]), int(rec["seed"]), levels, metrics,
                                  rec.get("status", "ok")))
    return ResultTable(factor_names, rows)


def _parse_level(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def write_heatmap(grid: np.ndarray, path: str | Path) -> Path:
    """Dense grid, one CSV row per ``y``, columns ``x = 0..width-1``."""
    g = np.asarray(grid)
    buf = "".join(",".join(fmt(v) for v in row) + "\n" for row in g.T.tolist())
    Path(path).write_text(buf)
    return Path(path)


def read_heatmap(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2).T


def write_flows(flow, path: str | Path) -> Path:
    """``flows.csv``: ``window,from,to,count`` for non-zero transitions."""
    rows = []
    for w, mat in enumerate(flow.counts):
        for i, src in enumerate(flow.labels):
            for j, dst in enumerate(flow.labels):
                if mat[i][j]:
                    rows.append([w + 1, src, dst, int(mat[i][j])])
    return _write_csv(Path(path), ["window", "from", "to", "count"], rows)


def write_coefficients(coefs: dict, path: str | Path) -> Path:
    rows = [[name, c["beta"], c["p"]] for name, c in coefs.items()]
    return _write_csv(Path(path), ["factor", "beta", "p"], rows)


def write_matrix(matrix: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str],
                 path: str | Path) -> Path:
    rows = [[rl] + [None if not np.isfinite(v) else v for v in matrix[i]] for i, rl in enumerate(row_labels)]
    return _write_csv(Path(path), [""] + list(col_labels), rows)


def write_json(obj, path: str | Path) -> Path:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return Path(path)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def ensure_dir(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def write_manifest(out_dir: Path, *, config_hash: str, seed, files: Sequence[str], started: float) -> Path:
    manifest = {
        "config_hash": config_hash,
        "seed": seed,
        "engine_version": __version__,
        "files": sorted(files),
        "wall_time_s": round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    if path.exists():
        raise FileExistsError(f"{path} already exists; manifests are written once per run")
    return write_json(manifest, path)


def read_trace(path: str | Path, config):
    """Rebuild a RunTrace from ``trace.jsonl`` and the config that produced it."""
    from .engine import RunTrace

    recs = read_trace_records(path)
    if not recs:
        raise ValueError(f"{path} holds no trace records")
    riders = np.array([r["riders"] for r in recs], dtype=object)
    T, n = riders.shape[:2]
    as_float = np.vectorize(lambda v: np.nan if v is None else float(v), otypes=[float])
    events = [{"created": r["created"],
               "assigned": [tuple(p) for p in r["assigned"]],
               "delivered": [tuple(d) for d in r["delivered"]],
               "expired": r["expired"]} for r in recs]
    return RunTrace(
        config=config,
        seed=None,
        actions=riders[:, :, 0].astype(np.int8),
        intentions=riders[:, :, 1].astype(np.int8),
        positions=np.stack([riders[:, :, 2], riders[:, :, 3]], axis=-1).astype(np.int16),
        income_delta=as_float(riders[:, :, 4]),
        cost_delta=as_float(riders[:, :, 5]),
        events=events,
    )


def write_heatmaps(grids: np.ndarray, out_dir: str | Path) -> list[str]:
    """One ``heatmap_w<k>.csv`` per window, ``k`` counting from 1."""
    names = []
    for k, grid in enumerate(grids, start=1):
        name = f"heatmap_w{k}.csv"
        write_heatmap(grid, Path(out_dir) / name)
        names.append(name)
    return names


def export_artifacts(out_dir: str | Path, *, trace=None, results=None, heatmaps=None,
                     flows=None, coefficients=None) -> list[str]:
    """Write whichever artifacts are given; returns the file names written."""
    out = ensure_dir(out_dir)
    names = []
    if trace is not None:
        write_trace(trace, out / "trace.jsonl")
        names.append("trace.jsonl")
    if results is not None:
        write_results(results, out / "results.csv")
        names.append("results.csv")
    if heatmaps is not None:
        names += write_heatmaps(heatmaps, out)
    if flows is not None:
        write_flows(flows, out / "flows.csv")
        names.append("flows.csv")
    if coefficients is not None:
        write_coefficients(coefficients, out / "coefficients.csv")
        names.append("coefficients.csv")
    return names
