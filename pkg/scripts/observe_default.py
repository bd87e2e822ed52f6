"""Observational layer on the default world: repeated runs, level counts,
anomalous runs and per-window heatmaps of one run.

    python3 scripts/observe_default.py --replicates 10 --out runs/observe
"""

import argparse
from pathlib import Path

from o2osim import io
from o2osim.analysis import density_heatmap, detect_anomalies, involution_distribution
from o2osim.cli import stage_window
from o2osim.config import RunConfig
from o2osim.engine import daily_involution, run
from o2osim.experiment import build_design, execute_design


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("runs/observe"))
    args = p.parse_args()

    cfg = RunConfig()
    table = execute_design(build_design([], args.replicates), cfg, parallelism=args.parallel)
    dist = involution_distribution(table)
    print(f"level counts {dist.counts}  fraction_high={dist.fraction_high:.2f}")
    if len(table) >= 4:
        rep = detect_anomalies(table)
        print(f"median index {rep.median:.2f}, MAD {rep.mad:.2f}, anomalous runs {rep.flagged}")

    trace = run(cfg, 0)
    window = stage_window(cfg)
    files = io.export_artifacts(args.out, results=table, heatmaps=density_heatmap(trace, window))
    daily = daily_involution(trace)
    print("daily index, seed 0:", " ".join("-" if v is None else f"{v:.0f}" for v in daily))
    print(f"wrote {len(files)} files to {args.out}")


if __name__ == "__main__":
    main()
