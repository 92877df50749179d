"""Run all five scenarios on shared seeds and write the report (tables, SVG charts, manifest).

Uses the quick config by default; pass --full for the default R = 10 run.
"""

import argparse
from pathlib import Path

from routecomply.harness import Config, build_context, compare_scenarios, emit_report, load_config

ap = argparse.ArgumentParser()
ap.add_argument("--full", action="store_true")
ap.add_argument("--out", default="demo_report")
args = ap.parse_args()

cfg = Config().validate() if args.full else load_config(Path(__file__).resolve().parent.parent / "configs" / "quick.cfg")
ctx = build_context(cfg)
results = compare_scenarios(ctx)
print(f"{'scenario':9s} {'obj':>9s} {'flow diff':>10s} {'travel time':>12s}")
for r in results:
    row = r.row()
    obj = "N/A" if row["obj_value_mean"] is None else f"{row['obj_value_mean']:.2f}"
    print(f"{r.scenario:9s} {obj:>9s} {row['flow_diff_mean']:10.2f} {row['travel_time_mean']:12.2f}")
for p in emit_report(results, ctx, args.out):
    print("wrote", p)
