"""Train the random-forest compliance model on simulated history and inspect it."""

from pathlib import Path

from routecomply.harness import build_context, load_config

cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "quick.cfg")
ctx = build_context(cfg)
rep = ctx.eval_report
print(f"held-out accuracy {rep.accuracy:.4f} vs majority baseline {rep.majority_baseline:.4f}")
print(f"log loss {rep.log_loss:.4f}; chosen params {ctx.model.metadata['params']}")
print(rep.confusion_csv())
for b in rep.calibration:
    if b["count"]:
        print(f"  predicted {b['mean_predicted']:.3f}  observed {b['empirical_rate']:.3f}  n={b['count']}")
