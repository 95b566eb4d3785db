"""Train CMIL on three seeds plus the BC-only and alpha=0 baselines on the point mass.

Writes per-run metrics under the output directory (default runs/acceptance)
and a success-curve plot comparing them.  Finished runs are reused when the
training code has not changed, so re-running is cheap.

    python demos/point_mass_comparison.py [out_dir] [total_env_steps]
"""
import logging
import sys
import time
from pathlib import Path

from cmil.trainer.experiments import first_success_step, run_comparison
from cmil.trainer.metrics import read_metrics
from cmil.trainer.plot import disagreement_trend, plot_metrics

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "runs" / "acceptance"
budget = int(sys.argv[2]) if len(sys.argv) > 2 else 150_000

t0 = time.perf_counter()
paths = run_comparison(root, total_env_steps=budget)
print(f"all runs finished in {time.perf_counter() - t0:.0f}s")

for name, path in paths.items():
    cols = read_metrics(path)
    hit = first_success_step(cols, 0.8)
    print(f"{name:16s} final success {cols['success_rate'][-1]:.2f}  "
          f"first >= 0.8 at {hit if hit is not None else 'never'}  "
          f"disagreement trend {disagreement_trend(cols) if 'bc' not in name else float('nan'):+.3f}")

out = plot_metrics(list(paths.values()), root / "success.svg")
print(f"plots: {out} and {out.with_name(out.stem + '-bounds.svg')}")
