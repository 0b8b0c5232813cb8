"""Train the desk preset end to end and report count-based metrics.

Takes a few minutes on one CPU. Trains on ~2400 synthetic windows,
selects the best model by validation PPS (exact count-vector match), and
evaluates on the held-out test split. Pass an integer argument to change
the seed; pass --no-rvq to bypass the quantizer.
"""

import sys
import time

from multihar.config import desk_config
from multihar.training import build_dataset, evaluate_model, train

seed = next((int(a) for a in sys.argv[1:] if a.isdigit()), 0)
cfg = desk_config(use_rvq="--no-rvq" not in sys.argv)

print(f"desk preset, seed {seed}, quantizer {'on' if cfg.use_rvq else 'off'}")
dataset = build_dataset(cfg, seed)
print(f"splits: {len(dataset[0])} train / {len(dataset[1])} val / "
      f"{len(dataset[2])} test")

t0 = time.time()
result = train(cfg, seed=seed, dataset=dataset,
               log=lambda m: print(f"[{time.time() - t0:6.1f}s] {m}"))

print(f"\nbest validation PPS {result.best_val_pps:.3f} "
      f"at epoch {result.best_epoch}")
report = evaluate_model(result.model, dataset[2])
print("held-out test metrics:")
print(report.table())
