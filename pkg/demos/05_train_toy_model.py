"""Train the small 3D CNN end to end on synthetic corrupted phantoms.

Generates corrupted 32-cubed phantoms with uniformly distributed motion
scores, trains the desk-scale network with the KL soft-label loss and
JS-based checkpoint selection, and reports held-out rank correlation
against the true scores. With the default 400 steps this takes about
1.5 minutes on one CPU core; pass a step count (e.g. 2000) for the full
toy run.

Run:  python3 demos/05_train_toy_model.py [steps] [n_volumes]
"""

import sys
import time

import numpy as np

from motionsim.net import MotionNet, TrainConfig, evaluate, split_indices, toy_config, train
from motionsim.phantom import make_toy_dataset
from motionsim.softlabel import BinGrid
from motionsim.stats import spearman

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400
n_volumes = int(sys.argv[2]) if len(sys.argv) > 2 else 120

print(f"generating {n_volumes} corrupted phantoms ...")
t0 = time.time()
dataset = make_toy_dataset(n_volumes, dim=32, seed=0)
print(f"  done in {time.time() - t0:.1f}s; scores span "
      f"[{dataset.scores.min():.2f}, {dataset.scores.max():.2f}]\n")

net_cfg = toy_config(32)
train_cfg = TrainConfig(batch_size=8, total_steps=steps,
                        eval_interval=max(steps // 10, 1), seed=0)
print(f"training {steps} steps (batch {train_cfg.batch_size}, "
      f"lr {train_cfg.learning_rate}, wd {train_cfg.weight_decay}) ...")
t0 = time.time()
best_state, history = train(net_cfg, train_cfg, dataset, split_seed=0)
print(f"  done in {time.time() - t0:.1f}s")
print(f"{'step':>6} {'loss':>8} {'val JS':>8} {'val RMSE':>9}")
for h in history:
    print(f"{h['step']:6d} {h['loss']:8.4f} {h['val_js']:8.4f} {h['val_rmse']:9.4f}")

net = MotionNet(net_cfg)
net.load_state_dict(best_state)
grid = BinGrid()
_, val_idx, test_idx = split_indices(len(dataset), 0)
preds, js, r2, rmse = evaluate(net, dataset.volumes[test_idx], dataset.scores[test_idx], grid)
baseline = float(np.std(dataset.scores[test_idx]))
print(f"\nheld-out test ({test_idx.size} volumes):")
print(f"  Spearman(pred, true) = {spearman(preds, dataset.scores[test_idx]):.3f}")
print(f"  RMSE = {rmse:.3f}  (predict-the-mean baseline {baseline:.3f})")
print("\nEven a few hundred steps push rank correlation well above")
print("chance; the full 2,000-step run reaches Spearman ~0.6.")
