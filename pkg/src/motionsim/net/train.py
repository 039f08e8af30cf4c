"""Training loop, model selection and checkpoint I/O.

Minibatch KL training with optional on-the-fly augmentation; at every
evaluation interval the Jensen-Shannon divergence between the validation
label distribution and the distribution of decoded predictions is
computed, and the checkpoint with the lowest JS is kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from motionsim.augment import AugmentPolicy, apply_training_pipeline
from motionsim.net.model import BlockSpec, MotionNet, NetConfig
from motionsim.net.optim import AdamW
from motionsim.softlabel import BinGrid, decode, encode, js_divergence, score_histogram
from motionsim.volume import Volume3D

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    batch_size: int = 10
    total_steps: int = 80_000
    eval_interval: int = 1000
    label_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.total_steps, self.eval_interval) < 1:
            raise ValueError("batch_size, total_steps and eval_interval must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.label_sigma <= 0:
            raise ValueError("invalid training hyperparameters")


@dataclass
class LabeledDataset:
    """Volumes (N, D, H, W) in [0, 1] with their motion scores (N,)."""

    volumes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.volumes = np.asarray(self.volumes, dtype=np.float32)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.volumes.ndim != 4 or self.volumes.shape[0] != self.scores.shape[0]:
            raise ValueError("volumes must be (N, D, H, W) matching scores (N,)")

    def __len__(self):
        return self.volumes.shape[0]


class TrainingDivergedError(RuntimeError):
    def __init__(self, step, history):
        super().__init__(f"training diverged (non-finite loss) at step {step}")
        self.history = history


def split_indices(n: int, seed: int = 0):
    """Deterministic 60-20-20 train/val/test index split."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def evaluate(net: MotionNet, volumes, scores, grid: BinGrid, batch_size: int = 8):
    """Decoded predictions plus (js, r2, rmse) on a labeled set."""
    preds = []
    for start in range(0, volumes.shape[0], batch_size):
        probs = net.forward(volumes[start : start + batch_size], train=False)
        preds.extend(decode(row, grid) for row in probs)
    preds = np.asarray(preds)
    scores = np.asarray(scores, dtype=np.float64)
    js = js_divergence(score_histogram(scores, grid), score_histogram(preds, grid))
    resid = preds - scores
    rmse = float(np.sqrt(np.mean(resid**2)))
    tss = float(np.sum((scores - scores.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / tss if tss > 0 else 0.0
    return preds, js, r2, rmse


def train(
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    dataset: LabeledDataset,
    policy: AugmentPolicy | None = None,
    grid: BinGrid = BinGrid(),
    split_seed: int = 0,
):
    """Train on the 60% split, select by validation JS.

    Returns (best_params, history); history is a list of dicts with keys
    step, loss, val_js, val_r2, val_rmse.
    """
    train_idx, val_idx, _ = split_indices(len(dataset), split_seed)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("dataset too small for a 60-20-20 split")
    x_train = dataset.volumes[train_idx]
    y_train = dataset.scores[train_idx]
    x_val = dataset.volumes[val_idx]
    y_val = dataset.scores[val_idx]

    targets_train = np.stack([encode(s, train_cfg.label_sigma, grid) for s in y_train])

    net = MotionNet(net_cfg, dtype=np.float32, seed=train_cfg.seed)
    params = net.params()
    opt = AdamW(
        params,
        lr=train_cfg.learning_rate,
        weight_decay=train_cfg.weight_decay,
        decay_keys=net.decay_keys(),
    )
    rng = np.random.default_rng(train_cfg.seed)

    history = []
    best_js = np.inf
    best_state = net.state_dict()
    running_loss = []
    for step in range(1, train_cfg.total_steps + 1):
        idx = rng.integers(0, x_train.shape[0], size=train_cfg.batch_size)
        batch = x_train[idx]
        if policy is not None:
            batch = np.stack(
                [apply_training_pipeline(Volume3D(vol), policy, rng).data for vol in batch]
            )
        try:
            loss, grads = net.loss_and_grad(batch, targets_train[idx], rng)
        except FloatingPointError as exc:
            raise TrainingDivergedError(step, history) from exc
        opt.step(params, grads)
        running_loss.append(loss)

        if step % train_cfg.eval_interval == 0 or step == train_cfg.total_steps:
            _, js, r2, rmse = evaluate(net, x_val, y_val, grid, train_cfg.batch_size)
            history.append(
                {
                    "step": step,
                    "loss": float(np.mean(running_loss)),
                    "val_js": js,
                    "val_r2": r2,
                    "val_rmse": rmse,
                }
            )
            running_loss = []
            if js < best_js:
                best_js = js
                best_state = net.state_dict()
    return best_state, history


def predict(net: MotionNet, volume, grid: BinGrid = BinGrid()) -> float:
    """Decoded motion score for one preprocessed volume."""
    data = volume.data if isinstance(volume, Volume3D) else np.asarray(volume)
    probs = net.forward(data, train=False)
    return decode(probs[0], grid)


def save_checkpoint(path, net: MotionNet) -> None:
    """Versioned npz checkpoint embedding the network configuration."""
    cfg = net.cfg
    meta = {
        "version": CHECKPOINT_VERSION,
        "input_dims": list(cfg.input_dims),
        "blocks": [[b.channels, b.downsample, b.convs] for b in cfg.blocks],
        "head_channels": cfg.head_channels,
        "n_bins": cfg.n_bins,
        "dropout": cfg.dropout,
    }
    arrays = {f"state/{k}": v for k, v in net.state_dict().items()}
    np.savez_compressed(path, meta=json.dumps(meta), **arrays)


def load_checkpoint(path) -> MotionNet:
    with np.load(path, allow_pickle=False) as data:
        try:
            meta = json.loads(str(data["meta"]))
        except KeyError as exc:
            raise ValueError("not a motionsim checkpoint: missing metadata") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {meta.get('version')}, expected {CHECKPOINT_VERSION}"
            )
        cfg = NetConfig(
            input_dims=tuple(meta["input_dims"]),
            blocks=tuple(BlockSpec(c, bool(d), int(v)) for c, d, v in meta["blocks"]),
            head_channels=meta["head_channels"],
            n_bins=meta["n_bins"],
            dropout=meta["dropout"],
        )
        net = MotionNet(cfg)
        net.load_state_dict({k[len("state/") :]: v for k, v in data.items() if k.startswith("state/")})
    return net
