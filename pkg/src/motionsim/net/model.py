"""Fully convolutional 3D motion regressor with a soft-label head.

Encoder blocks: conv3 -> BN (-> conv3 -> BN) -> maxpool (if downsampling)
-> ReLU, followed by a non-downsampling 1x1x1 conv block, global average
pooling, dropout and a linear layer producing one logit per motion bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from motionsim.net.layers import (
    BatchNorm3d,
    Conv3d,
    Dropout,
    GlobalAvgPool,
    Linear,
    MaxPool2,
    ReLU,
)


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    downsample: bool = True
    convs: int = 2

    def __post_init__(self):
        if self.convs not in (1, 2):
            raise ValueError("convs per block must be 1 or 2")


@dataclass(frozen=True)
class NetConfig:
    input_dims: tuple
    blocks: tuple
    head_channels: int = 64
    n_bins: int = 50
    dropout: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        n_down = sum(b.downsample for b in self.blocks)
        if min(self.input_dims) >> n_down < 1:
            raise ValueError(f"{n_down} downsampling blocks collapse input dims {self.input_dims}")


def full_config() -> NetConfig:
    """Full-scale configuration: 160x192x160 input, five downsampling blocks."""
    return NetConfig(
        input_dims=(160, 192, 160),
        blocks=tuple(BlockSpec(c) for c in (32, 64, 128, 256, 256)),
        head_channels=64,
        n_bins=50,
        dropout=0.6,
    )


def toy_config(input_dim: int = 32, n_bins: int = 50, dropout: float = 0.1) -> NetConfig:
    """Desk-scale configuration for tests and the toy training run."""
    return NetConfig(
        input_dims=(input_dim,) * 3,
        blocks=(BlockSpec(4, convs=1), BlockSpec(8), BlockSpec(8, downsample=False)),
        head_channels=16,
        n_bins=n_bins,
        dropout=dropout,
    )


class MotionNet:
    """The network, its parameters, and fused softmax + KL loss."""

    def __init__(self, cfg: NetConfig, dtype=np.float32, seed: int = 0):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.layers = []
        self._names = []
        in_ch = 1
        for i, block in enumerate(cfg.blocks):
            self._add(f"block{i}.conv0", Conv3d(in_ch, block.channels, 3, rng, dtype))
            self._add(f"block{i}.bn0", BatchNorm3d(block.channels, dtype))
            if block.convs == 2:
                self._add(f"block{i}.conv1", Conv3d(block.channels, block.channels, 3, rng, dtype))
                self._add(f"block{i}.bn1", BatchNorm3d(block.channels, dtype))
            if block.downsample:
                self._add(f"block{i}.pool", MaxPool2())
            self._add(f"block{i}.relu", ReLU())
            in_ch = block.channels
        self._add("head.conv", Conv3d(in_ch, cfg.head_channels, 1, rng, dtype))
        self._add("head.bn", BatchNorm3d(cfg.head_channels, dtype))
        self._add("head.relu", ReLU())
        self._add("head.pool", GlobalAvgPool())
        self._add("head.dropout", Dropout(cfg.dropout))
        self._add("head.fc", Linear(cfg.head_channels, cfg.n_bins, rng, dtype))

    def _add(self, name, layer):
        self._names.append(name)
        self.layers.append(layer)

    # -- parameter access -------------------------------------------------

    def params(self) -> dict:
        return {
            f"{name}.{key}": arr
            for name, layer in zip(self._names, self.layers)
            for key, arr in layer.params.items()
        }

    def grads(self) -> dict:
        return {
            f"{name}.{key}": arr
            for name, layer in zip(self._names, self.layers)
            for key, arr in layer.grads.items()
        }

    def decay_keys(self) -> set:
        return {
            f"{name}.{key}"
            for name, layer in zip(self._names, self.layers)
            for key in layer.decay_keys
        }

    def set_params(self, params: dict) -> None:
        for name, layer in zip(self._names, self.layers):
            for key in layer.params:
                layer.params[key] = params[f"{name}.{key}"].astype(self.dtype)

    def state_dict(self) -> dict:
        """Copies of all parameters plus batch-norm running statistics."""
        state = {k: v.copy() for k, v in self.params().items()}
        for name, layer in zip(self._names, self.layers):
            if hasattr(layer, "running_mean"):
                state[f"{name}.running_mean"] = layer.running_mean.copy()
                state[f"{name}.running_var"] = layer.running_var.copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        self.set_params({k: v for k, v in state.items() if not k.endswith(("running_mean", "running_var"))})
        for name, layer in zip(self._names, self.layers):
            if hasattr(layer, "running_mean") and f"{name}.running_mean" in state:
                layer.running_mean = np.asarray(state[f"{name}.running_mean"], dtype=np.float64)
                layer.running_var = np.asarray(state[f"{name}.running_var"], dtype=np.float64)

    # -- forward / loss ---------------------------------------------------

    def forward_logits(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None, None]
        elif x.ndim == 4:
            x = x[:, None]
        if x.shape[2:] != self.cfg.input_dims:
            raise ValueError(f"expected input dims {self.cfg.input_dims}, got {x.shape[2:]}")
        for name, layer in zip(self._names, self.layers):
            x = layer.forward(x, train=train, rng=rng)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite activation after layer '{name}'")
        return x

    def forward(self, x, train=False, rng=None):
        """Probability over motion bins; rows sum to 1."""
        return _softmax(self.forward_logits(x, train=train, rng=rng))

    def loss_and_grad(self, x, targets, rng):
        """Mean KL(target || prediction) over the batch, with full backprop.

        Returns (loss, grads dict keyed like params()).
        """
        targets = np.asarray(targets, dtype=np.float64)
        logits = self.forward_logits(x, train=True, rng=rng).astype(np.float64)
        if targets.shape != logits.shape:
            raise ValueError(f"target shape {targets.shape} does not match output {logits.shape}")
        b = logits.shape[0]
        logz = logits - logits.max(axis=1, keepdims=True)
        logp = logz - np.log(np.exp(logz).sum(axis=1, keepdims=True))
        probs = np.exp(logp)
        with np.errstate(divide="ignore", invalid="ignore"):
            entropy = np.where(targets > 0, targets * np.log(targets), 0.0).sum()
        loss = float((entropy - (targets * logp).sum()) / b)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        dlogits = ((probs - targets) / b).astype(self.dtype)
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss, self.grads()


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
