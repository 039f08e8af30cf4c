"""Layer primitives with hand-derived backward passes.

All layers operate on (batch, channels, D, H, W) arrays. Each layer owns
its parameters and, after backward(), the matching gradients. Forward
caches are only kept in train mode.
"""

from __future__ import annotations

import numpy as np


class Layer:
    params: dict = {}
    grads: dict = {}
    decay_keys: tuple = ()

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv3d(Layer):
    """3D convolution, kernel size 1 or 3, 'same' padding, no bias.

    Small activations go through an im2col GEMM; large ones (full-scale
    volumes) fall back to a per-offset accumulation that never
    materializes the column matrix.
    """

    # above this column-matrix size (bytes) use the memory-lean path
    GEMM_LIMIT = 512 * 1024 * 1024

    def __init__(self, in_channels, out_channels, kernel_size, rng, dtype=np.float32):
        if kernel_size not in (1, 3):
            raise ValueError("kernel_size must be 1 or 3")
        self.k = kernel_size
        fan_in = in_channels * kernel_size**3
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(out_channels, in_channels, self.k, self.k, self.k))
        self.params = {"w": w.astype(dtype)}
        self.grads = {}
        self.decay_keys = ("w",)
        self._cache = None

    def _use_gemm(self, x):
        b, ci, d, h, wd = x.shape
        return b * d * h * wd * ci * self.k**3 * x.itemsize <= self.GEMM_LIMIT

    def forward(self, x, train=False, rng=None):
        w = self.params["w"]
        if x.shape[1] != w.shape[1]:
            raise ValueError(f"conv expects {w.shape[1]} input channels, got {x.shape[1]}")
        if self._use_gemm(x):
            return self._forward_gemm(x, train)
        return self._forward_slices(x, train)

    def backward(self, dout):
        mode = self._cache[0]
        if mode == "gemm":
            return self._backward_gemm(dout)
        return self._backward_slices(dout)

    # -- GEMM path --------------------------------------------------------

    def _forward_gemm(self, x, train):
        w = self.params["w"]
        k, p = self.k, self.k // 2
        b, ci, d, h, wd = x.shape
        co = w.shape[0]
        if k == 1:
            col = np.ascontiguousarray(x.transpose(0, 2, 3, 4, 1)).reshape(-1, ci)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
            sw = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
            col = np.ascontiguousarray(sw.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(-1, ci * k**3)
        w2 = w.reshape(co, -1)
        out = (col @ w2.T).reshape(b, d, h, wd, co)
        if train:
            self._cache = ("gemm", col, x.shape)
        return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))

    def _backward_gemm(self, dout):
        _, col, x_shape = self._cache
        w = self.params["w"]
        k, p = self.k, self.k // 2
        b, ci, d, h, wd = x_shape
        co = w.shape[0]
        dout_r = np.ascontiguousarray(dout.transpose(0, 2, 3, 4, 1)).reshape(-1, co)
        self.grads = {"w": (dout_r.T @ col).reshape(w.shape)}
        dcol = dout_r @ w.reshape(co, -1)
        if k == 1:
            dx = dcol.reshape(b, d, h, wd, ci).transpose(0, 4, 1, 2, 3)
            return np.ascontiguousarray(dx)
        dcol = dcol.reshape(b, d, h, wd, ci, k, k, k)
        dxp = np.zeros((b, ci, d + 2 * p, h + 2 * p, wd + 2 * p), dtype=dout.dtype)
        for dz in range(k):
            for dy in range(k):
                for dx_ in range(k):
                    dxp[:, :, dz : dz + d, dy : dy + h, dx_ : dx_ + wd] += dcol[
                        ..., dz, dy, dx_
                    ].transpose(0, 4, 1, 2, 3)
        return dxp[:, :, p : p + d, p : p + h, p : p + wd]

    # -- memory-lean path -------------------------------------------------

    def _forward_slices(self, x, train):
        w = self.params["w"]
        k, p = self.k, self.k // 2
        b, ci, d, h, wd = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p))) if p else x
        acc = np.zeros((b, d, h, wd, w.shape[0]), dtype=x.dtype)
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    patch = xp[:, :, dz : dz + d, dy : dy + h, dx : dx + wd]
                    acc += np.tensordot(patch, w[:, :, dz, dy, dx], axes=([1], [1]))
        if train:
            self._cache = ("slices", xp, x.shape)
        return np.ascontiguousarray(acc.transpose(0, 4, 1, 2, 3))

    def _backward_slices(self, dout):
        _, xp, x_shape = self._cache
        w = self.params["w"]
        k, p = self.k, self.k // 2
        b, ci, d, h, wd = x_shape
        dw = np.zeros_like(w)
        dxp = np.zeros_like(xp)
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    patch = xp[:, :, dz : dz + d, dy : dy + h, dx : dx + wd]
                    dw[:, :, dz, dy, dx] = np.tensordot(dout, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                    g = np.tensordot(dout, w[:, :, dz, dy, dx], axes=([1], [0]))
                    dxp[:, :, dz : dz + d, dy : dy + h, dx : dx + wd] += g.transpose(0, 4, 1, 2, 3)
        self.grads = {"w": dw}
        if p:
            return dxp[:, :, p : p + d, p : p + h, p : p + wd]
        return dxp


class BatchNorm3d(Layer):
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.params = {"gamma": np.ones(channels, dtype), "beta": np.zeros(channels, dtype)}
        self.grads = {}
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def forward(self, x, train=False, rng=None):
        gamma = self.params["gamma"].reshape(1, -1, 1, 1, 1)
        beta = self.params["beta"].reshape(1, -1, 1, 1, 1)
        if train:
            mean = x.mean(axis=(0, 2, 3, 4))
            var = x.var(axis=(0, 2, 3, 4))
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(1, -1, 1, 1, 1)) * ivar.reshape(1, -1, 1, 1, 1)
        out = gamma * xhat + beta
        if train:
            self._cache = (xhat, ivar.astype(x.dtype))
        return out

    def backward(self, dout):
        xhat, ivar = self._cache
        axes = (0, 2, 3, 4)
        n = dout.size // dout.shape[1]
        self.grads = {
            "gamma": np.sum(dout * xhat, axis=axes),
            "beta": np.sum(dout, axis=axes),
        }
        dxhat = dout * self.params["gamma"].reshape(1, -1, 1, 1, 1)
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return (ivar.reshape(1, -1, 1, 1, 1) / n) * (n * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        out = np.maximum(x, 0)
        if train:
            self._mask = x > 0
        return out

    def backward(self, dout):
        return dout * self._mask


class MaxPool2(Layer):
    """2x2x2 max pooling, stride 2; trailing odd voxels are dropped."""

    def forward(self, x, train=False, rng=None):
        b, c, d, h, w = x.shape
        d2, h2, w2 = d // 2, h // 2, w // 2
        xc = x[:, :, : 2 * d2, : 2 * h2, : 2 * w2]
        windows = (
            xc.reshape(b, c, d2, 2, h2, 2, w2, 2)
            .transpose(0, 1, 2, 4, 6, 3, 5, 7)
            .reshape(b, c, d2, h2, w2, 8)
        )
        idx = np.argmax(windows, axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (idx, x.shape)
        return out

    def backward(self, dout):
        idx, x_shape = self._cache
        b, c, d, h, w = x_shape
        d2, h2, w2 = d // 2, h // 2, w // 2
        dwin = np.zeros((b, c, d2, h2, w2, 8), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dxc = (
            dwin.reshape(b, c, d2, h2, w2, 2, 2, 2)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(b, c, 2 * d2, 2 * h2, 2 * w2)
        )
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, :, : 2 * d2, : 2 * h2, : 2 * w2] = dxc
        return dx


class GlobalAvgPool(Layer):
    """Mean over the spatial axes, (B, C, D, H, W) -> (B, C)."""

    def forward(self, x, train=False, rng=None):
        if train:
            self._shape = x.shape
        return x.mean(axis=(2, 3, 4))

    def backward(self, dout):
        b, c, d, h, w = self._shape
        return np.broadcast_to(dout[:, :, None, None, None], self._shape) / (d * h * w)


class Dropout(Layer):
    """Inverted dropout on the pooled feature vector; identity in eval mode."""

    def __init__(self, rate):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        mask = (rng.uniform(size=x.shape) >= self.rate) / (1.0 - self.rate)
        self._mask = mask.astype(x.dtype)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class Linear(Layer):
    """Fully connected head (equivalent to a 1x1x1 conv on pooled features)."""

    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        std = np.sqrt(1.0 / in_features)
        self.params = {
            "w": rng.normal(0.0, std, size=(out_features, in_features)).astype(dtype),
            "b": np.zeros(out_features, dtype=dtype),
        }
        self.grads = {}
        self.decay_keys = ("w",)

    def forward(self, x, train=False, rng=None):
        if train:
            self._x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dout):
        self.grads = {"w": dout.T @ self._x, "b": dout.sum(axis=0)}
        return dout @ self.params["w"]
