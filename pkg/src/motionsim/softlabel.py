"""Soft-label targets for distributional motion regression.

The motion range [-0.5, 4.5] is discretized into 50 bins; a score is
encoded as the normal probability mass falling in each bin, the network
output is decoded back to a scalar by expectation over bin centers, and
KL / Jensen-Shannon divergences compare label distributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_CLAMP = 1e-12


@dataclass(frozen=True)
class BinGrid:
    low: float = -0.5
    high: float = 4.5
    n_bins: int = 50

    def __post_init__(self):
        if self.low >= self.high:
            raise ValueError("low must be below high")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")

    @property
    def width(self) -> float:
        return (self.high - self.low) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.low, self.high, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.low + (np.arange(self.n_bins) + 0.5) * self.width


def encode(score: float, sigma: float, grid: BinGrid = BinGrid()) -> np.ndarray:
    """Normal CDF mass per bin, renormalized after truncation to the grid."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    cdf = ndtr((grid.edges - score) / sigma)
    probs = np.diff(cdf)
    total = probs.sum()
    if total <= 0:
        # score far outside the grid: all mass in the nearest edge bin
        probs = np.zeros(grid.n_bins)
        probs[0 if score < grid.low else -1] = 1.0
        return probs
    return probs / total


def decode(probs: np.ndarray, grid: BinGrid = BinGrid()) -> float:
    """Expected motion score: sum of bin probabilities times bin centers."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(probs @ grid.centers)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; zero q entries are clamped to 1e-12, 0 ln 0 is 0.

    Only exactly-zero q entries are clamped so that KL(p, p) is exactly 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q > 0, q, _CLAMP)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence, symmetric and bounded by ln 2."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


def score_histogram(scores, grid: BinGrid = BinGrid()) -> np.ndarray:
    """Normalized histogram of scores on the grid; out-of-range clips to edge bins."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("scores must be nonempty")
    idx = np.floor((scores - grid.low) / grid.width).astype(int)
    idx = np.clip(idx, 0, grid.n_bins - 1)
    counts = np.bincount(idx, minlength=grid.n_bins).astype(np.float64)
    return counts / counts.sum()
