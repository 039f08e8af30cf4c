"""Smooth synthetic phantoms and toy corrupted datasets for tests/demos."""

from __future__ import annotations

import numpy as np

from motionsim.kspace import KSpaceConfig, simulate_motion
from motionsim.rigid import MetricConfig
from motionsim.sampler import SamplerConfig, sample_target, sample_trajectory
from motionsim.volume import Volume3D, minmax_scale
from motionsim.net.train import LabeledDataset


def make_phantom(dim: int = 32, seed: int = 0, n_blobs: int = 6) -> Volume3D:
    """Smooth blob phantom in [0, 1] with interior structure.

    A large central ellipsoid plus a few random internal Gaussian blobs,
    so motion ghosting produces visible, score-dependent artifacts.
    """
    rng = np.random.default_rng(seed)
    coords = np.stack(np.meshgrid(*[np.arange(dim)] * 3, indexing="ij")).astype(np.float64)
    center = (dim - 1) / 2.0
    r2 = sum(((c - center) / (0.38 * dim)) ** 2 for c in coords)
    data = np.exp(-(r2**2))
    for _ in range(n_blobs):
        pos = rng.uniform(0.25 * dim, 0.75 * dim, size=3)
        sigma = rng.uniform(0.04 * dim, 0.10 * dim)
        amp = rng.uniform(-0.5, 0.8)
        d2 = sum((c - p) ** 2 for c, p in zip(coords, pos))
        data += amp * np.exp(-d2 / (2 * sigma**2))
    return minmax_scale(Volume3D(data))


def make_toy_dataset(
    n_volumes: int,
    dim: int = 32,
    seed: int = 0,
    sampler_cfg: SamplerConfig = SamplerConfig(),
    phase_axis: int = 1,
) -> LabeledDataset:
    """Corrupted copies of one base phantom with uniform target scores.

    Volume i is generated from the independent stream (seed, i), so the
    dataset is reproducible regardless of generation order.
    """
    base = make_phantom(dim, seed=seed)
    metric = MetricConfig(center=tuple(base.center_world()), brain_radius=80.0)
    kcfg = KSpaceConfig(phase_axis)
    volumes = np.empty((n_volumes, dim, dim, dim), dtype=np.float32)
    scores = np.empty(n_volumes)
    for i in range(n_volumes):
        rng = np.random.default_rng([seed, i])
        target = sample_target(rng, sampler_cfg)
        traj, achieved = sample_trajectory(target, sampler_cfg, rng, metric)
        corrupted = minmax_scale(simulate_motion(base, traj, kcfg))
        volumes[i] = corrupted.data
        scores[i] = achieved
    return LabeledDataset(volumes, scores)
