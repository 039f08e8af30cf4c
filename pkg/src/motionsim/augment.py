"""Training-time and pre-generation augmentation.

Two-stage training pipeline: a base stage (sagittal flip with p=0.5,
then Gaussian noise or smoothing with p=0.8) and a contrast stage that
always applies exactly one of gamma adjustment or histogram shift. The
anatomical augmentations (flip, elastic deformation) are applied before
motion generation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from motionsim.volume import Volume3D, flip_sagittal, minmax_scale


@dataclass(frozen=True)
class AugmentPolicy:
    p_flip: float = 0.5
    p_base: float = 0.8
    noise_std_range: tuple = (0.005, 0.05)
    blur_sigma_range: tuple = (0.3, 1.2)  # mm
    log_gamma_range: tuple = (-0.3, 0.3)
    hist_control_points: int = 5
    elastic_grid: int = 7
    elastic_max_disp: float = 4.0  # mm

    def __post_init__(self):
        if not (0 <= self.p_flip <= 1 and 0 <= self.p_base <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        for rng in (self.noise_std_range, self.blur_sigma_range, self.log_gamma_range):
            if rng[0] > rng[1]:
                raise ValueError(f"range must be ordered, got {rng}")
        if self.hist_control_points < 3:
            raise ValueError("hist_control_points must be >= 3")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "AugmentPolicy":
        doc = json.loads(text)
        for key in ("noise_std_range", "blur_sigma_range", "log_gamma_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def add_gaussian_noise(v: Volume3D, std: float, rng: np.random.Generator) -> Volume3D:
    """Add iid N(0, std^2) noise; std=0 returns the volume unchanged."""
    if std < 0:
        raise ValueError("std must be >= 0")
    if std == 0:
        return v
    noise = rng.normal(0.0, std, size=v.dims).astype(np.float32)
    return v.with_data(v.data + noise)


def gaussian_blur(v: Volume3D, sigma_mm) -> Volume3D:
    """Separable Gaussian smoothing, sigma in mm, kernel truncated at 4 sigma."""
    sigma_mm = np.broadcast_to(np.asarray(sigma_mm, dtype=np.float64), (3,))
    if np.any(sigma_mm < 0):
        raise ValueError("sigma must be >= 0 per axis")
    sigma_vox = sigma_mm / np.asarray(v.spacing)
    out = ndimage.gaussian_filter(v.data.astype(np.float64), sigma_vox, truncate=4.0, mode="nearest")
    return v.with_data(out)


def gamma_adjust(v: Volume3D, log_gamma: float) -> Volume3D:
    """Voxelwise power-law contrast change on a [0, 1]-scaled volume."""
    lo, hi = float(v.data.min()), float(v.data.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise ValueError(f"gamma_adjust requires a [0,1]-scaled volume, got range [{lo}, {hi}]")
    clipped = np.clip(v.data, 0.0, 1.0)
    return v.with_data(np.power(clipped, np.exp(log_gamma)))


def histogram_shift(v: Volume3D, num_control_points: int, rng: np.random.Generator) -> Volume3D:
    """Random monotone piecewise-linear intensity remap with pinned endpoints."""
    if num_control_points < 3:
        raise ValueError("num_control_points must be >= 3")
    xs = np.linspace(0.0, 1.0, num_control_points)
    ys = np.sort(rng.uniform(0.0, 1.0, size=num_control_points))
    ys[0], ys[-1] = 0.0, 1.0
    out = np.interp(np.clip(v.data, 0.0, 1.0), xs, ys)
    return v.with_data(out)


def elastic_deform(v: Volume3D, policy: AugmentPolicy, rng: np.random.Generator) -> Volume3D:
    """Smooth random warp from a coarse control grid of displacements.

    Control displacements are uniform in +-elastic_max_disp mm per axis,
    trilinearly upsampled to voxel resolution, and used as an inverse
    warp with zero fill.
    """
    g = policy.elastic_grid
    disp_mm = rng.uniform(-policy.elastic_max_disp, policy.elastic_max_disp, size=(3, g, g, g))
    if policy.elastic_max_disp == 0:
        return v.with_data(v.data.copy())

    dims = v.dims
    coords = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    # voxel position in control-grid units
    grid_coords = [c / max(n - 1, 1) * (g - 1) for c, n in zip(coords, dims)]
    sample = np.empty((3,) + dims)
    for axis in range(3):
        field_vox = disp_mm[axis] / v.spacing[axis]
        up = ndimage.map_coordinates(field_vox, grid_coords, order=1, mode="nearest")
        sample[axis] = coords[axis] + up
    out = ndimage.map_coordinates(v.data.astype(np.float64), sample, order=1, mode="constant", cval=0.0)
    return v.with_data(out)


def apply_training_pipeline(
    v: Volume3D,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    record: dict | None = None,
) -> Volume3D:
    """Run the two-stage augmentation and rescale to [0, 1].

    ``record``, when given, collects which branches fired (used by the
    branch-probability tests).
    """
    out = v
    flipped = rng.uniform() < policy.p_flip
    if flipped:
        out = flip_sagittal(out)

    base_op = None
    if rng.uniform() < policy.p_base:
        if rng.uniform() < 0.5:
            base_op = "noise"
            std = rng.uniform(*policy.noise_std_range)
            out = add_gaussian_noise(out, std, rng)
        else:
            base_op = "blur"
            sigma = rng.uniform(*policy.blur_sigma_range)
            out = gaussian_blur(out, (sigma, sigma, sigma))

    out = minmax_scale(out)
    if rng.uniform() < 0.5:
        contrast_op = "gamma"
        out = gamma_adjust(out, rng.uniform(*policy.log_gamma_range))
    else:
        contrast_op = "hist_shift"
        out = histogram_shift(out, policy.hist_control_points, rng)

    out = minmax_scale(out)
    if record is not None:
        record.update(flipped=flipped, base_op=base_op, contrast_op=contrast_op)
    return out
