"""Rigid 6-DOF head poses, motion trajectories and the RMS deviation metric.

The metric summarises the disagreement between two head poses as the RMS
displacement of points inside a sphere of radius ``brain_radius``:

    M = T2 T1^-1 - I,   M = [[A, t], [0, 0]]
    E = sqrt( (1/5) R^2 Trace(A'A) + |t + A x_c|^2 )

A trajectory is scored as the mean pairwise deviation over the pose
sequence (identity, T1, ..., TN).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from motionsim.volume import Volume3D


@dataclass(frozen=True)
class RigidTransform:
    """Euler rotation (degrees, applied X then Y then Z) and translation (mm)."""

    rotation_deg: tuple = (0.0, 0.0, 0.0)
    translation_mm: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation_deg", tuple(float(r) for r in self.rotation_deg))
        object.__setattr__(self, "translation_mm", tuple(float(t) for t in self.translation_mm))
        if len(self.rotation_deg) != 3 or len(self.translation_mm) != 3:
            raise ValueError("rotation and translation must have 3 components")

    def to_matrix(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        """Homogeneous 4x4 world-coordinate matrix, rotating about ``center``."""
        rx, ry, rz = np.deg2rad(self.rotation_deg)
        cx, sx = np.cos(rx), np.sin(rx)
        cy, sy = np.cos(ry), np.sin(ry)
        cz, sz = np.cos(rz), np.sin(rz)
        mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        rot = mz @ my @ mx
        center = np.asarray(center, dtype=np.float64)
        mat = np.eye(4)
        mat[:3, :3] = rot
        mat[:3, 3] = np.asarray(self.translation_mm) + center - rot @ center
        return mat


@dataclass(frozen=True)
class TrajectoryEvent:
    time: float
    transform: RigidTransform

    def __post_init__(self):
        if not 0.0 < self.time < 1.0:
            raise ValueError(f"event time must lie in (0, 1), got {self.time}")


@dataclass(frozen=True)
class MotionTrajectory:
    """Timed pose sequence over one acquisition; empty means no motion."""

    events: tuple = ()

    def __post_init__(self):
        events = tuple(self.events)
        times = [e.time for e in events]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)

    def to_json(self) -> str:
        return json.dumps(
            {
                "events": [
                    {
                        "time": e.time,
                        "rot_deg": list(e.transform.rotation_deg),
                        "trans_mm": list(e.transform.translation_mm),
                    }
                    for e in self.events
                ]
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MotionTrajectory":
        doc = json.loads(text)
        return cls(
            tuple(
                TrajectoryEvent(
                    float(e["time"]),
                    RigidTransform(tuple(e["rot_deg"]), tuple(e["trans_mm"])),
                )
                for e in doc["events"]
            )
        )


@dataclass(frozen=True)
class MetricConfig:
    """Sphere center (world mm) and brain radius for the RMS deviation."""

    center: tuple = (0.0, 0.0, 0.0)
    brain_radius: float = 80.0

    def __post_init__(self):
        if self.brain_radius <= 0:
            raise ValueError("brain_radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


def rms_from_matrices(m1: np.ndarray, m2: np.ndarray, cfg: MetricConfig) -> float:
    """RMS deviation between two pose matrices (earlier pose first)."""
    m = m2 @ np.linalg.inv(m1) - np.eye(4)
    a = m[:3, :3]
    t = m[:3, 3]
    xc = np.asarray(cfg.center)
    disp = t + a @ xc
    val = cfg.brain_radius**2 / 5.0 * np.trace(a.T @ a) + disp @ disp
    return float(np.sqrt(max(val, 0.0)))


def rms_deviation(t1: RigidTransform, t2: RigidTransform, cfg: MetricConfig) -> float:
    """RMS deviation (mm) between two poses, rotations taken about cfg.center."""
    return rms_from_matrices(t1.to_matrix(cfg.center), t2.to_matrix(cfg.center), cfg)


def trajectory_score(traj: MotionTrajectory, cfg: MetricConfig) -> float:
    """Mean pairwise RMS deviation over (identity, T1, ..., TN); 0 if empty."""
    if len(traj) == 0:
        return 0.0
    mats = [np.eye(4)] + [e.transform.to_matrix(cfg.center) for e in traj.events]
    scores = [rms_from_matrices(a, b, cfg) for a, b in zip(mats, mats[1:])]
    return float(np.mean(scores))


def resample_rigid(v: Volume3D, t: RigidTransform) -> Volume3D:
    """Apply a rigid transform to the volume by inverse trilinear resampling.

    The rotation is about the volume's geometric center in world
    coordinates; out-of-bounds samples read zero.
    """
    world = t.to_matrix(v.center_world())
    vox2world = v.affine
    # source voxel = W^-1 T^-1 W (output voxel)
    m = np.linalg.inv(vox2world) @ np.linalg.inv(world) @ vox2world
    out = ndimage.affine_transform(
        v.data.astype(np.float64),
        m[:3, :3],
        offset=m[:3, 3],
        output_shape=v.dims,
        order=1,
        mode="constant",
        cval=0.0,
    )
    return v.with_data(out)
