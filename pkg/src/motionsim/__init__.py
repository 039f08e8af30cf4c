"""Synthetic motion artifacts for 3D brain MRI.

Simulates rigid head motion in k-space, quantifies it with the RMS
deviation metric, and provides soft-label regression machinery plus the
statistical tools used to study motion-related bias in cortical
thickness measurements.
"""

from motionsim.volume import Volume3D, read_nifti, write_nifti
from motionsim.rigid import (
    MetricConfig,
    MotionTrajectory,
    RigidTransform,
    TrajectoryEvent,
    resample_rigid,
    rms_deviation,
    trajectory_score,
)
from motionsim.kspace import KSpaceConfig, simulate_motion
from motionsim.sampler import SamplerConfig, SamplerExhaustedError, sample_target, sample_trajectory

__version__ = "0.1.0"

__all__ = [
    "Volume3D",
    "read_nifti",
    "write_nifti",
    "RigidTransform",
    "TrajectoryEvent",
    "MotionTrajectory",
    "MetricConfig",
    "rms_deviation",
    "trajectory_score",
    "resample_rigid",
    "KSpaceConfig",
    "simulate_motion",
    "SamplerConfig",
    "SamplerExhaustedError",
    "sample_target",
    "sample_trajectory",
]
