"""Rejection sampling of motion trajectories with a target RMS score.

A target magnitude is drawn uniformly from [0.01, 4.0] mm; translation
and rotation constraints are drawn from U(0, max(target, 1)) and
U(0, max(2*target, 1)); trajectories are resampled until the achieved
trajectory score falls within the tolerance band of the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from motionsim.rigid import MetricConfig, MotionTrajectory, RigidTransform, TrajectoryEvent, trajectory_score


@dataclass(frozen=True)
class SamplerConfig:
    motion_low: float = 0.01
    motion_high: float = 4.0
    tolerance: float = 0.02
    max_attempts: int = 10_000
    n_events: int = 2

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.motion_low >= self.motion_high:
            raise ValueError("motion_low must be below motion_high")
        if self.max_attempts < 1 or self.n_events < 1:
            raise ValueError("max_attempts and n_events must be >= 1")


class SamplerExhaustedError(RuntimeError):
    """No trajectory within tolerance after max_attempts draws."""

    def __init__(self, target: float, attempts: int, best_score: float):
        super().__init__(
            f"no trajectory within tolerance of target {target:.4f} "
            f"after {attempts} attempts (best achieved {best_score:.4f})"
        )
        self.target = target
        self.attempts = attempts
        self.best_score = best_score


def sample_target(rng: np.random.Generator, cfg: SamplerConfig = SamplerConfig()) -> float:
    """Uniform target motion magnitude from the configured range."""
    return float(rng.uniform(cfg.motion_low, cfg.motion_high))


def _draw_trajectory(target: float, cfg: SamplerConfig, rng: np.random.Generator) -> MotionTrajectory:
    c_trans = rng.uniform(0.0, max(target, 1.0))
    c_rot = rng.uniform(0.0, max(2.0 * target, 1.0))
    times = np.unique(rng.uniform(0.0, 1.0, size=cfg.n_events))
    times = times[(times > 0.0) & (times < 1.0)]
    events = []
    for t in times:
        trans = rng.uniform(-c_trans, c_trans, size=3)
        rot = rng.uniform(-c_rot, c_rot, size=3)
        events.append(TrajectoryEvent(float(t), RigidTransform(tuple(rot), tuple(trans))))
    return MotionTrajectory(tuple(events))


def sample_trajectory(
    target: float,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    metric: MetricConfig = MetricConfig(),
):
    """Rejection-sample a trajectory whose score is within tolerance of target.

    Returns (trajectory, achieved_score); raises SamplerExhaustedError
    when max_attempts draws all miss the tolerance band.
    """
    if not cfg.motion_low <= target <= cfg.motion_high:
        raise ValueError(f"target {target} outside motion range [{cfg.motion_low}, {cfg.motion_high}]")
    best = None
    best_err = np.inf
    for attempt in range(1, cfg.max_attempts + 1):
        traj = _draw_trajectory(target, cfg, rng)
        score = trajectory_score(traj, metric)
        err = abs(score - target)
        if err <= cfg.tolerance:
            return traj, score
        if err < best_err:
            best, best_err = score, err
    raise SamplerExhaustedError(target, cfg.max_attempts, best if best is not None else np.nan)
