"""K-space motion artifact simulator.

The spectra of rigidly transformed copies of a volume are spliced along
the phase-encode axis according to the event times, and the composite
k-space is reconstructed by inverse FFT and modulus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from motionsim.rigid import MotionTrajectory, resample_rigid
from motionsim.volume import Volume3D


@dataclass(frozen=True)
class KSpaceConfig:
    """Phase-encode axis along which k-space is partitioned by time."""

    phase_axis: int = 1

    def __post_init__(self):
        if self.phase_axis not in (0, 1, 2):
            raise ValueError(f"phase_axis must be 0, 1 or 2, got {self.phase_axis}")


def fft3(x: np.ndarray) -> np.ndarray:
    """Forward 3D FFT, unscaled (numpy convention)."""
    return np.fft.fftn(x)


def ifft3(k: np.ndarray) -> np.ndarray:
    """Inverse 3D FFT, scaled by 1/N."""
    return np.fft.ifftn(k)


def segment_bounds(times, length: int):
    """Contiguous index segments [start, stop) per source spectrum.

    Segment 0 (the untransformed volume) covers [0, floor(t1*L)); the
    segment for event i runs to the next event boundary, the last one to
    L. Coincident boundaries yield empty segments.
    """
    cuts = [0] + [int(np.floor(t * length)) for t in times] + [length]
    return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]


def simulate_motion(v: Volume3D, traj: MotionTrajectory, cfg: KSpaceConfig = KSpaceConfig()) -> Volume3D:
    """Corrupt a volume with the motion described by a trajectory.

    Deterministic for fixed inputs; FFTs run in float64 internally and
    the reconstruction is the complex modulus, returned as float32.
    """
    if len(traj) == 0:
        return v.with_data(v.data.copy())
    length = v.dims[cfg.phase_axis]
    spectra = [fft3(v.data.astype(np.float64))]
    for event in traj.events:
        moved = resample_rigid(v, event.transform)
        spectra.append(fft3(moved.data.astype(np.float64)))

    composite = np.zeros_like(spectra[0])
    idx = [slice(None)] * 3
    for spec, (start, stop) in zip(spectra, segment_bounds([e.time for e in traj.events], length)):
        if start >= stop:
            continue
        idx[cfg.phase_axis] = slice(start, stop)
        composite[tuple(idx)] = spec[tuple(idx)]

    recon = np.abs(ifft3(composite))
    return v.with_data(recon.astype(np.float32))
