"""Corrupt a phantom with motion of increasing severity.

Builds a smooth 64-cubed phantom, samples trajectories at target scores
0.5 / 1.5 / 3.0 mm, splices the corresponding k-space segments, and
writes the corrupted volumes plus a plain-text summary of how image
error grows with the motion score.

Run:  python3 demos/01_simulate_artifacts.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from motionsim import MetricConfig, simulate_motion, write_nifti
from motionsim.phantom import make_phantom
from motionsim.sampler import SamplerConfig, sample_trajectory

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output/simulate")
out_dir.mkdir(parents=True, exist_ok=True)

phantom = make_phantom(64, seed=0)
write_nifti(phantom, out_dir / "clean.nii.gz")
print(f"clean phantom -> {out_dir / 'clean.nii.gz'}")

metric = MetricConfig(center=tuple(phantom.center_world()), brain_radius=80.0)
cfg = SamplerConfig()
rng = np.random.default_rng(42)

print(f"{'target':>8} {'achieved':>9} {'RMSE vs clean':>14}")
for target in (0.5, 1.5, 3.0):
    traj, achieved = sample_trajectory(target, cfg, rng, metric)
    corrupted = simulate_motion(phantom, traj)
    rmse = float(np.sqrt(np.mean((corrupted.data - phantom.data) ** 2)))
    path = out_dir / f"motion_{target:.1f}.nii.gz"
    write_nifti(corrupted, path)
    (out_dir / f"motion_{target:.1f}_trajectory.json").write_text(traj.to_json())
    print(f"{target:8.1f} {achieved:9.4f} {rmse:14.5f}   -> {path.name}")

print("\nImage error grows monotonically with the motion score: the")
print("later a movement event occurs, the larger the corrupted share of")
print("k-space and the stronger the ghosting.")
