"""Detect a motion-induced measurement bias with the GLM sweep.

Builds a synthetic cohort whose per-structure thickness measurements
shrink with motion, fits thickness ~ age + sex + motion per structure,
applies Benjamini-Hochberg FDR across structures, and contrasts the
result with a motion-free null cohort. Also shows ICC(2,k) agreement
between simulated repeated measurements.

Run:  python3 demos/04_bias_analysis.py
"""

import numpy as np
import pandas as pd

from motionsim.stats import analyze_dataset, icc_2k


def cohort(seed, motion_effect, n=200, n_structures=10):
    rng = np.random.default_rng(seed)
    age = rng.uniform(20, 80, n)
    sex = rng.integers(0, 2, n).astype(float)
    motion = rng.uniform(0.01, 4.0, n)
    cols = {"age": age, "sex": sex, "motion": motion}
    for i in range(n_structures):
        cols[f"structure_{i:02d}"] = (
            3.0 - 0.012 * age + 0.03 * sex + motion_effect * motion + rng.normal(0, 0.12, n)
        )
    return pd.DataFrame(cols)


print("=== cohort with a real motion bias (true coefficient -0.148) ===")
report = analyze_dataset(cohort(0, motion_effect=-0.148))
print(report[["structure", "motion_coef", "p_raw", "p_fdr", "significant"]]
      .to_string(index=False, float_format=lambda v: f"{v:.3e}"))
print(f"significant structures: {report.attrs['percent_significant']:.0f}%")
print(f"mean fitted coefficient: {report['motion_coef'].mean():+.4f} (truth -0.1480)\n")

print("=== motion-free null cohort ===")
null = analyze_dataset(cohort(1, motion_effect=0.0))
print(f"significant structures after FDR: {null.attrs['percent_significant']:.0f}% "
      "(false positives controlled)\n")

print("=== rater agreement: ICC(2,k) on repeated measurements ===")
rng = np.random.default_rng(2)
truth = rng.normal(3.0, 0.4, 30)
for noise in (0.05, 0.2, 0.6):
    ratings = truth[:, None] + rng.normal(0, noise, (30, 3))
    res = icc_2k(ratings)
    lo, hi = res.ci95
    print(f"  measurement noise {noise:.2f}: ICC(2,3) = {res.icc:.3f} "
          f"[{lo:.3f}, {hi:.3f}], p = {res.p_value:.2e}")
