"""Soft-label encoding, decoding and the divergences used in training.

Encodes a few motion scores as per-bin normal masses, shows the
decode-by-expectation round trip, and prints the KL / Jensen-Shannon
divergences that serve as training loss and model-selection criterion.

Run:  python3 demos/03_soft_labels.py
"""

import numpy as np

from motionsim.softlabel import BinGrid, decode, encode, js_divergence, kl_divergence

grid = BinGrid()
print(f"grid: [{grid.low}, {grid.high}] in {grid.n_bins} bins of width {grid.width:.2f}\n")

print("score  decoded   |bias|    top-3 bins")
for score in (0.05, 0.8, 2.0, 3.95):
    probs = encode(score, sigma=0.1, grid=grid)
    decoded = decode(probs, grid)
    top = np.argsort(probs)[::-1][:3]
    cells = ", ".join(f"{grid.centers[i]:.2f}:{probs[i]:.3f}" for i in sorted(top))
    print(f"{score:5.2f} {decoded:8.4f} {abs(decoded - score):9.2e}   {cells}")

print("\nA wider sigma spreads mass over more bins (decoding stays unbiased):")
for sigma in (0.1, 0.3, 1.0):
    probs = encode(2.0, sigma, grid)
    eff = float(np.exp(-(probs[probs > 0] * np.log(probs[probs > 0])).sum()))
    print(f"  sigma={sigma:.1f}: decoded {decode(probs, grid):.4f}, "
          f"effective bins {eff:.1f}")

p = encode(1.0, 0.1, grid)
q = encode(1.3, 0.1, grid)
print("\ndivergences between labels at scores 1.0 and 1.3 (sigma 0.1):")
print(f"  KL(p||q) = {kl_divergence(p, q):.4f}   KL(q||p) = {kl_divergence(q, p):.4f}")
print(f"  JS(p,q)  = {js_divergence(p, q):.4f}  (symmetric, <= ln 2 = {np.log(2):.4f})")
print("\nKL(target||prediction) is the training loss; JS between the")
print("validation score histogram and the decoded-prediction histogram")
print("selects the checkpoint.")
