"""
Per-layer thresholds cannot imitate all-layer clipping
======================================================

Two samples, two one-dimensional "layers". Sample j is below the threshold
and passes unchanged; sample i is above it and must shrink. Any per-layer
threshold that leaves j's first coordinate alone is too large to shrink i's.
"""

import numpy as np

from groupclip import counterexample_verify

gi, gj, R = np.array([3.0, 4.0]), np.array([3.5, 0.0]), 4.0
grid = [(a, b) for a in np.linspace(0.1, 8, 40) for b in np.linspace(0.1, 8, 40)]
rep = counterexample_verify(gi, gj, R, "abadi", grid=grid)
print(rep.verdict, "-", rep.reason)
for line in rep.trace:
    print("  ", line)
print(f"grid search: {rep.grid_matches} of {rep.grid_size} threshold pairs match")

# With AUTO the question reduces to whether a norm ratio agrees across samples.
auto = counterexample_verify(gi, gj, R, "auto")
print("auto:", auto.verdict, "-", auto.reason)
