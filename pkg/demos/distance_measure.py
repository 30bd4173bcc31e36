"""
The distance measure and its inverse
====================================

For AUTO clipping with noisy per-sample gradients, the expected alignment of
a clipped gradient with the true one is bounded below by half a measure
``M(x)`` of the gradient norm. ``M`` is increasing and bounded, and has a
closed-form inverse.
"""

import numpy as np

from groupclip import (RngState, TheoryParams, distance_measure, distance_measure_inverse,
                       lemma_lower_bound_check)
from groupclip.theory import inverse_slope_at_zero

p = TheoryParams(xi=1.0, gamma=0.05, r=2.0, M=4)
xs = np.array([0.0, 0.1, 1.0, 10.0, 100.0])
ys = distance_measure(xs, p)
print("M(x)      ", np.round(ys, 6), " supremum", p.sup)
print("inverse   ", distance_measure_inverse(ys, p))

# Near zero the inverse is linear.
for y in (1e-4, 1e-6):
    print(f"inv({y:g})/{y:g} = {distance_measure_inverse(y, p) / y:.6f}",
          f"(limit {inverse_slope_at_zero(p):.6f})")

# A Monte Carlo look at the bound for one gradient.
chk = lemma_lower_bound_check([0.8, -0.3, 0.5], p, num_samples=200_000, rng=RngState(0))
print(f"alignment {chk.lhs:.5f} +- {chk.std_error:.1e} >= bound {chk.rhs:.5f}: {chk.passed}")
