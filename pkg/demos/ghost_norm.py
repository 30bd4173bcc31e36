"""
Per-sample gradient norms without per-sample gradients
======================================================

A linear layer sees activations ``a`` of shape (B, T, d) and output gradients
``g`` of shape (B, T, p). Each sample's weight gradient is ``a_i^T g_i``.
"""

import numpy as np

from groupclip import clipped_weight_grad, ghost_norm
from groupclip.engine import per_sample_grads

rng = np.random.default_rng(0)
a = rng.standard_normal((4, 3, 64))   # 4 samples, 3 tokens, 64 inputs
g = rng.standard_normal((4, 3, 32))   # 32 outputs

# The squared norms come from two T x T Gram matrices per sample.
fast = ghost_norm(a, g)

# Building the (4, 64, 32) tensor gives the same numbers.
G = per_sample_grads(a, g)
slow = (G ** 2).sum(axis=(1, 2))
print("ghost norms     ", np.round(fast, 3))
print("materialized    ", np.round(slow, 3))

# Clipped and summed gradient: one matmul with the factors folded into g.
C = 1.0 / (np.sqrt(fast) + 0.01)
summed = clipped_weight_grad(a, g, C)
print("max deviation from explicit sum:",
      np.abs(summed - np.einsum("b,bdp->dp", C, G)).max())
