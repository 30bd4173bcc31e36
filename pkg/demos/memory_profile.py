"""
Where the memory peak sits
==========================

The book-keeping schedule keeps every layer input from the forward pass and
frees a group's inputs and output gradients once the group's clip factors
are known. Finer groups free memory sooner.
"""

from groupclip import ArchitectureSpec, analytic_peaks, boundary_sweep, build_grouping, plan_search

# Twelve identical layers: the peak falls as the number of groups grows.
uniform = ArchitectureSpec.from_dims([(16, 16)] * 12, seq_len=4)
for M in (1, 2, 3, 4, 6, 12):
    plan = build_grouping(uniform, "uniform", [M]) if M > 1 else build_grouping(uniform,
                                                                                "all-layer")
    rep = analytic_peaks(uniform, plan, B=8)
    print(f"M={M:2d}  max peak {rep.max_peak:6d} floats  (group {rep.argmax})")

# Wide-narrow-wide layers: with two groups the best boundary is not at an end.
widths = [48, 32, 16, 8, 8, 16, 32, 48, 4]
hourglass = ArchitectureSpec.from_dims(list(zip(widths[:-1], widths[1:])), seq_len=2)
for k, rep in boundary_sweep(hourglass, B=4):
    print(f"boundary {k}: {rep.max_peak}")
best, rep = plan_search(hourglass, B=4, mode="two-group-sweep")[0]
print("best two-group plan", best.groups, "peak", rep.max_peak)
