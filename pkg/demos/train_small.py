"""
Training with group-wise clipping
=================================

A small teacher-student regression trained privately with three groupings
from the same initial weights and noise stream.
"""

from groupclip import ClipConfig, Network, RngState, build_grouping, train
from groupclip.tasks import SyntheticTask

task = SyntheticTask("two-layer-teacher", dim=8, n=256, noise=0.1, depth=6, width=4)
data = task.generate()
arch = task.arch()

for style, args in [("all-layer", None), ("uniform", [3]), ("layer-wise", None)]:
    plan = build_grouping(arch, style, args)
    net = Network.init(arch, RngState(0))
    traj = train(net, data, plan, ClipConfig("auto"), 1.0, "sgd", lr=0.02,
                 rng=RngState(1), batch_size=32, steps=300, grad_norm="full")
    print(f"{style:10s} M={plan.M}: loss {traj.losses[0]:.4f} -> {traj.losses[-1]:.4f}, "
          f"min grad norm {traj.grad_norms.min():.4f}, peak {traj.records[-1].max_peak_bytes} B")
