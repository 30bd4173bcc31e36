"""Self-check suites run by ``groupclip verify``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clipping import ClipConfig, GroupingPlan
from .engine import (ACTIVATIONS, ArchitectureSpec, Network, clipped_weight_grad, ghost_norm,
                     per_sample_grads)
from .memory import analytic_peaks
from .schedule import FLOAT_BYTES, dp_step, naive_dp_step
from .tensor import RngState
from .tasks import SyntheticTask, quadratic_smoothness
from .theory import (TheoryParams, convergence_experiment, counterexample_verify,
                     distance_measure, distance_measure_inverse, inverse_slope_at_zero,
                     lemma_lower_bound_check, nondecreasing_within, nondp_rate_experiment)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: str
    lines: list[str] = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"name": self.name, "passed": self.passed, "summary": self.summary,
               "lines": self.lines}
        if self.data:
            doc["data"] = self.data
        return doc


def random_arch(gen: np.random.Generator, num_layers: int, seq_len: int | None = None,
                max_dim: int = 8, loss: str | None = None) -> ArchitectureSpec:
    T = seq_len if seq_len is not None else int(gen.integers(1, 5))
    widths = gen.integers(1, max_dim + 1, size=num_layers + 1)
    acts = [str(gen.choice(ACTIVATIONS)) for _ in range(num_layers)]
    loss = loss or str(gen.choice(["mean-squared-error", "softmax-cross-entropy",
                                   "per-sample-sum"]))
    if loss == "softmax-cross-entropy":
        widths[-1] = max(widths[-1], 2)
    dims = list(zip(widths[:-1].tolist(), widths[1:].tolist()))
    return ArchitectureSpec.from_dims(dims, seq_len=T, activation=acts, loss=loss)


def random_batch(gen: np.random.Generator, arch: ArchitectureSpec, B: int):
    T, d, p = arch.seq_len, arch.layers[0].in_dim, arch.layers[-1].out_dim
    X = gen.standard_normal((B, T, d))
    if arch.loss == "softmax-cross-entropy":
        Y = gen.integers(0, p, size=(B, T))
    elif arch.loss == "mean-squared-error":
        Y = gen.standard_normal((B, T, p))
    else:
        Y = None
    return X, Y


def random_contiguous_plan(gen: np.random.Generator, L: int) -> GroupingPlan:
    cuts = [k for k in range(1, L) if gen.random() < 0.5]
    edges = [0] + cuts + [L]
    return GroupingPlan(tuple(tuple(range(a, b)) for a, b in zip(edges, edges[1:])), "explicit")


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.abs(b).max(initial=0.0)), 1e-300)
    return float(np.abs(a - b).max(initial=0.0)) / scale


def suite_ghost_norm(trials: int = 200, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        B, T = int(gen.integers(1, 9)), int(gen.integers(1, 5))
        d, p = int(gen.integers(1, 9)), int(gen.integers(1, 9))
        a = gen.standard_normal((B, T, d))
        g = gen.standard_normal((B, T, p))
        explicit = per_sample_grads(a, g)
        worst = max(worst, _rel(ghost_norm(a, g), np.einsum("bdp,bdp->b", explicit, explicit)))
    ok = worst <= tol
    return SuiteResult("ghost-norm", ok, f"{trials} instances, worst relative error {worst:.2e}")


def suite_clipped_sum(trials: int = 200, seed: int = 1, tol: float = 1e-10) -> SuiteResult:
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        B, T = int(gen.integers(1, 9)), int(gen.integers(1, 5))
        d, p = int(gen.integers(1, 9)), int(gen.integers(1, 9))
        a = gen.standard_normal((B, T, d))
        g = gen.standard_normal((B, T, p))
        c = gen.random(B)
        ref = np.einsum("b,bdp->dp", c, per_sample_grads(a, g))
        worst = max(worst, _rel(clipped_weight_grad(a, g, c), ref))
    ok = worst <= tol
    return SuiteResult("clipped-sum", ok, f"{trials} instances, worst relative error {worst:.2e}")


def suite_schedule(trials: int = 50, seed: int = 2, tol: float = 1e-10) -> SuiteResult:
    gen = np.random.default_rng(seed)
    worst = 0.0
    for k in range(trials):
        arch = random_arch(gen, int(gen.integers(1, 7)))
        plan = random_contiguous_plan(gen, arch.num_layers)
        cfg = ClipConfig(str(gen.choice(["auto", "abadi"])))
        net = Network.init(arch, RngState(k))
        X, Y = random_batch(gen, arch, int(gen.integers(1, 9)))
        sigma = float(gen.choice([0.0, 0.5, 2.0]))
        bk = dp_step(net, X, Y, plan, cfg, sigma, RngState(1000 + k)).private_grad
        ref = naive_dp_step(net, X, Y, plan, cfg, sigma, RngState(1000 + k))
        worst = max(worst, max(_rel(x, y) for x, y in zip(bk.grads, ref.grads)))
    ok = worst <= tol
    return SuiteResult("schedule", ok,
                       f"{trials} (arch, plan, seed) triples, worst relative error {worst:.2e}")


def suite_fact1(trials: int = 50, seed: int = 3, layers: int | None = None) -> SuiteResult:
    gen = np.random.default_rng(seed)
    agree = 0
    lines = []
    for k in range(trials):
        L = layers if layers is not None else int(gen.integers(3, 11))
        arch = random_arch(gen, L, max_dim=16)
        plan = random_contiguous_plan(gen, L)
        B = int(gen.integers(1, 9))
        net = Network.init(arch, RngState(k))
        X, Y = random_batch(gen, arch, B)
        res = dp_step(net, X, Y, plan, ClipConfig(), 0.0, RngState(k))
        ledger = [b // FLOAT_BYTES for b in res.per_group_peaks]
        analytic = list(analytic_peaks(arch, plan, B).per_group_peaks)
        maxima = len(res.ledger.local_maxima())
        ok = ledger == analytic and maxima == plan.M and not res.ledger.live
        agree += ok
        if not ok:
            lines.append(f"trial {k}: ledger {ledger} analytic {analytic} maxima {maxima}")
    return SuiteResult("fact1", agree == trials, f"{agree}/{trials} agreements", lines)


def random_theory_params(gen: np.random.Generator) -> TheoryParams:
    return TheoryParams(xi=float(gen.uniform(0.1, 5.0)), gamma=float(gen.uniform(1e-3, 1.0)),
                        r=float(gen.uniform(1.05, 5.0)), M=int(gen.integers(1, 17)))


def asymptotic_theory_params(gen: np.random.Generator) -> TheoryParams:
    """Parameters for which ``y <= 1e-6`` lies in the linear regime of the inverse.

    The relative gap between ``inv(y)/y`` and its limit is first order in
    ``y / sup`` and in ``inv(y) / shift``, so both must stay below about 1e-3.
    """
    return TheoryParams(xi=float(gen.uniform(0.5, 5.0)), gamma=float(gen.uniform(0.01, 0.1)),
                        r=float(gen.uniform(1.05, 4.0)), M=int(gen.integers(1, 17)))


def suite_roundtrip(trials: int = 1000, seed: int = 4) -> SuiteResult:
    gen = np.random.default_rng(seed)
    worst_rt = 0.0
    worst_slope = 0.0
    monotone = True
    for _ in range(trials):
        p = random_theory_params(gen)
        x = float(gen.uniform(0, 10))
        worst_rt = max(worst_rt, abs(distance_measure_inverse(distance_measure(x, p), p) - x)
                       / (1 + x))
        xs = np.sort(gen.uniform(0, 10, size=8))
        monotone &= bool(np.all(np.diff(distance_measure(xs, p)) > 0))
        q = asymptotic_theory_params(gen)
        for y in (1e-6, 1e-7):
            slope = distance_measure_inverse(y, q) / y
            worst_slope = max(worst_slope, abs(slope / inverse_slope_at_zero(q) - 1))
    ok = worst_rt < 1e-8 and worst_slope < 1e-3 and monotone
    return SuiteResult("roundtrip", ok,
                       f"{trials} parameterizations, worst round-trip {worst_rt:.2e}, "
                       f"worst slope error {worst_slope:.2e}, monotone={monotone}")


def random_separating_pair(gen: np.random.Generator, block: int = 2):
    """Two-layer gradients with ||g_i^(1)|| < ||g_j^(1)|| and ||g_i|| > R > ||g_j||."""
    while True:
        gi = gen.standard_normal(2 * block) * gen.uniform(0.5, 3.0)
        gj = gen.standard_normal(2 * block) * gen.uniform(0.5, 3.0)
        ni1, nj1 = np.linalg.norm(gi[:block]), np.linalg.norm(gj[:block])
        ni, nj = np.linalg.norm(gi), np.linalg.norm(gj)
        if ni1 < nj1 and ni > nj * 1.01:
            R = float(gen.uniform(nj, ni))
            if ni > R > nj:
                return gi, gj, R


def suite_counterexample(trials: int = 100, seed: int = 5) -> SuiteResult:
    lines = []
    gi, gj, R = np.array([3.0, 4.0]), np.array([3.5, 0.0]), 4.0
    grid = [(a, b) for a in np.linspace(0.1, 8, 80) for b in np.linspace(0.1, 8, 80)]
    rep = counterexample_verify(gi, gj, R, "abadi", grid=grid)
    lines.append(f"g_i={gi.tolist()} g_j={gj.tolist()} R={R}: {rep.verdict} "
                 f"({rep.grid_matches}/{rep.grid_size} grid points match)")
    lines.extend("  " + t for t in rep.trace)
    ok = not rep.representable and rep.grid_matches == 0
    gen = np.random.default_rng(seed)
    abadi_hits = auto_hits = 0
    for _ in range(trials):
        gi, gj, R = random_separating_pair(gen)
        abadi_hits += not counterexample_verify(gi, gj, R, "abadi").representable
        auto_hits += not counterexample_verify(gi, gj, R, "auto").representable
    lines.append(f"random pairs: abadi not representable {abadi_hits}/{trials}, "
                 f"auto not representable {auto_hits}/{trials}")
    ok &= abadi_hits == trials and auto_hits == trials
    return SuiteResult("counterexample", ok, lines[0], lines)


def suite_lemma(trials: int = 20, samples: int = 100_000, seed: int = 6) -> SuiteResult:
    gen = np.random.default_rng(seed)
    passed = 0
    lines = []
    for k in range(trials):
        p = random_theory_params(gen)
        dim = int(gen.integers(1, 9))
        g = gen.standard_normal(dim) * gen.uniform(0.0, 3.0)
        chk = lemma_lower_bound_check(g, p, num_samples=samples, rng=RngState(seed * 1000 + k))
        passed += chk.passed
        if not chk.passed:
            lines.append(f"config {k}: lhs {chk.lhs:.6g} (se {chk.std_error:.2g}) "
                         f"< rhs {chk.rhs:.6g}")
    return SuiteResult("lemma", passed == trials,
                       f"{passed}/{trials} configurations satisfy the lower bound", lines)


# Smooth teacher-student regression used for the grouping trend.
TREND_TASK = SyntheticTask("two-layer-teacher", dim=8, n=256, noise=0.1, seed=0, depth=8,
                           width=4)
# Least squares with enough label noise that SGD does not interpolate.
RATE_TASK = SyntheticTask("quadratic", dim=8, n=256, noise=0.5, seed=0)


def suite_convergence(trials: int = 10, seed: int = 0, steps: int = 2000,
                      rate_trials: int = 5, rate_steps=(100, 1000, 10000)) -> SuiteResult:
    """Grouping trend of private SGD plus the plain-SGD rate on least squares.

    ``trials`` seeds per grouping starting at ``seed``; the step size follows
    ``0.45 / sqrt(steps)`` with noise multiplier 1 and batch 32.
    """
    X, Y = TREND_TASK.generate()
    trend = convergence_experiment(TREND_TASK.arch(), (X, Y), T=steps, B=32, sigma_dp=1.0,
                                   seeds=range(seed, seed + trials), eta0=0.45)
    medians = [trend.medians[k] for k in trend.order]
    trend_ok = nondecreasing_within(medians, 0.2)
    Xq, Yq = RATE_TASK.generate()
    rate = nondp_rate_experiment(RATE_TASK.arch(), (Xq, Yq), T_values=rate_steps, B=8,
                                 smoothness=quadratic_smoothness(Xq),
                                 seeds=range(seed, seed + rate_trials))
    rate_ok = rate.slope <= -0.2
    lines = [f"median min grad norm {k}: {trend.medians[k]:.6g}" for k in trend.order]
    lines.append(f"trend non-decreasing within 20%: {trend_ok}")
    lines += [f"non-private T={T}: median min grad norm {m:.6g}"
              for T, m in zip(rate.T_values, rate.medians)]
    lines.append(f"non-private log-log slope {rate.slope:.4f} (need <= -0.2)")
    return SuiteResult("convergence", trend_ok and rate_ok,
                       f"trend {'holds' if trend_ok else 'violated'}, "
                       f"slope {rate.slope:.4f}", lines,
                       {"trend": trend.to_dict(), "rate": rate.to_dict()})


SUITES = {
    "ghost-norm": suite_ghost_norm,
    "clipped-sum": suite_clipped_sum,
    "schedule": suite_schedule,
    "fact1": suite_fact1,
    "roundtrip": suite_roundtrip,
    "counterexample": suite_counterexample,
    "lemma": suite_lemma,
    "convergence": suite_convergence,
}

# Suites run by ``verify all``; the convergence study takes minutes.
FAST_SUITES = ("ghost-norm", "clipped-sum", "schedule", "fact1", "roundtrip",
               "counterexample", "lemma")
