"""Numerical companions to the convergence and non-equivalence results.

* :func:`distance_measure` and :func:`distance_measure_inverse` evaluate the
  distance measure that lower-bounds the expected alignment of an
  AUTO-clipped per-sample gradient with the true gradient, and its inverse.
* :func:`lemma_lower_bound_check` estimates that alignment by Monte Carlo
  and compares it with half the measure.
* :func:`counterexample_verify` decides whether all-layer clipping of two
  per-sample gradients can be reproduced by per-layer clipping.
* :func:`convergence_experiment` and :func:`nondp_rate_experiment` run the
  desk-scale trend experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clipping import ClipConfig, GroupingPlan, build_grouping
from .engine import ArchitectureSpec, Network, full_gradient
from .schedule import train
from .tensor import RngState


class DomainError(ValueError):
    """Argument outside the domain of a closed-form expression."""


class AssumptionError(ValueError):
    """A noise model violates the symmetry or variance assumption."""


class SetupError(ValueError):
    """Gradient pair does not satisfy the required configuration."""


@dataclass(frozen=True)
class TheoryParams:
    xi: float
    gamma: float = 0.01
    r: float = 2.0
    M: int = 1
    smoothness: float = 1.0
    loss_floor: float = 0.0
    rho: float = 0.1
    a: float = 1.0

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.r > 1:
            raise ValueError("r must exceed 1")
        if self.M < 1:
            raise ValueError("M must be a positive integer")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")

    @property
    def shift(self) -> float:
        """``xi / (r sqrt(M))``, the offset between ``x_r`` and the gradient norm."""
        return self.xi / (self.r * math.sqrt(self.M))

    @property
    def sup(self) -> float:
        """Supremum of the measure, ``2 gamma / (r^2 - 1)``."""
        return 2 * self.gamma / (self.r ** 2 - 1)


def distance_measure(x, p: TheoryParams):
    """``x (g/((r-1)(x+c)+g) - g/((r+1)(x+c)+g))`` with ``c = xi/(r sqrt M)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x + p.shift
    g, r = p.gamma, p.r
    out = x * (g / ((r - 1) * n + g) - g / ((r + 1) * n + g))
    return float(out) if out.ndim == 0 else out


def distance_measure_inverse(y, p: TheoryParams):
    """Closed-form inverse of :func:`distance_measure` on ``[0, sup)``."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or np.any(y >= p.sup):
        raise DomainError(f"inverse defined on [0, {p.sup!r}), got {y}")
    c = p.shift
    s = p.xi / math.sqrt(p.M)
    g, r = p.gamma, p.r
    root = np.sqrt(c * c + 2 * s * y + 2 * g * y + y * y)
    # g*(root - c) rewritten as g*(root^2 - c^2)/(root + c) to avoid cancellation at y -> 0
    num = y * ((r * r - 1) * c + r * g + g * (2 * s + 2 * g + y) / (root + c))
    out = num / (2 * g - (r * r - 1) * y)
    return float(out) if out.ndim == 0 else out


def inverse_slope_at_zero(p: TheoryParams) -> float:
    """Limit of ``M^{-1}(y) / y`` as ``y -> 0``."""
    s = p.xi / math.sqrt(p.M)
    return (p.r ** 2 * (s + p.gamma) ** 2 - s ** 2) / (2 * s * p.gamma * p.r)


class GaussianNoise:
    """Isotropic Gaussian per-sample noise with per-coordinate ``std``."""

    symmetric = True

    def __init__(self, std: float):
        self.std = std

    def sample(self, gen: np.random.Generator, n: int, dim: int) -> np.ndarray:
        return self.std * gen.standard_normal((n, dim))

    def second_moment(self, dim: int) -> float:
        return dim * self.std ** 2


class RademacherNoise:
    """Independent random signs of magnitude ``scale`` in every coordinate."""

    symmetric = True

    def __init__(self, scale: float):
        self.scale = scale

    def sample(self, gen, n, dim):
        return self.scale * (2.0 * gen.integers(0, 2, size=(n, dim)) - 1.0)

    def second_moment(self, dim):
        return dim * self.scale ** 2


class ShiftedNoise:
    """Centered exponential noise; mean zero but not symmetric."""

    symmetric = False

    def __init__(self, scale: float):
        self.scale = scale

    def sample(self, gen, n, dim):
        return self.scale * (gen.exponential(size=(n, dim)) - 1.0)

    def second_moment(self, dim):
        return dim * self.scale ** 2


def default_noise(p: TheoryParams, dim: int) -> GaussianNoise:
    """Gaussian noise with ``E||z||^2 = xi^2 / M`` exactly."""
    return GaussianNoise(p.xi / math.sqrt(p.M * dim))


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    std_error: float
    rhs: float
    x_r: float
    passed: bool


def lemma_lower_bound_check(true_grad, p: TheoryParams, noise_model=None,
                            num_samples: int = 10 ** 6, rng: RngState | None = None,
                            chunk: int = 200_000) -> BoundCheck:
    """Monte Carlo check of ``g . E[g_i/(||g_i||+gamma)] >= M(x_r)/2``.

    ``g_i = g + z`` with ``z`` from ``noise_model``. The measure is clamped
    to zero when ``x_r = ||g|| - xi/(r sqrt M)`` is negative. Passes when the
    estimate is at least ``rhs - 3 * standard error``.
    """
    g = np.asarray(true_grad, dtype=np.float64).ravel()
    dim = g.size
    noise = noise_model if noise_model is not None else default_noise(p, dim)
    if not getattr(noise, "symmetric", False):
        raise AssumptionError("per-sample noise must be symmetric about the true gradient")
    if noise.second_moment(dim) > p.xi ** 2 / p.M * (1 + 1e-12):
        raise AssumptionError(f"noise second moment {noise.second_moment(dim)} exceeds "
                              f"xi^2/M = {p.xi ** 2 / p.M}")
    rng = rng if rng is not None else RngState(0)
    gen = rng.generator()
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < num_samples:
        n = min(chunk, num_samples - done)
        gi = g + noise.sample(gen, n, dim)
        vals = (gi @ g) / (np.sqrt(np.einsum("ij,ij->i", gi, gi)) + p.gamma)
        total += float(vals.sum())
        total_sq += float(vals @ vals)
        done += n
    mean = total / num_samples
    var = max(total_sq / num_samples - mean * mean, 0.0)
    se = math.sqrt(var / num_samples)
    x_r = float(np.linalg.norm(g)) - p.shift
    rhs = 0.5 * distance_measure(max(x_r, 0.0), p)
    return BoundCheck(mean, se, rhs, x_r, mean >= rhs - 3 * se)


@dataclass
class CounterexampleReport:
    clip_fn: str
    representable: bool
    reason: str
    trace: list[str] = field(default_factory=list)
    grid_size: int = 0
    grid_matches: int = 0
    feasible_R: list[tuple[float, float]] | None = None

    @property
    def verdict(self) -> str:
        return "representable" if self.representable else "not representable"


def _split(g, sizes):
    g = np.asarray(g, dtype=np.float64).ravel()
    if sum(sizes) != g.size:
        raise SetupError(f"layer sizes {sizes} do not add up to {g.size}")
    return np.split(g, np.cumsum(sizes)[:-1])


def _abadi(v, R):
    n = np.linalg.norm(v)
    return v if n == 0 else v * min(1.0, R / n)


def _auto(v, R, gamma):
    return v * R / (np.linalg.norm(v) + gamma)


def counterexample_verify(g_i, g_j, R: float, clip_fn: str = "abadi",
                          grid: Sequence[Sequence[float]] | None = None,
                          sizes: Sequence[int] | None = None, gamma: float = 0.01,
                          rtol: float = 1e-12) -> CounterexampleReport:
    """Can per-layer thresholds reproduce all-layer clipping of two samples?

    Exact answer from per-layer feasible threshold sets: for Abadi clipping a
    sample whose all-layer factor is ``c < 1`` pins ``R_m = c ||g^(m)||``,
    an unclipped sample requires ``R_m >= ||g^(m)||``; for AUTO clipping
    every non-zero block pins ``R_m = R (||g^(m)||+gamma)/(||g||+gamma)``.
    For Abadi clipping the case split on ``R_m`` versus ``||g_j^(m)||`` is
    also traced, and optional grid points are checked directly.
    """
    g_i = np.asarray(g_i, dtype=np.float64).ravel()
    g_j = np.asarray(g_j, dtype=np.float64).ravel()
    if g_i.shape != g_j.shape:
        raise SetupError("both gradients need the same shape")
    if sizes is None:
        if g_i.size % 2:
            raise SetupError("give layer sizes for odd-length gradients")
        sizes = (g_i.size // 2, g_i.size // 2)
    bi, bj = _split(g_i, sizes), _split(g_j, sizes)
    ni, nj = np.linalg.norm(g_i), np.linalg.norm(g_j)
    trace: list[str] = []

    if clip_fn == "abadi":
        if not ni > R > nj:
            raise SetupError(f"need ||g_i|| > R > ||g_j||, got {ni:g}, {R:g}, {nj:g}")
        ci = R / ni
        trace.append(f"all-layer: ||g_i||={ni:g} > R={R:g} so g_i is scaled by {ci:g}; "
                     f"||g_j||={nj:g} < R so g_j is unchanged")
        intervals = []
        for m, (ui, uj) in enumerate(zip(bi, bj)):
            lo, hi = 0.0, math.inf
            ai, aj = np.linalg.norm(ui), np.linalg.norm(uj)
            if ai > 0:
                lo = hi = ci * ai
            if aj > 0:
                lo = max(lo, aj)
            intervals.append((lo, hi))
        feasible = all(lo <= hi * (1 + rtol) for lo, hi in intervals)
        pivot = next((m for m, (ui, uj) in enumerate(zip(bi, bj))
                      if 0 < np.linalg.norm(ui) <= np.linalg.norm(uj)), None)
        if pivot is not None:
            a_i, a_j = np.linalg.norm(bi[pivot]), np.linalg.norm(bj[pivot])
            k = pivot + 1
            trace.append(f"layer {k}: ||g_i^({k})||={a_i:g} <= ||g_j^({k})||={a_j:g}")
            trace.append(f"case R_{k} < {a_j:g}: g_j^({k}) is clipped by layer-wise "
                         "clipping but not by all-layer clipping")
            trace.append(f"case R_{k} >= {a_j:g}: g_i^({k}) is not clipped by layer-wise "
                         "clipping but is clipped by all-layer clipping")
            trace.append("both cases contradict, for every threshold vector")
            reason = f"case split on layer {k}"
        elif feasible:
            reason = "thresholds R_m = c_i ||g_i^(m)|| reproduce both samples"
        else:
            bad = next(m for m, (lo, hi) in enumerate(intervals) if lo > hi * (1 + rtol))
            reason = f"no threshold for layer {bad + 1} satisfies both samples"
        feasible_R = None if not feasible else [iv for iv in intervals]
        outputs = lambda Rs: ([_abadi(u, r) for u, r in zip(bi, Rs)],
                              [_abadi(u, r) for u, r in zip(bj, Rs)])
        target_i, target_j = _abadi(g_i, R), _abadi(g_j, R)
    elif clip_fn == "auto":
        ratios = []
        for m, (ui, uj) in enumerate(zip(bi, bj)):
            pins = [R * (np.linalg.norm(u) + gamma) / (n + gamma)
                    for u, n in ((ui, ni), (uj, nj)) if np.linalg.norm(u) > 0]
            ratios.append(pins)
            if len(pins) == 2:
                trace.append(f"layer {m + 1}: required R_{m + 1} = {pins[0]!r} from g_i "
                             f"and {pins[1]!r} from g_j")
        feasible = all(len(p) < 2 or math.isclose(p[0], p[1], rel_tol=rtol, abs_tol=0.0)
                       for p in ratios)
        reason = ("ratio (||g^(m)||+gamma)/(||g||+gamma) agrees across samples" if feasible
                  else "ratio (||g^(m)||+gamma)/(||g||+gamma) differs between samples")
        feasible_R = [(p[0], p[0]) if p else (0.0, math.inf) for p in ratios] \
            if feasible else None
        outputs = lambda Rs: ([_auto(u, r, gamma) for u, r in zip(bi, Rs)],
                              [_auto(u, r, gamma) for u, r in zip(bj, Rs)])
        target_i, target_j = _auto(g_i, R, gamma), _auto(g_j, R, gamma)
    else:
        raise ValueError(f"unknown clipping function {clip_fn!r}")

    report = CounterexampleReport(clip_fn, feasible, reason, trace, feasible_R=feasible_R)
    if grid is not None:
        for Rs in grid:
            oi, oj = outputs(Rs)
            same = (np.allclose(np.concatenate(oi), target_i, rtol=rtol, atol=0)
                    and np.allclose(np.concatenate(oj), target_j, rtol=rtol, atol=0))
            report.grid_size += 1
            report.grid_matches += int(same)
    return report


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def proof_learning_rate(L0: float, L_star: float, smoothness: float, sigma: float,
                        d: int, B: int, T: int) -> float:
    """Learning rate on the mean private gradient, ``eta0 / sqrt(T)``, with
    ``eta0 = sqrt(2 (L0 - L*) / (smoothness (1 + sigma^2 d / B^2)))``."""
    eta0 = math.sqrt(2 * (L0 - L_star) / (smoothness * (1 + sigma ** 2 * d / B ** 2)))
    return eta0 / math.sqrt(T)


@dataclass
class ConvergenceRun:
    label: str
    M: int
    seed: int
    T: int
    min_grad_norm: float
    final_grad_norm: float
    final_loss: float


@dataclass
class ConvergenceResult:
    runs: list[ConvergenceRun]
    medians: dict[str, float]
    order: list[str]
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "convergence",
            "settings": self.settings,
            "runs": [vars(r) for r in self.runs],
            "medians": self.medians,
            "order": self.order,
        }


def _plan_for(arch: ArchitectureSpec, M) -> GroupingPlan:
    if M == "layer-wise" or M == arch.num_layers:
        return build_grouping(arch, "layer-wise")
    if M == 1:
        return build_grouping(arch, "all-layer")
    return build_grouping(arch, "uniform", [int(M)])


def convergence_experiment(arch: ArchitectureSpec, dataset, M_values=(1, 2, 4, "layer-wise"),
                           T: int = 2000, B: int = 32, sigma_dp: float = 1.0,
                           seeds: Sequence[int] = tuple(range(10)), eta0: float = 0.45,
                           cfg: ClipConfig = ClipConfig(), init_scale: float = 1.0
                           ) -> ConvergenceResult:
    """DP-SGD with AUTO group-wise clipping for every (M, seed).

    All grouping styles of a seed share the initial weights, the batch order
    and the noise stream. The step size is ``eta0 / sqrt(T)``. Records the
    minimum over steps of the full-data gradient norm of the mean loss.
    """
    lr = eta0 / math.sqrt(T)
    runs = []
    order = []
    for M in M_values:
        plan = _plan_for(arch, M)
        label = "layer-wise" if plan.style == "layer-wise" else f"M={plan.M}"
        order.append(label)
        for seed in seeds:
            net = Network.init(arch, RngState(seed), scale=init_scale)
            traj = train(net, dataset, plan, cfg, sigma_dp, "sgd", lr=lr,
                         rng=RngState(10_000 + seed), batch_size=B, steps=T,
                         grad_norm="full")
            norms = traj.grad_norms
            runs.append(ConvergenceRun(label, plan.M, seed, T, float(norms.min()),
                                       float(norms[-1]), float(traj.losses[-1])))
    medians = {label: float(np.median([r.min_grad_norm for r in runs if r.label == label]))
               for label in order}
    settings = {"T": T, "B": B, "sigma_dp": sigma_dp, "eta0": eta0, "lr": lr,
                "clip": cfg.function, "gamma": cfg.gamma}
    return ConvergenceResult(runs, medians, order, settings)


def nondecreasing_within(values: Sequence[float], tolerance: float = 0.2) -> bool:
    """Each value at least ``(1 - tolerance)`` times its predecessor."""
    return all(b >= (1 - tolerance) * a for a, b in zip(values, values[1:]))


@dataclass
class RateResult:
    T_values: list[int]
    min_grad_norms: dict[int, list[float]]
    medians: list[float]
    slope: float

    def to_dict(self) -> dict:
        return {"kind": "rate", "T_values": self.T_values,
                "min_grad_norms": {str(k): v for k, v in self.min_grad_norms.items()},
                "medians": self.medians, "slope": self.slope}


def nondp_rate_experiment(arch: ArchitectureSpec, dataset, T_values=(100, 1000, 10000),
                          B: int = 8, smoothness: float = 1.0,
                          seeds: Sequence[int] = tuple(range(5))) -> RateResult:
    """Plain SGD with ``lr = 1 / (smoothness sqrt(T))``; log-log slope of the
    median minimum full-data gradient norm against ``T``."""
    cfg = ClipConfig("none")
    plan = build_grouping(arch, "all-layer")
    table: dict[int, list[float]] = {}
    for T in T_values:
        lr = 1.0 / (smoothness * math.sqrt(T))
        table[T] = []
        for seed in seeds:
            net = Network.init(arch, RngState(seed))
            traj = train(net, dataset, plan, cfg, 0.0, "sgd", lr=lr,
                         rng=RngState(20_000 + seed), batch_size=B, steps=T,
                         grad_norm="full")
            table[T].append(float(traj.grad_norms.min()))
    medians = [float(np.median(table[T])) for T in T_values]
    return RateResult(list(T_values), table, medians, fit_loglog_slope(T_values, medians))


def full_grad_norm(net: Network, X, Y) -> float:
    grads = full_gradient(net, X, Y)
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads)) / len(X)
