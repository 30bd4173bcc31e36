"""Book-keeping backward schedule for group-wise clipping, and training.

The schedule caches every layer input during the forward pass, then walks
the layers top-down. Output gradients of a group are held until the group's
lowest layer has been reached; at that point the per-sample group norms are
known, clipped sums are formed for every layer of the group and the group's
cached tensors are released. A :class:`MemoryLedger` records the live bytes
of cached layer inputs and output gradients after every cache mutation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .clipping import (ClipConfig, GroupingPlan, PlanError, PrivateGradient, add_noise,
                       clip_factors, group_norms)
from .engine import (Network, backward_layer, clipped_weight_grad, forward, full_gradient,
                     ghost_norm, per_sample_grads)
from .tensor import RngState, Tensor

FLOAT_BYTES = 8


class RunError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class MemoryLedger:
    """Live bytes of cached activations and output gradients."""

    events: list[tuple[str, int]] = field(default_factory=lambda: [("start", 0)])
    live: dict[str, int] = field(default_factory=dict)

    @property
    def live_bytes(self) -> int:
        return sum(self.live.values())

    def alloc(self, key: str, tensor: Tensor) -> None:
        if key in self.live:
            raise KeyError(f"{key} already live")
        self.live[key] = tensor.size * FLOAT_BYTES
        self.events.append((f"alloc {key}", self.live_bytes))

    def free(self, key: str) -> None:
        del self.live[key]
        self.events.append((f"free {key}", self.live_bytes))

    def max_bytes(self) -> int:
        return max(b for _, b in self.events)

    def local_maxima(self) -> list[int]:
        """Indices of events strictly above both neighbours."""
        series = [b for _, b in self.events] + [0]
        return [i for i in range(1, len(series) - 1)
                if series[i] > series[i - 1] and series[i] > series[i + 1]]


@dataclass
class StepResult:
    private_grad: PrivateGradient
    ledger: MemoryLedger
    per_group_peaks: list[int]
    max_peak: int
    per_sample_loss: Tensor
    norms_sq: Tensor
    unclipped_grads: list[Tensor] | None = None


def bk_clipped_sum(net: Network, batch: Tensor, targets, plan: GroupingPlan,
                   cfg: ClipConfig, ledger: MemoryLedger | None = None,
                   track_unclipped: bool = False):
    """Clipped per-layer gradient sums by the book-keeping schedule.

    Returns ``(grads, per_group_peaks, per_sample_loss, norms_sq, unclipped)``.
    Peaks are bytes and listed in plan group order.
    """
    arch = net.arch
    plan.check(arch)
    ledger = ledger if ledger is not None else MemoryLedger()
    L = arch.num_layers
    closing = {plan.groups[m][0]: m for m in range(plan.M)}

    cache = forward(net, batch, targets)
    for l in range(L):
        ledger.alloc(f"a{l}", cache.activations[l])
    B = cache.batch_size

    norms_sq = np.zeros((B, L))
    out_grads: dict[int, Tensor] = {}
    grads: list[Tensor] = [None] * L  # type: ignore[list-item]
    unclipped: list[Tensor] | None = [None] * L if track_unclipped else None  # type: ignore
    peaks = [0] * plan.M
    phase_start = len(ledger.events)
    upstream = None
    for l in reversed(range(L)):
        upstream = backward_layer(net, cache, l, upstream)
        out_grads[l] = upstream
        ledger.alloc(f"ds{l}", upstream)
        norms_sq[:, l] = ghost_norm(cache.activations[l], upstream)
        m = closing.get(l)
        if m is None:
            continue
        group = plan.groups[m]
        gnorm = np.sqrt(norms_sq[:, list(group)].sum(axis=1))
        factors = clip_factors(gnorm, plan.R[m], cfg)
        peaks[m] = max(b for _, b in ledger.events[phase_start:])
        for r in group:
            grads[r] = clipped_weight_grad(cache.activations[r], out_grads[r], factors)
            if unclipped is not None:
                unclipped[r] = clipped_weight_grad(cache.activations[r], out_grads[r],
                                                   np.ones(B))
            del cache.activations[r], out_grads[r]
            ledger.free(f"a{r}")
            ledger.free(f"ds{r}")
        phase_start = len(ledger.events)
    if ledger.live:
        raise PlanError(f"tensors left live after backward: {sorted(ledger.live)}")
    return grads, peaks, cache.per_sample_loss, norms_sq, unclipped


def dp_step(net: Network, batch: Tensor, targets, plan: GroupingPlan, cfg: ClipConfig,
            sigma_dp: float, rng: RngState, track_unclipped: bool = False) -> StepResult:
    """One private gradient by the book-keeping schedule."""
    ledger = MemoryLedger()
    grads, peaks, losses, norms_sq, unclipped = bk_clipped_sum(
        net, batch, targets, plan, cfg, ledger, track_unclipped)
    private = add_noise(grads, plan, cfg, sigma_dp, rng)
    return StepResult(private, ledger, peaks, max(peaks), losses, norms_sq, unclipped)


def naive_dp_step(net: Network, batch: Tensor, targets, plan: GroupingPlan,
                  cfg: ClipConfig, sigma_dp: float, rng: RngState) -> PrivateGradient:
    """Reference path: materialize every per-sample gradient, then clip and sum."""
    plan.check(net.arch)
    L = net.arch.num_layers
    cache = forward(net, batch, targets)
    activations = dict(cache.activations)
    out_grads: dict[int, Tensor] = {}
    upstream = None
    for l in reversed(range(L)):
        upstream = backward_layer(net, cache, l, upstream)
        out_grads[l] = upstream
    per_sample = [per_sample_grads(activations[l], out_grads[l]) for l in range(L)]
    norms_sq = np.stack([np.einsum("bdp,bdp->b", g, g) for g in per_sample], axis=1)
    gnorm = group_norms(norms_sq, plan)
    grads = [None] * L
    for m, group in enumerate(plan.groups):
        factors = clip_factors(gnorm[:, m], plan.R[m], cfg)
        for r in group:
            grads[r] = np.einsum("b,bdp->dp", factors, per_sample[r])
    return add_noise(grads, plan, cfg, sigma_dp, rng)


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, weights: list[Tensor], grads: Sequence[Tensor]) -> None:
        for w, g in zip(weights, grads):
            if self.weight_decay:
                w -= self.lr * self.weight_decay * w
            w -= self.lr * g


class AdamW:
    def __init__(self, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: list[Tensor] | None = None
        self.v: list[Tensor] | None = None

    def step(self, weights: list[Tensor], grads: Sequence[Tensor]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(w) for w in weights]
            self.v = [np.zeros_like(w) for w in weights]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for w, g, m, v in zip(weights, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            w -= self.lr * self.weight_decay * w
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = {"sgd": SGD, "adamw": AdamW}


def make_optimizer(name: str, lr: float, weight_decay: float = 0.0):
    if name not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {name!r}")
    return OPTIMIZERS[name](lr, weight_decay)


@dataclass
class StepRecord:
    step: int
    loss: float
    grad_norm: float
    max_peak_bytes: int
    group_peaks: list[int]


@dataclass
class Trajectory:
    records: list[StepRecord]
    net: Network

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "loss", "grad_norm", "max_peak_bytes"])
        for r in self.records:
            writer.writerow([r.step, repr(r.loss), repr(r.grad_norm), r.max_peak_bytes])
        return buf.getvalue()


def _batches(n: int, batch_size: int, rng: RngState) -> Iterator[np.ndarray]:
    while True:
        order = rng.generator().permutation(n)
        for lo in range(0, n - batch_size + 1, batch_size):
            yield order[lo:lo + batch_size]


def _take(targets, idx):
    return None if targets is None else np.asarray(targets)[idx]


def train(net: Network, dataset: tuple[Tensor, object], plan: GroupingPlan,
          cfg: ClipConfig, sigma_dp: float, optimizer: str = "sgd", epochs: int = 1,
          lr: float = 0.1, rng: RngState | None = None, batch_size: int | None = None,
          virtual_batch_size: int | None = None, weight_decay: float = 0.0,
          steps: int | None = None, grad_norm: str = "batch") -> Trajectory:
    """Private training of ``net`` in place.

    Each logical batch is split into virtual batches; clipped sums from every
    virtual batch are accumulated and noise is added once per logical batch.
    The update direction is the private gradient divided by the logical batch
    size. ``grad_norm`` selects whether the recorded gradient norm is that of
    the mean loss over the logical batch or over the full dataset, taken
    before the update.
    """
    X, Y = dataset
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    B = batch_size or n
    v = virtual_batch_size or B
    if B > n:
        raise ValueError(f"batch size {B} exceeds dataset size {n}")
    if B % v:
        raise ValueError(f"virtual batch {v} must divide logical batch {B}")
    rng = rng if rng is not None else RngState(0)
    data_rng = rng.fork(1)
    noise_rng = rng.fork(2)
    opt = make_optimizer(optimizer, lr, weight_decay)
    total_steps = steps if steps is not None else epochs * (n // B)
    batches = _batches(n, B, data_rng)
    records = []
    for step in range(total_steps):
        idx = next(batches)
        acc: list[Tensor] | None = None
        raw: list[Tensor] | None = None
        loss_sum = 0.0
        peaks = None
        for lo in range(0, B, v):
            sub = idx[lo:lo + v]
            grads, p, losses, _, unclipped = bk_clipped_sum(
                net, X[sub], _take(Y, sub), plan, cfg,
                track_unclipped=(grad_norm == "batch"))
            loss_sum += float(losses.sum())
            peaks = p if peaks is None else [max(a, b) for a, b in zip(peaks, p)]
            if acc is None:
                acc, raw = grads, unclipped
            else:
                acc = [a + g for a, g in zip(acc, grads)]
                if raw is not None:
                    raw = [a + g for a, g in zip(raw, unclipped)]
        loss = loss_sum / B
        if not math.isfinite(loss):
            raise RunError(step, "non-finite loss")
        if grad_norm == "full":
            full = full_gradient(net, X, Y)
            gnorm = math.sqrt(sum(float(np.vdot(g, g)) for g in full)) / n
        else:
            gnorm = math.sqrt(sum(float(np.vdot(g, g)) for g in raw)) / B
        private = add_noise(acc, plan, cfg, sigma_dp, noise_rng)
        opt.step(net.weights, [g / B for g in private.grads])
        records.append(StepRecord(step, loss, gnorm, max(peaks), list(peaks)))
    return Trajectory(records, net)
