"""Grouping plans, clipping functions and the group-wise private gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import ArchitectureSpec, clipped_weight_grad, ghost_norm
from .tensor import RngState, Tensor, gaussian

STYLES = ("all-layer", "uniform", "layer-wise", "param-wise", "non-uniform", "explicit")
CLIP_FUNCTIONS = ("auto", "abadi", "none")


class PlanError(ValueError):
    """Raised for grouping plans that do not fit an architecture."""


@dataclass(frozen=True)
class GroupingPlan:
    """Partition of layer indices into ordered groups with thresholds.

    ``groups`` are listed in forward order; backward processing visits them
    from last to first. ``R`` defaults to ``1/sqrt(M)`` per group.
    """

    groups: tuple[tuple[int, ...], ...]
    style: str = "explicit"
    R: tuple[float, ...] = ()
    params: tuple = ()

    def __post_init__(self):
        if not self.groups or any(len(g) == 0 for g in self.groups):
            raise PlanError("groups must be non-empty")
        groups = tuple(tuple(sorted(int(i) for i in g)) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        flat = [i for g in groups for i in g]
        if len(set(flat)) != len(flat):
            raise PlanError("groups overlap")
        if sorted(flat) != list(range(len(flat))):
            raise PlanError(f"groups must cover layers 0..{len(flat) - 1} exactly")
        if not self.R:
            object.__setattr__(self, "R", (1.0 / math.sqrt(len(groups)),) * len(groups))
        elif len(self.R) != len(groups):
            raise PlanError(f"{len(self.R)} thresholds for {len(groups)} groups")
        elif any(r < 0 for r in self.R):
            raise PlanError("thresholds must be non-negative")
        object.__setattr__(self, "R", tuple(float(r) for r in self.R))

    @property
    def M(self) -> int:
        return len(self.groups)

    @property
    def num_layers(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def threshold_norm(self) -> float:
        return math.sqrt(sum(r * r for r in self.R))

    def group_of(self, layer: int) -> int:
        for m, g in enumerate(self.groups):
            if layer in g:
                return m
        raise PlanError(f"layer {layer} is in no group")

    def is_contiguous(self) -> bool:
        return all(g[-1] - g[0] + 1 == len(g) for g in self.groups)

    def backward_order(self) -> list[int]:
        """Group indices sorted by the layer at which each group closes."""
        return sorted(range(self.M), key=lambda m: self.groups[m][0], reverse=True)

    def group_params(self, arch: ArchitectureSpec) -> list[int]:
        return [sum(arch.layers[l].num_params for l in g) for g in self.groups]

    def check(self, arch: ArchitectureSpec) -> None:
        if self.num_layers != arch.num_layers:
            raise PlanError(f"plan covers {self.num_layers} layers, "
                            f"architecture has {arch.num_layers}")

    def to_dict(self) -> dict:
        return {"style": self.style, "groups": [list(g) for g in self.groups],
                "R": list(self.R)}

    @classmethod
    def from_dict(cls, doc: dict) -> "GroupingPlan":
        try:
            groups = tuple(tuple(g) for g in doc["groups"])
        except (KeyError, TypeError) as exc:
            raise PlanError(f"malformed plan document: {exc}") from exc
        return cls(groups, doc.get("style", "explicit"), tuple(doc.get("R", ())))


def build_grouping(arch: ArchitectureSpec | int, style: str, params=None,
                   R: Sequence[float] | None = None) -> GroupingPlan:
    """Build a plan for one of the standard clipping styles.

    ``uniform`` takes the number of groups; when it does not divide the
    number of layers, earlier groups receive one extra layer. ``non-uniform``
    takes the sizes of the leading groups as cumulative boundaries, e.g.
    ``[6]`` on 12 layers gives groups ``0..5`` and ``6..11``. Weights are the
    only trainable tensors, so ``param-wise`` coincides with ``layer-wise``.
    """
    L = arch if isinstance(arch, int) else arch.num_layers
    R = tuple(R) if R is not None else ()
    layers = list(range(L))
    if style == "all-layer":
        groups = [layers]
    elif style in ("layer-wise", "param-wise"):
        groups = [[l] for l in layers]
    elif style == "uniform":
        k = int(params[0] if isinstance(params, (list, tuple)) else params)
        if not 1 <= k <= L:
            raise PlanError(f"uniform grouping needs 1 <= k <= {L}, got {k}")
        groups = [list(map(int, chunk)) for chunk in np.array_split(layers, k)]
        params = (k,)
    elif style == "non-uniform":
        bounds = [int(b) for b in (params or [])]
        if not bounds or any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])) \
                or bounds[0] < 1 or bounds[-1] > L - 1:
            raise PlanError(f"boundaries must be strictly increasing within 1..{L - 1}, "
                            f"got {bounds}")
        edges = [0] + bounds + [L]
        groups = [layers[lo:hi] for lo, hi in zip(edges, edges[1:])]
        params = tuple(bounds)
    elif style == "explicit":
        groups = params
    else:
        raise PlanError(f"unknown style {style!r}")
    return GroupingPlan(tuple(tuple(g) for g in groups), style, R,
                        tuple(params) if isinstance(params, (list, tuple)) else ())


def parse_plan_spec(spec: str | dict, L: int) -> GroupingPlan:
    """Plan from ``"all-layer"``, ``"layer-wise"``, ``"uniform:3"``,
    ``"non-uniform:2,5"`` or a plan document."""
    if isinstance(spec, dict):
        if "groups" in spec:
            return GroupingPlan.from_dict(spec)
        return build_grouping(L, spec["style"], spec.get("params"), spec.get("R"))
    name, _, arg = spec.partition(":")
    params = [int(x) for x in arg.split(",") if x.strip()] if arg else None
    return build_grouping(L, name, params)


@dataclass(frozen=True)
class ClipConfig:
    function: str = "auto"
    gamma: float = 0.01

    def __post_init__(self):
        if self.function not in CLIP_FUNCTIONS:
            raise ValueError(f"unknown clipping function {self.function!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def auto_clip_factor(group_norm, cfg: ClipConfig = ClipConfig()):
    """``1 / (||g|| + gamma)``; works elementwise on arrays."""
    return 1.0 / (group_norm + cfg.gamma)


def abadi_clip_factor(group_norm, R: float):
    """``min(1, R / ||g||)``, and 1 for a zero gradient."""
    norm = np.asarray(group_norm, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        factor = np.where(norm > 0, np.minimum(1.0, R / np.where(norm > 0, norm, 1.0)), 1.0)
    return factor if np.ndim(group_norm) else float(factor)


def clip_factors(group_norm: Tensor, R_m: float, cfg: ClipConfig) -> Tensor:
    """Per-sample factors for one group given its per-sample norms.

    The AUTO factor carries the threshold, ``R_m / (||g|| + gamma)``, which
    with ``R_m = 1/sqrt(M)`` is the normalized AUTO group gradient.
    """
    if cfg.function == "auto":
        return R_m * auto_clip_factor(np.asarray(group_norm, dtype=np.float64), cfg)
    if cfg.function == "abadi":
        return abadi_clip_factor(np.asarray(group_norm, dtype=np.float64), R_m)
    # "none": plain summed gradient for non-private baselines
    return np.ones_like(np.asarray(group_norm, dtype=np.float64))


@dataclass
class PrivateGradient:
    grads: list[Tensor]
    noise_sigma: float
    sensitivity_norm: float
    noise_std: float = field(init=False)

    def __post_init__(self):
        self.noise_std = self.noise_sigma * self.sensitivity_norm

    def norm(self) -> float:
        return math.sqrt(sum(float(np.vdot(g, g)) for g in self.grads))


def add_noise(grads: list[Tensor], plan: GroupingPlan, cfg: ClipConfig,
              sigma_dp: float, rng: RngState) -> PrivateGradient:
    """Add ``sigma_dp * ||R|| * N(0, I)`` once to every layer, in layer order."""
    if cfg.function == "none" and sigma_dp > 0:
        raise ValueError("unclipped gradients have unbounded sensitivity; "
                         "use sigma_dp = 0 with function='none'")
    sens = plan.threshold_norm
    noisy = [g + gaussian(rng, g.shape, sigma_dp * sens) for g in grads]
    return PrivateGradient(noisy, float(sigma_dp), sens)


def group_norms(norms_sq: Tensor, plan: GroupingPlan) -> Tensor:
    """``(B, M)`` group norms from ``(B, L)`` per-layer squared norms."""
    norms_sq = np.asarray(norms_sq, dtype=np.float64)
    if norms_sq.ndim != 2 or norms_sq.shape[1] != plan.num_layers:
        raise PlanError(f"per-sample norms of shape {norms_sq.shape} do not cover "
                        f"{plan.num_layers} layers")
    return np.sqrt(np.stack([norms_sq[:, list(g)].sum(axis=1) for g in plan.groups], axis=1))


def group_private_gradient(norms_sq: Tensor, activations: Sequence[Tensor],
                           out_grads: Sequence[Tensor], plan: GroupingPlan,
                           cfg: ClipConfig, sigma_dp: float,
                           rng: RngState) -> PrivateGradient:
    """Private gradient from per-layer norms, inputs and output gradients."""
    if len(activations) != plan.num_layers or len(out_grads) != plan.num_layers:
        raise PlanError("activations and output gradients must cover every layer")
    gnorm = group_norms(norms_sq, plan)
    grads: list[Tensor] = [None] * plan.num_layers  # type: ignore[list-item]
    for m, group in enumerate(plan.groups):
        factors = clip_factors(gnorm[:, m], plan.R[m], cfg)
        for r in group:
            grads[r] = clipped_weight_grad(activations[r], out_grads[r], factors)
    return add_noise(grads, plan, cfg, sigma_dp, rng)


def layer_norms_sq(activations: Sequence[Tensor], out_grads: Sequence[Tensor]) -> Tensor:
    """``(B, L)`` matrix of per-sample per-layer squared gradient norms."""
    return np.stack([ghost_norm(a, g) for a, g in zip(activations, out_grads)], axis=1)
