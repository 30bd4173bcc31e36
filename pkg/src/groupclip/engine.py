"""Forward/backward passes for stacks of linear layers with per-sample norms.

Layer ``l`` computes ``s_l = a_l @ W_l`` and ``a_{l+1} = act_l(s_l)`` where
``a_l`` has shape ``(B, T, d_l)`` and ``W_l`` has shape ``(d_l, p_l)``.
Losses are sums of per-sample losses so that the output gradient of every
layer splits into per-sample slices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import DimensionError, RngState, Tensor, as_tensor, matmul

ACTIVATIONS = ("identity", "relu", "tanh")
LOSSES = ("mean-squared-error", "softmax-cross-entropy", "per-sample-sum")


class SchedulingError(RuntimeError):
    """Raised when backward steps are requested out of order."""


@dataclass(frozen=True)
class LayerSpec:
    index: int
    seq_len: int
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if min(self.seq_len, self.in_dim, self.out_dim) < 1:
            raise ValueError(f"layer {self.index}: sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"layer {self.index}: unknown activation {self.activation!r}")

    @property
    def num_params(self) -> int:
        return self.in_dim * self.out_dim


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: tuple[LayerSpec, ...]
    loss: str = "mean-squared-error"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("architecture needs at least one layer")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        for i, layer in enumerate(self.layers):
            if layer.index != i:
                raise ValueError(f"layer indices must be 0..L-1, got {layer.index} at {i}")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if lower.out_dim != upper.in_dim:
                raise DimensionError(
                    f"layer {lower.index} outputs {lower.out_dim} features but "
                    f"layer {upper.index} expects {upper.in_dim}")
            if lower.seq_len != upper.seq_len:
                raise DimensionError("sequence length must be constant across layers")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def seq_len(self) -> int:
        return self.layers[0].seq_len

    @property
    def num_params(self) -> int:
        return sum(layer.num_params for layer in self.layers)

    @classmethod
    def from_dims(cls, dims: Sequence[tuple[int, int]], seq_len: int = 1,
                  activation: str | Sequence[str] = "identity",
                  loss: str = "mean-squared-error") -> "ArchitectureSpec":
        """Build from ``[(d_0, p_0), (d_1, p_1), ...]``."""
        if isinstance(activation, str):
            activation = [activation] * len(dims)
        layers = tuple(LayerSpec(i, seq_len, d, p, act)
                       for i, ((d, p), act) in enumerate(zip(dims, activation)))
        return cls(layers, loss)

    def to_dict(self) -> dict:
        return {
            "layers": [{"T": l.seq_len, "d": l.in_dim, "p": l.out_dim, "act": l.activation}
                       for l in self.layers],
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ArchitectureSpec":
        try:
            layers = tuple(LayerSpec(i, int(e["T"]), int(e["d"]), int(e["p"]),
                                     e.get("act", "identity"))
                           for i, e in enumerate(doc["layers"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed architecture document: {exc}") from exc
        return cls(layers, doc.get("loss", "mean-squared-error"))


def load_arch(path: str | Path) -> ArchitectureSpec:
    with open(path, encoding="utf-8") as fh:
        return ArchitectureSpec.from_dict(json.load(fh))


@dataclass
class Network:
    """An architecture together with its weight matrices."""

    arch: ArchitectureSpec
    weights: list[Tensor]

    def __post_init__(self):
        if len(self.weights) != self.arch.num_layers:
            raise DimensionError("one weight matrix per layer is required")
        for layer, w in zip(self.arch.layers, self.weights):
            if w.shape != (layer.in_dim, layer.out_dim):
                raise DimensionError(
                    f"layer {layer.index}: weight shape {w.shape} != "
                    f"{(layer.in_dim, layer.out_dim)}")

    @classmethod
    def init(cls, arch: ArchitectureSpec, rng: RngState, scale: float = 1.0) -> "Network":
        gen = rng.generator()
        weights = [scale * gen.standard_normal((l.in_dim, l.out_dim)) / np.sqrt(l.in_dim)
                   for l in arch.layers]
        return cls(arch, weights)

    def copy(self) -> "Network":
        return Network(self.arch, [w.copy() for w in self.weights])


@dataclass
class ForwardCache:
    """Cached tensors of one forward pass.

    ``activations[l]`` is the input of layer ``l``; ``preacts[l]`` its output
    before the nonlinearity. Entries are removed by the backward scheduler.
    """

    activations: dict[int, Tensor]
    preacts: dict[int, Tensor]
    output: Tensor
    targets: object
    per_sample_loss: Tensor
    loss: str
    next_backward: int = field(default=-1)

    @property
    def batch_size(self) -> int:
        return self.output.shape[0]


def _act(name: str, s: Tensor) -> Tensor:
    if name == "relu":
        return np.maximum(s, 0.0)
    if name == "tanh":
        return np.tanh(s)
    return s


def _act_grad(name: str, s: Tensor) -> Tensor | None:
    # relu'(0) := 0
    if name == "relu":
        return (s > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - np.tanh(s) ** 2
    return None


def per_sample_losses(loss: str, output: Tensor, targets) -> Tensor:
    """Per-sample losses ``L_i`` of network outputs ``(B, T, p)``."""
    if loss == "per-sample-sum":
        return output.sum(axis=(1, 2))
    if loss == "mean-squared-error":
        diff = output - as_tensor(targets)
        return 0.5 * np.einsum("btp,btp->b", diff, diff)
    if loss == "softmax-cross-entropy":
        labels = np.asarray(targets, dtype=np.int64)
        shifted = output - output.max(axis=2, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=2))
        picked = np.take_along_axis(shifted, labels[..., None], axis=2)[..., 0]
        return (logz - picked).sum(axis=1)
    raise ValueError(f"unknown loss {loss!r}")


def loss_output_grad(loss: str, output: Tensor, targets) -> Tensor:
    """Gradient of ``sum_i L_i`` with respect to the network output."""
    if loss == "per-sample-sum":
        return np.ones_like(output)
    if loss == "mean-squared-error":
        return output - as_tensor(targets)
    if loss == "softmax-cross-entropy":
        labels = np.asarray(targets, dtype=np.int64)
        shifted = output - output.max(axis=2, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=2, keepdims=True)
        np.put_along_axis(probs, labels[..., None],
                          np.take_along_axis(probs, labels[..., None], axis=2) - 1.0, axis=2)
        return probs
    raise ValueError(f"unknown loss {loss!r}")


def _check_targets(arch: ArchitectureSpec, B: int, targets) -> None:
    T, p = arch.seq_len, arch.layers[-1].out_dim
    if arch.loss == "mean-squared-error":
        if np.shape(targets) != (B, T, p):
            raise DimensionError(f"targets shape {np.shape(targets)} != {(B, T, p)}")
    elif arch.loss == "softmax-cross-entropy":
        if np.shape(targets) != (B, T):
            raise DimensionError(f"label shape {np.shape(targets)} != {(B, T)}")


def forward(net: Network, batch: Tensor, targets=None) -> ForwardCache:
    """Run the network and cache every layer input and pre-activation."""
    arch = net.arch
    a = as_tensor(batch)
    first = arch.layers[0]
    if a.ndim == 2:
        a = a[:, None, :]
    if a.ndim != 3 or a.shape[1:] != (first.seq_len, first.in_dim):
        raise DimensionError(
            f"batch shape {a.shape} does not match (B, {first.seq_len}, {first.in_dim})")
    B = a.shape[0]
    _check_targets(arch, B, targets)
    activations, preacts = {}, {}
    for layer, w in zip(arch.layers, net.weights):
        activations[layer.index] = a
        s = matmul(a.reshape(-1, layer.in_dim), w).reshape(B, layer.seq_len, layer.out_dim)
        preacts[layer.index] = s
        a = _act(layer.activation, s)
    losses = per_sample_losses(arch.loss, a, targets)
    return ForwardCache(activations, preacts, a, targets, losses, arch.loss,
                        next_backward=arch.num_layers - 1)


def backward_layer(net: Network, cache: ForwardCache, l: int,
                   upstream: Tensor | None = None) -> Tensor:
    """Output gradient ``dL/ds_l`` of layer ``l``.

    For the top layer ``upstream`` is ignored and the gradient comes from the
    loss. Otherwise ``upstream`` must be ``dL/ds_{l+1}``. Parameter gradients
    are not formed here.
    """
    arch = net.arch
    if l != cache.next_backward:
        raise SchedulingError(
            f"backward requested for layer {l}, expected layer {cache.next_backward}")
    if l != arch.num_layers - 1 and upstream is None:
        raise SchedulingError(f"layer {l} needs the output gradient of layer {l + 1}")
    layer = arch.layers[l]
    s = cache.preacts.pop(l)
    if l == arch.num_layers - 1:
        grad = loss_output_grad(cache.loss, cache.output, cache.targets)
    else:
        above = arch.layers[l + 1]
        B = upstream.shape[0]
        grad = matmul(upstream.reshape(-1, above.out_dim), net.weights[l + 1].T)
        grad = grad.reshape(B, above.seq_len, above.in_dim)
    deriv = _act_grad(layer.activation, s)
    if deriv is not None:
        grad = grad * deriv
    cache.next_backward = l - 1
    return grad


def ghost_norm(a: Tensor, out_grad: Tensor) -> Tensor:
    """Per-sample ``||a_i^T G_i||_F^2`` without forming the d x p gradients."""
    a = as_tensor(a)
    g = as_tensor(out_grad)
    if a.ndim != 3 or g.ndim != 3 or a.shape[:2] != g.shape[:2]:
        raise DimensionError(f"activation {a.shape} and output gradient {g.shape} "
                             "must share batch and sequence axes")
    if a.shape[1] == 1:
        return np.einsum("bd,bd->b", a[:, 0], a[:, 0]) * np.einsum("bp,bp->b", g[:, 0], g[:, 0])
    gram_a = np.einsum("btd,bsd->bts", a, a)
    gram_g = np.einsum("btp,bsp->bts", g, g)
    return np.einsum("bts,bts->b", gram_a, gram_g)


def clipped_weight_grad(a: Tensor, out_grad: Tensor, clip_factors: Tensor) -> Tensor:
    """``a^T diag(C) dL/ds`` summed over the batch, as a single matmul."""
    a = as_tensor(a)
    g = as_tensor(out_grad)
    c = as_tensor(clip_factors)
    B = a.shape[0]
    if c.shape != (B,) or g.shape[:2] != a.shape[:2]:
        raise DimensionError(f"clip factors {c.shape}, activation {a.shape} and "
                             f"output gradient {g.shape} disagree on the batch")
    if np.any(c < 0):
        raise ValueError("clip factors must be non-negative")
    scaled = g * c[:, None, None]
    return matmul(a.reshape(-1, a.shape[2]).T, scaled.reshape(-1, g.shape[2]))


def per_sample_grads(a: Tensor, out_grad: Tensor) -> Tensor:
    """Materialized per-sample weight gradients, shape ``(B, d, p)``."""
    return np.einsum("btd,btp->bdp", as_tensor(a), as_tensor(out_grad))


def total_loss(net: Network, batch: Tensor, targets=None) -> float:
    return float(forward(net, batch, targets).per_sample_loss.sum())


def full_gradient(net: Network, batch: Tensor, targets=None) -> list[Tensor]:
    """Unclipped gradient of ``sum_i L_i`` for every layer."""
    cache = forward(net, batch, targets)
    grads: list[Tensor] = [None] * net.arch.num_layers  # type: ignore[list-item]
    upstream = None
    for l in reversed(range(net.arch.num_layers)):
        upstream = backward_layer(net, cache, l, upstream)
        grads[l] = clipped_weight_grad(cache.activations[l], upstream,
                                       np.ones(cache.batch_size))
    return grads
