"""Dense float64 tensor helpers and counter-addressed Gaussian sampling.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add the shape checks and determinism guarantees the rest of the
package relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

Tensor = np.ndarray


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible."""


class ParameterError(ValueError):
    """Raised for invalid scalar parameters (negative scales, etc.)."""


@dataclass
class RngState:
    """Counter-based random state.

    Every draw uses its own Philox substream keyed by ``seed`` and addressed
    by ``counter``, so any draw can be replayed from ``(seed, counter)``.
    """

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        """Return a generator for the current counter and advance it."""
        bitgen = np.random.Philox(key=self.seed & 0xFFFFFFFFFFFFFFFF,
                                  counter=[0, self.counter, 0, 0])
        self.counter += 1
        return np.random.Generator(bitgen)

    def fork(self, index: int) -> "RngState":
        """Independent child state for parallel work item ``index``."""
        mixed = np.random.SeedSequence([self.seed, index]).generate_state(1, np.uint64)
        return RngState(int(mixed[0]))

    def copy(self) -> "RngState":
        return RngState(self.seed, self.counter)


def as_tensor(x) -> Tensor:
    return np.asarray(x, dtype=np.float64)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors with an explicit shape check."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def gaussian(rng: RngState, shape: Sequence[int] | int, sigma: float) -> Tensor:
    """I.i.d. N(0, sigma^2) samples; ``sigma == 0`` gives exact zeros.

    Advances ``rng`` by one draw in both cases so that the stream position
    does not depend on the noise level.
    """
    if not sigma >= 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    gen = rng.generator()
    if sigma == 0:
        return np.zeros(shape, dtype=np.float64)
    return sigma * gen.standard_normal(shape)


def frobenius_norm_sq(t: Tensor) -> float:
    """Sum of squared entries."""
    t = as_tensor(t)
    return float(np.dot(t.ravel(), t.ravel()))
