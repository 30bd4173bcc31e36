"""Renyi-DP accounting for repeated Gaussian mechanisms.

Every step is treated as a full-batch Gaussian mechanism; no subsampling
amplification is applied, so the reported epsilon is an upper bound that is
larger than amplified accountants would give for ``B < N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

DEFAULT_ALPHAS: tuple[float, ...] = tuple(1 + k / 4 for k in range(1, 17)) + (8.0, 16.0, 32.0, 64.0)
SIGMA_FLOOR = 1e-3
SIGMA_CEIL = 1e6


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyLedger:
    sigma: float
    steps: int
    delta: float
    sensitivity: float = 1.0
    alphas: tuple[float, ...] = field(default=DEFAULT_ALPHAS)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.sensitivity > 0:
            raise ValueError("sensitivity must be positive")
        if not self.alphas:
            raise ValueError("empty alpha grid")


def rdp_gaussian(alpha: float, sigma: float, delta_sens: float = 1.0) -> float:
    """RDP of order ``alpha`` of the Gaussian mechanism, ``alpha D^2 / (2 sigma^2)``."""
    if not alpha > 1:
        raise ValueError(f"RDP order must exceed 1, got {alpha}")
    return alpha * delta_sens ** 2 / (2 * sigma ** 2)


def epsilon_curve(ledger: PrivacyLedger) -> list[tuple[float, float]]:
    """``(alpha, epsilon(alpha))`` for every order in the grid."""
    log_inv_delta = math.log(1 / ledger.delta)
    return [(a, ledger.steps * rdp_gaussian(a, ledger.sigma, ledger.sensitivity)
             + log_inv_delta / (a - 1)) for a in ledger.alphas]


def compose_and_convert(ledger: PrivacyLedger) -> float:
    """Epsilon after ``steps`` compositions, minimized over the alpha grid."""
    return min(eps for _, eps in epsilon_curve(ledger))


def epsilon_floor(delta: float, alphas: Sequence[float] = DEFAULT_ALPHAS) -> float:
    """Infimum of attainable epsilon as ``sigma -> infinity``."""
    return min(math.log(1 / delta) / (a - 1) for a in alphas)


def calibrate_sigma(target_eps: float, delta: float, steps: int,
                    alphas: Sequence[float] = DEFAULT_ALPHAS, sensitivity: float = 1.0,
                    rel_slack: float = 1e-3) -> float:
    """Smallest noise multiplier (up to ``rel_slack``) with epsilon <= target.

    Bisection on ``log sigma``; the returned sigma satisfies
    ``target (1 - rel_slack) <= epsilon <= target`` unless it sits on the
    search floor.
    """
    if not target_eps > 0 or math.isinf(target_eps):
        raise CalibrationError(f"target epsilon must be positive and finite, got {target_eps}")
    alphas = tuple(alphas)

    def eps(sigma):
        return compose_and_convert(PrivacyLedger(sigma, steps, delta, sensitivity, alphas))

    if eps(SIGMA_FLOOR) <= target_eps:
        return SIGMA_FLOOR
    if eps(SIGMA_CEIL) > target_eps:
        raise CalibrationError(
            f"epsilon {target_eps} is unattainable with this alpha grid; the floor is "
            f"{epsilon_floor(delta, alphas):.6g}")
    lo, hi = math.log(SIGMA_FLOOR), math.log(SIGMA_CEIL)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e = eps(math.exp(mid))
        if e <= target_eps:
            hi = mid
            if e >= target_eps * (1 - rel_slack):
                break
        else:
            lo = mid
    return math.exp(hi)
