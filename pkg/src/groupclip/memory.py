"""Analytic memory peaks of group-wise clipping and search over groupings.

Peaks are counted in float entries of cached layer inputs and output
gradients. For a contiguous group spanning layers ``lo..hi`` the schedule in
:mod:`groupclip.schedule` holds, at the moment the group's clipping factors
are computed, the inputs of every layer up to ``hi`` and the output gradients
of layers ``lo..hi``::

    peak = B * (sum_{l <= hi} T_l d_l + sum_{lo <= r <= hi} T_r p_r)

This is the ``"ledger"`` convention and the default. The ``"interior"``
convention counts only the output gradients strictly inside the group,
``B * (sum_{l <= hi} T_l d_l + sum_{lo < r < hi} T_r p_r)``; it undercounts
what the schedule actually holds by the two end layers' output gradients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .clipping import GroupingPlan, PlanError, build_grouping
from .engine import ArchitectureSpec

CONVENTIONS = ("ledger", "interior")
EXHAUSTIVE_LIMIT = 12


class SearchSizeError(ValueError):
    """Exhaustive search requested on too many layers."""


@dataclass(frozen=True)
class PeakReport:
    per_group_peaks: tuple[int, ...]
    max_peak: int
    argmax: int

    def to_dict(self) -> dict:
        return {"peaks": list(self.per_group_peaks), "max_peak": self.max_peak,
                "argmax": self.argmax}


def _prefix_sums(arch: ArchitectureSpec):
    act = np.concatenate([[0], np.cumsum([l.seq_len * l.in_dim for l in arch.layers])])
    out = np.concatenate([[0], np.cumsum([l.seq_len * l.out_dim for l in arch.layers])])
    return act.astype(np.int64), out.astype(np.int64)


def segment_peak(arch: ArchitectureSpec, lo: int, hi: int, B: int,
                 convention: str = "ledger") -> int:
    """Peak of one contiguous group ``lo..hi`` (inclusive)."""
    act, out = _prefix_sums(arch)
    return _segment_peak(act, out, lo, hi, B, convention)


def _segment_peak(act, out, lo, hi, B, convention):
    if convention == "ledger":
        return int(B * (act[hi + 1] + out[hi + 1] - out[lo]))
    if convention == "interior":
        inner = out[hi] - out[lo + 1] if hi > lo + 1 else 0
        return int(B * (act[hi + 1] + inner))
    raise ValueError(f"unknown convention {convention!r}")


def analytic_peaks(arch: ArchitectureSpec, plan: GroupingPlan, B: int,
                   convention: str = "ledger") -> PeakReport:
    """Per-group memory peaks and their maximum for a contiguous plan."""
    plan.check(arch)
    if not plan.is_contiguous():
        raise PlanError("analytic peaks are defined for contiguous groups only")
    if B < 1:
        raise ValueError("batch size must be positive")
    act, out = _prefix_sums(arch)
    peaks = tuple(_segment_peak(act, out, g[0], g[-1], B, convention) for g in plan.groups)
    argmax = int(np.argmax(peaks))
    return PeakReport(peaks, peaks[argmax], argmax)


def boundary_sweep(arch: ArchitectureSpec, B: int,
                   convention: str = "ledger") -> list[tuple[int, PeakReport]]:
    """Two-group plans for every boundary, in boundary order."""
    L = arch.num_layers
    return [(k, analytic_peaks(arch, build_grouping(arch, "non-uniform", [k]), B, convention))
            for k in range(1, L)]


def compositions(L: int):
    """All contiguous partitions of ``0..L-1`` as lists of groups."""
    for mask in itertools.product((False, True), repeat=L - 1):
        groups, start = [], 0
        for i, cut in enumerate(mask, start=1):
            if cut:
                groups.append(tuple(range(start, i)))
                start = i
        groups.append(tuple(range(start, L)))
        yield groups


def _rank(entries):
    return sorted(entries, key=lambda e: (e[1].max_peak, e[0].groups))


def _greedy(act, out, L, B, tau, convention):
    """Longest-first groups from the top layer down; None if infeasible."""
    groups = []
    hi = L - 1
    while hi >= 0:
        if _segment_peak(act, out, hi, hi, B, convention) > tau:
            return None
        lo = hi
        while lo > 0 and _segment_peak(act, out, lo - 1, hi, B, convention) <= tau:
            lo -= 1
        groups.append(tuple(range(lo, hi + 1)))
        hi = lo - 1
    return groups[::-1]


def plan_search(arch: ArchitectureSpec, B: int, mode: str = "two-group-sweep",
                max_groups: int | None = None,
                convention: str = "ledger") -> list[tuple[GroupingPlan, PeakReport]]:
    """Ranked ``(plan, report)`` pairs, best (lowest maximum peak) first.

    ``two-group-sweep`` tries every boundary of a two-group plan.
    ``exhaustive`` enumerates all ``2**(L-1)`` contiguous plans (at most
    ``EXHAUSTIVE_LIMIT`` layers). ``balanced-greedy`` sweeps a peak budget and
    grows groups from the top layer downwards, closing a group as soon as
    adding the next layer would exceed the budget; it returns the best plan
    for each achievable group count. ``max_groups`` bounds the number of
    groups in exhaustive and greedy modes.
    """
    L = arch.num_layers
    if mode == "two-group-sweep":
        if L < 2:
            raise PlanError("two-group sweep needs at least two layers")
        entries = [(build_grouping(arch, "non-uniform", [k]), rep)
                   for k, rep in boundary_sweep(arch, B, convention)]
        return _rank(entries)
    if mode == "exhaustive":
        if L > EXHAUSTIVE_LIMIT:
            raise SearchSizeError(f"exhaustive search is limited to {EXHAUSTIVE_LIMIT} "
                                  f"layers, got {L}")
        entries = []
        for groups in compositions(L):
            if max_groups is not None and len(groups) > max_groups:
                continue
            plan = GroupingPlan(tuple(groups), "explicit")
            entries.append((plan, analytic_peaks(arch, plan, B, convention)))
        return _rank(entries)
    if mode == "balanced-greedy":
        act, out = _prefix_sums(arch)
        budgets = sorted({_segment_peak(act, out, lo, hi, B, convention)
                          for hi in range(L) for lo in range(hi + 1)})
        best_by_count: dict[int, tuple[GroupingPlan, PeakReport]] = {}
        for tau in budgets:
            groups = _greedy(act, out, L, B, tau, convention)
            if groups is None or len(groups) in best_by_count:
                continue
            if max_groups is not None and len(groups) > max_groups:
                continue
            plan = GroupingPlan(tuple(groups), "explicit")
            best_by_count[len(groups)] = (plan, analytic_peaks(arch, plan, B, convention))
        return _rank(best_by_count.values())
    raise ValueError(f"unknown search mode {mode!r}")


@lru_cache(maxsize=None)
def bell_number(n: int) -> int:
    """Number of set partitions of ``n`` items (Bell triangle)."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]
