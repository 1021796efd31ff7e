"""Ordinal label containers and rank-correlation kernels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateInput,
    DegenerateLength,
    DuplicateIds,
    MismatchedIdSets,
)

Permutation = tuple[int, ...]


@dataclass(frozen=True)
class RankScale:
    num_ranks: int
    value_lo: float
    value_hi: float

    def __post_init__(self):
        if self.num_ranks < 2:
            raise ValueError(f"num_ranks must be >= 2, got {self.num_ranks}")
        if not self.value_lo < self.value_hi:
            raise ValueError(f"empty range [{self.value_lo}, {self.value_hi}]")

    @property
    def span(self) -> float:
        return self.value_hi - self.value_lo

    def contains(self, value: float) -> bool:
        return self.value_lo <= value <= self.value_hi


@dataclass(frozen=True, eq=False)
class ItemBatch:
    """N items with ground-truth values; image ids are 1..N in item order.

    ``features`` (optional, shape ``(N, d)``) holds one row per item, row ``i``
    belonging to image id ``i + 1``.
    """

    batch_id: str
    items: tuple[tuple[int, float], ...]
    truth_perm: Permutation
    scale: RankScale
    features: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        ids = [i for i, _ in self.items]
        n = len(ids)
        if sorted(ids) != list(range(1, n + 1)):
            raise DuplicateIds(f"image ids must cover 1..{n} exactly, got {ids}")
        if sorted(self.truth_perm) != list(range(1, n + 1)):
            raise MismatchedIdSets(f"truth_perm {self.truth_perm} is not a permutation of 1..{n}")
        if tuple(self.truth_perm) != order_by_value(self.items):
            raise ValueError("truth_perm is not sorted by ascending truth value")
        for _, v in self.items:
            if not self.scale.contains(v):
                raise ValueError(f"truth value {v} outside scale range")
        if self.features is not None and self.features.shape[0] != n:
            raise ValueError("features must have one row per item")

    @classmethod
    def from_truths(cls, batch_id, truths, scale, features=None) -> "ItemBatch":
        items = tuple((i + 1, float(v)) for i, v in enumerate(truths))
        return cls(batch_id, items, order_by_value(items), scale, features)

    @property
    def n(self) -> int:
        return len(self.items)

    @property
    def truths(self) -> np.ndarray:
        return np.array([v for _, v in self.items], dtype=float)

    def __eq__(self, other):
        if not isinstance(other, ItemBatch):
            return NotImplemented
        same_feats = (self.features is None and other.features is None) or (
            self.features is not None
            and other.features is not None
            and np.array_equal(self.features, other.features)
        )
        return (
            self.batch_id == other.batch_id
            and self.items == other.items
            and self.truth_perm == other.truth_perm
            and self.scale == other.scale
            and same_feats
        )


def order_by_value(items: Sequence[tuple[int, float]]) -> Permutation:
    """Ids sorted by ascending value, ties broken by ascending id."""
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise DuplicateIds(f"duplicate ids in {ids}")
    return tuple(i for i, _ in sorted(items, key=lambda iv: (iv[1], iv[0])))


def _count_inversions(seq: list[int]) -> int:
    # bottom-up merge sort; seq holds positions so ties cannot occur
    n = len(seq)
    buf = list(seq)
    tmp = [0] * n
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if buf[i] <= buf[j]:
                    tmp[k] = buf[i]
                    i += 1
                else:
                    tmp[k] = buf[j]
                    inv += mid - i
                    j += 1
                k += 1
            tmp[k:hi] = buf[i:mid] + buf[j:hi]
        buf, tmp = tmp, buf
        width *= 2
    return inv


def kendall_tau(a: Sequence[int], b: Sequence[int]) -> float:
    """Kendall's tau-a between two orderings of the same id set.

    A pair is discordant when it appears in opposite relative order in ``a``
    and ``b``; discordant pairs are counted exactly as inversions.
    """
    a, b = list(a), list(b)
    if len(set(a)) != len(a) or len(set(b)) != len(b):
        raise DuplicateIds("permutations must not repeat ids")
    if set(a) != set(b):
        raise MismatchedIdSets(f"id sets differ: {sorted(a)} vs {sorted(b)}")
    n = len(a)
    if n < 2:
        raise DegenerateLength(f"need at least 2 items, got {n}")
    pos_in_b = {x: i for i, x in enumerate(b)}
    discordant = _count_inversions([pos_in_b[x] for x in a])
    pairs = n * (n - 1) // 2
    return (pairs - 2 * discordant) / pairs


def fractional_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(pred_values: Sequence[float], truth_values: Sequence[float]) -> float:
    if len(pred_values) != len(truth_values):
        raise DegenerateInput("sequences differ in length")
    if len(pred_values) < 2:
        raise DegenerateInput("need at least 2 observations")
    rp = fractional_ranks(pred_values)
    rt = fractional_ranks(truth_values)
    rp -= rp.mean()
    rt -= rt.mean()
    sp = float(np.dot(rp, rp))
    st = float(np.dot(rt, rt))
    if sp == 0.0 or st == 0.0:
        raise DegenerateInput("constant input has no rank variance")
    rho = float(np.dot(rp, rt)) / math.sqrt(sp * st)
    return max(-1.0, min(1.0, rho))
