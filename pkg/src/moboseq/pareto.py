"""Pareto bookkeeping under a maximization convention for every objective."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence as Seq

import numpy as np

from .errors import DimensionMismatch, LengthMismatch, UnsupportedDimension

MAX_HV_OBJECTIVES = 4


def dominates(a: Seq[float], b: Seq[float]) -> bool:
    """True iff ``a`` is at least as good as ``b`` everywhere and differs somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"score vectors of shapes {a.shape} and {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


def _domination_matrix(P: np.ndarray) -> np.ndarray:
    ge = np.all(P[:, None, :] >= P[None, :, :], axis=2)
    gt = np.any(P[:, None, :] > P[None, :, :], axis=2)
    return ge & gt


def non_dominated_sort(points: Seq[Seq[float]]) -> list[list[int]]:
    """Partition point indices into successive non-dominated fronts.

    Within a front, indices keep their input order.
    """
    P = np.asarray(points, dtype=float)
    n = len(P)
    if n == 0:
        return []
    P = P.reshape(n, -1)
    dom = _domination_matrix(P)
    counts = dom.sum(axis=0)
    fronts: list[list[int]] = []
    current = np.flatnonzero(counts == 0)
    while current.size:
        fronts.append(current.tolist())
        counts = counts - dom[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
    return fronts


def nondominated_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of the non-dominated rows; scales to large point sets."""
    P = np.asarray(points, dtype=float)
    n = len(P)
    if n == 0:
        return np.zeros(0, dtype=bool)
    # lexicographic descending sweep: a point can only be dominated by an earlier one
    order = np.lexsort(tuple(-P[:, j] for j in reversed(range(P.shape[1]))))
    keep: list[int] = []
    front = np.empty((0, P.shape[1]))
    for i in order:
        p = P[i]
        if front.shape[0]:
            ge = np.all(front >= p, axis=1)
            if np.any(ge & np.any(front > p, axis=1)):
                continue
        keep.append(i)
        front = np.vstack([front, p])
    mask = np.zeros(n, dtype=bool)
    mask[keep] = True
    return mask


def crowding_distance(front: Seq[Seq[float]]) -> np.ndarray:
    P = np.asarray(front, dtype=float)
    n = len(P)
    if n == 0:
        return np.zeros(0)
    P = P.reshape(n, -1)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for j in range(P.shape[1]):
        order = np.argsort(P[:, j], kind="stable")
        col = P[order, j]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = col[-1] - col[0]
        if span <= 0:
            continue
        dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


# ---------------------------------------------------------------------------
# Hypervolume
# ---------------------------------------------------------------------------


def hypervolume(points: Seq[Seq[float]], ref: Seq[float]) -> float:
    """Lebesgue measure of the union of boxes ``[ref, p]``.

    Points that are not strictly better than ``ref`` in every coordinate are
    ignored.
    """
    ref = np.asarray(ref, dtype=float).ravel()
    k = ref.shape[0]
    if not 1 <= k <= MAX_HV_OBJECTIVES:
        raise UnsupportedDimension(f"exact hypervolume supports 1 to {MAX_HV_OBJECTIVES} objectives, got {k}")
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return 0.0
    P = P.reshape(-1, k)
    if P.shape[1] != k:
        raise DimensionMismatch(f"points have {P.shape[1]} objectives, reference has {k}")
    P = P[np.all(P > ref, axis=1)] - ref
    if P.shape[0] == 0:
        return 0.0
    if k > 2:
        P = P[nondominated_mask(P)]
    return float(_hv(P))


def _hv(P: np.ndarray) -> float:
    k = P.shape[1]
    if k == 1:
        return float(P[:, 0].max())
    if k == 2:
        return _hv2(P)
    order = np.argsort(-P[:, -1], kind="stable")
    P = P[order]
    z = P[:, -1]
    nxt = np.append(z[1:], 0.0)
    total = 0.0
    for i in range(len(P)):
        depth = z[i] - nxt[i]
        if depth > 0:
            total += depth * _hv(P[: i + 1, :-1])
    return total


def _hv2(P: np.ndarray) -> float:
    order = np.argsort(-P[:, 0], kind="stable")
    x = P[order, 0]
    y = np.maximum.accumulate(P[order, 1])
    widths = x - np.append(x[1:], 0.0)
    return float(np.dot(widths, y))


def hv2d_batch(points: np.ndarray, ref: Seq[float]) -> np.ndarray:
    """2-objective hypervolume of many point sets at once.

    ``points`` has shape ``(..., n, 2)``; the result has shape ``(...)``.
    Coordinates below the reference are clipped onto it, which leaves each
    set's hypervolume unchanged.
    """
    ref = np.asarray(ref, dtype=float)
    P = np.maximum(points - ref, 0.0)
    order = np.argsort(-P[..., 0], axis=-1, kind="stable")
    x = np.take_along_axis(P[..., 0], order, axis=-1)
    y = np.maximum.accumulate(np.take_along_axis(P[..., 1], order, axis=-1), axis=-1)
    widths = x - np.concatenate([x[..., 1:], np.zeros(x.shape[:-1] + (1,))], axis=-1)
    return np.sum(widths * y, axis=-1)


def default_reference(initial_scores: Seq[Seq[float]]) -> np.ndarray:
    """Per-objective minimum of the initial scores minus 10% of its magnitude.

    A minimum of exactly zero maps to -0.1.
    """
    S = np.asarray(initial_scores, dtype=float)
    if S.size == 0:
        raise ValueError("need at least one initial score vector")
    m = S.reshape(len(S), -1).min(axis=0)
    return np.where(m == 0.0, -0.1, m - 0.1 * np.abs(m))


# ---------------------------------------------------------------------------
# Incremental front
# ---------------------------------------------------------------------------


@dataclass
class ParetoState:
    reference: np.ndarray
    ids: list = field(default_factory=list)
    points: np.ndarray | None = None
    hypervolume: float = 0.0

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=float).ravel()
        if self.points is None:
            self.points = np.empty((0, self.reference.shape[0]))

    @property
    def k(self) -> int:
        return self.reference.shape[0]

    def update(self, item_id: Hashable, score: Seq[float]) -> float:
        """Insert one scored item; return the hypervolume gain."""
        p = np.asarray(score, dtype=float).ravel()
        if p.shape[0] != self.k:
            raise DimensionMismatch(f"score has {p.shape[0]} objectives, front has {self.k}")
        F = self.points
        if F.shape[0]:
            if np.any(np.all(F >= p, axis=1) & np.any(F > p, axis=1)):
                return 0.0
            beaten = np.all(p >= F, axis=1) & np.any(p > F, axis=1)
            if beaten.any():
                keep = ~beaten
                self.points = F[keep]
                self.ids = [i for i, kept in zip(self.ids, keep) if kept]
        self.points = np.vstack([self.points, p])
        self.ids.append(item_id)
        old = self.hypervolume
        self.hypervolume = hypervolume(self.points, self.reference)
        return max(self.hypervolume - old, 0.0)

    def update_many(self, ids: Seq[Hashable], scores: np.ndarray) -> float:
        """Merge a block of scored items; equivalent to repeated :meth:`update`."""
        scores = np.asarray(scores, dtype=float).reshape(len(ids), self.k)
        allp = np.vstack([self.points, scores])
        all_ids = list(self.ids) + list(ids)
        mask = nondominated_mask(allp)
        self.points = allp[mask]
        self.ids = [i for i, m in zip(all_ids, mask) if m]
        old = self.hypervolume
        self.hypervolume = hypervolume(self.points, self.reference)
        return max(self.hypervolume - old, 0.0)


def update_front(state: ParetoState, new: tuple[Hashable, Seq[float]]) -> tuple[ParetoState, float]:
    delta = state.update(*new)
    return state, delta


# ---------------------------------------------------------------------------
# Diversity
# ---------------------------------------------------------------------------


def shannon_entropy(sequences: Seq[str], base: float | None = None) -> float:
    """Mean per-position Shannon entropy of the letter distribution."""
    if len(sequences) == 0:
        raise ValueError("need at least one sequence")
    length = len(sequences[0])
    if any(len(s) != length for s in sequences):
        raise LengthMismatch("sequences must share one length")
    n = len(sequences)
    total = 0.0
    for column in zip(*sequences):
        for c in Counter(column).values():
            q = c / n
            total -= q * math.log(q)
    h = total / length
    if base is not None:
        h /= math.log(base)
    return h
