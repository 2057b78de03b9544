"""Stripe-alignment distances.

Two records are compared stripe-by-stripe.  The sliding alignment lets
stripe ``i`` of one record match any stripe of the other inside a window
centred on ``i``, takes the cheapest match per stripe, and scores the pair
with the smaller of the two directed sums.  The degenerate window of one
stripe reproduces the fixed diagonal ("hard") matching.  Global features
are compared with plain Euclidean distance; the combined metric is a
weighted sum of the two.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    AlignmentConfig,
    DistanceMatrix,
    EmbeddingRecord,
    EmbeddingSet,
    ValidationError,
)

# Gallery records processed per chunk inside one query row.  Fixed so the
# arithmetic is identical regardless of thread count.
_GALLERY_CHUNK = 512


class WindowBounds(NamedTuple):
    """Inclusive 1-based stripe interval a stripe is allowed to match."""

    lo: int
    hi: int


@dataclass(frozen=True, eq=False)
class AlignmentBreakdown:
    """Directed per-stripe minima in both directions plus the final value.

    ``lsa`` equals ``min(sum(per_stripe_ab), sum(per_stripe_ba))`` and
    ``chosen_direction`` records which directed sum attained it ("ab" on
    ties).
    """

    per_stripe_ab: np.ndarray
    per_stripe_ba: np.ndarray
    chosen_direction: str
    lsa: float


def window_bounds(i: int, k: int, window: int) -> WindowBounds:
    """Matching interval for stripe ``i`` (1-based) of a k-stripe record.

    The interval is ``[max(1, i - window//2), min(k, i + window//2)]``;
    it always contains ``i`` itself.
    """
    if not 1 <= i <= k:
        raise IndexError(f"stripe index {i} out of range 1..{k}")
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    half = window // 2
    return WindowBounds(max(1, i - half), min(k, i + half))


def _window_mask(k: int, window: int) -> np.ndarray:
    """(k, k) boolean mask; row i-1 is True on the columns stripe i may match."""
    half = window // 2
    idx = np.arange(1, k + 1)
    lo = np.maximum(1, idx - half)
    hi = np.minimum(k, idx + half)
    return (idx[None, :] >= lo[:, None]) & (idx[None, :] <= hi[:, None])


def stripe_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two stripe (or any equal-length) vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"vector lengths differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


def _cross_stripe_distances(a_stripes: np.ndarray, b_stripes: np.ndarray) -> np.ndarray:
    """(k, k) matrix with entry (i, j) = ||a_i - b_j||."""
    diff = a_stripes[:, None, :] - b_stripes[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _check_stripes(a_stripes: np.ndarray, b_stripes: np.ndarray, k: int) -> None:
    if a_stripes.ndim != 2 or b_stripes.ndim != 2:
        raise ValidationError("stripe features must be 2-D (k, d) matrices")
    if a_stripes.shape[0] != k or b_stripes.shape[0] != k:
        raise ValidationError(
            f"stripe counts {a_stripes.shape[0]}/{b_stripes.shape[0]} "
            f"do not match configured k={k}"
        )
    if a_stripes.shape[1] != b_stripes.shape[1]:
        raise ValidationError(
            f"stripe dimensions differ: {a_stripes.shape[1]} vs {b_stripes.shape[1]}"
        )


def directed_align(
    a_stripes: np.ndarray, b_stripes: np.ndarray, cfg: AlignmentConfig
) -> np.ndarray:
    """Per-stripe shortest distances from rows of ``a`` into windows of ``b``.

    Element i is ``min over j in window_bounds(i+1) of ||a_i - b_j||``.  The
    diagonal pair always lies inside its own window, so the minimum never
    exceeds the fixed-matching distance.
    """
    a_stripes = np.asarray(a_stripes, dtype=np.float64)
    b_stripes = np.asarray(b_stripes, dtype=np.float64)
    _check_stripes(a_stripes, b_stripes, cfg.k)
    cross = _cross_stripe_distances(a_stripes, b_stripes)
    mask = _window_mask(cfg.k, cfg.window)
    return np.where(mask, cross, np.inf).min(axis=1)


def lsa_distance(
    a: EmbeddingRecord, b: EmbeddingRecord, cfg: AlignmentConfig
) -> AlignmentBreakdown:
    """Sliding-window alignment distance between two records.

    Both directed sums are formed (a's stripes against b's windows and the
    reverse) and the smaller one is the distance; this makes the value
    exactly symmetric in its arguments.
    """
    a_stripes = np.asarray(a.stripe_feats, dtype=np.float64)
    b_stripes = np.asarray(b.stripe_feats, dtype=np.float64)
    _check_stripes(a_stripes, b_stripes, cfg.k)
    cross = _cross_stripe_distances(a_stripes, b_stripes)
    mask = _window_mask(cfg.k, cfg.window)
    ab = np.where(mask, cross, np.inf).min(axis=1)
    ba = np.where(mask, cross.T, np.inf).min(axis=1)
    sum_ab = float(np.sum(ab))
    sum_ba = float(np.sum(ba))
    if sum_ab <= sum_ba:
        return AlignmentBreakdown(ab, ba, "ab", sum_ab)
    return AlignmentBreakdown(ab, ba, "ba", sum_ba)


def hard_align_distance(a: EmbeddingRecord, b: EmbeddingRecord) -> float:
    """Fixed diagonal matching: sum over i of ||a_i - b_i||."""
    a_stripes = np.asarray(a.stripe_feats, dtype=np.float64)
    b_stripes = np.asarray(b.stripe_feats, dtype=np.float64)
    if a_stripes.shape != b_stripes.shape:
        raise ValidationError(
            f"stripe shapes differ: {a_stripes.shape} vs {b_stripes.shape}"
        )
    diff = a_stripes - b_stripes
    return float(np.sum(np.sqrt(np.sum(diff * diff, axis=-1))))


def global_distance(a: EmbeddingRecord, b: EmbeddingRecord) -> float:
    """Euclidean distance between the global feature vectors."""
    return stripe_distance(a.global_feat, b.global_feat)


def combined_distance(
    a: EmbeddingRecord, b: EmbeddingRecord, cfg: AlignmentConfig
) -> float:
    """Weighted sum of the global and sliding-alignment distances."""
    return cfg.global_weight * global_distance(a, b) + cfg.local_weight * lsa_distance(
        a, b, cfg
    ).lsa


def _row_global(q_global: np.ndarray, gallery_global: np.ndarray) -> np.ndarray:
    diff = gallery_global - q_global[None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _row_hard(q_stripes: np.ndarray, gallery_stripes: np.ndarray) -> np.ndarray:
    out = np.empty(gallery_stripes.shape[0])
    for start in range(0, gallery_stripes.shape[0], _GALLERY_CHUNK):
        block = gallery_stripes[start : start + _GALLERY_CHUNK]
        diff = block - q_stripes[None, :, :]
        out[start : start + block.shape[0]] = np.sum(
            np.sqrt(np.sum(diff * diff, axis=-1)), axis=-1
        )
    return out


def _row_lsa(
    q_stripes: np.ndarray, gallery_stripes: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    out = np.empty(gallery_stripes.shape[0])
    for start in range(0, gallery_stripes.shape[0], _GALLERY_CHUNK):
        block = gallery_stripes[start : start + _GALLERY_CHUNK]
        # cross[i, g, j] = ||q_i - block[g, j]||
        diff = q_stripes[:, None, None, :] - block[None, :, :, :]
        cross = np.sqrt(np.sum(diff * diff, axis=-1))
        ab = np.where(mask[:, None, :], cross, np.inf).min(axis=-1)
        ba = np.where(mask[:, None, :], cross.transpose(2, 1, 0), np.inf).min(axis=-1)
        # Sum stripes along a contiguous axis so the reduction tree matches
        # the one np.sum uses on the per-pair (k,) vectors, bit for bit.
        ab_sum = np.ascontiguousarray(ab.T).sum(axis=-1)
        ba_sum = np.ascontiguousarray(ba.T).sum(axis=-1)
        out[start : start + block.shape[0]] = np.minimum(ab_sum, ba_sum)
    return out


def _check_conformance(queries: EmbeddingSet, gallery: EmbeddingSet, cfg: AlignmentConfig):
    if queries.k != gallery.k:
        raise ValidationError(
            f"query and gallery stripe counts differ: {queries.k} vs {gallery.k}"
        )
    if queries.d_local != gallery.d_local:
        raise ValidationError(
            f"query and gallery stripe dimensions differ: "
            f"{queries.d_local} vs {gallery.d_local}"
        )
    if queries.d_global != gallery.d_global:
        raise ValidationError(
            f"query and gallery global dimensions differ: "
            f"{queries.d_global} vs {gallery.d_global}"
        )
    if queries.k != cfg.k:
        raise ValidationError(
            f"sets carry k={queries.k} but the alignment config says k={cfg.k}"
        )


def pairwise_matrix(
    queries: EmbeddingSet,
    gallery: EmbeddingSet,
    cfg: AlignmentConfig,
    metric: str = "lsa",
    threads: int = 1,
) -> DistanceMatrix:
    """Dense query x gallery distance matrix under the chosen metric.

    Work is partitioned by query row, and each row is computed by the same
    per-row routine whatever the partitioning, so the result is
    bit-identical for any ``threads`` value.
    """
    if metric not in ("global", "lsa", "hard", "combined"):
        raise ValidationError(f"unknown metric {metric!r}")
    _check_conformance(queries, gallery, cfg)

    g_stripes = gallery.stripe_tensor
    g_global = gallery.global_matrix
    q_stripes = queries.stripe_tensor
    q_global = queries.global_matrix
    mask = _window_mask(cfg.k, cfg.window)

    def one_row(i: int) -> np.ndarray:
        if metric == "global":
            return _row_global(q_global[i], g_global)
        if metric == "hard":
            return _row_hard(q_stripes[i], g_stripes)
        if metric == "lsa":
            return _row_lsa(q_stripes[i], g_stripes, mask)
        return cfg.global_weight * _row_global(
            q_global[i], g_global
        ) + cfg.local_weight * _row_lsa(q_stripes[i], g_stripes, mask)

    n_q = len(queries)
    if threads <= 1 or n_q <= 1:
        rows = [one_row(i) for i in range(n_q)]
    else:
        blocks = np.array_split(np.arange(n_q), min(threads, n_q))
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            chunks = pool.map(lambda blk: [one_row(int(i)) for i in blk], blocks)
            rows = [row for chunk in chunks for row in chunk]

    if rows:
        values = np.vstack(rows)
    else:
        values = np.zeros((0, len(gallery)))
    return DistanceMatrix(values, metric)
