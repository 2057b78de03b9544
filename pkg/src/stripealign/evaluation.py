"""Ranked-retrieval scoring and k-reciprocal re-ranking.

Implements the standard single-query cross-camera protocol: gallery
entries sharing both identity and camera with the query are junk and
skipped, ranking ties break by gallery index, and average precision is the
uninterpolated mean of precision at each correct hit.  ``rerank`` follows
the open-source k-reciprocal encoding method (reciprocal neighbor sets
with candidate expansion, local query expansion, Jaccard distance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AlignmentConfig,
    DistanceMatrix,
    EmbeddingSet,
    RankingResult,
    ValidationError,
    pool_stripes,
)
from .alignment import pairwise_matrix


def _matrix_values(dist) -> np.ndarray:
    if isinstance(dist, DistanceMatrix):
        return dist.values
    return np.asarray(dist, dtype=np.float64)


def rank_queries(
    dist: DistanceMatrix,
    query_meta: tuple[np.ndarray, np.ndarray],
    gallery_meta: tuple[np.ndarray, np.ndarray],
) -> RankingResult:
    """Score a query x gallery distance matrix under the cross-camera protocol.

    ``query_meta`` and ``gallery_meta`` are ``(ids, cams)`` pairs.  For each
    query the gallery is sorted ascending (ties by gallery index), entries
    with the query's id AND camera are dropped as junk, and the remainder
    is scored.  Queries left with no correct match are excluded from the
    CMC and mAP denominators.
    """
    values = _matrix_values(dist)
    q_ids, q_cams = (np.asarray(a, dtype=np.int64) for a in query_meta)
    g_ids, g_cams = (np.asarray(a, dtype=np.int64) for a in gallery_meta)
    n_query, n_gallery = values.shape
    if q_ids.shape != (n_query,) or q_cams.shape != (n_query,):
        raise ValidationError(
            f"query metadata length does not match {n_query} matrix rows"
        )
    if g_ids.shape != (n_gallery,) or g_cams.shape != (n_gallery,):
        raise ValidationError(
            f"gallery metadata length does not match {n_gallery} matrix columns"
        )
    if n_gallery == 0:
        raise ValidationError("gallery is empty")

    per_query_order: list[np.ndarray] = []
    hit_counts = np.zeros(n_gallery, dtype=np.int64)
    average_precisions: list[float] = []
    n_valid = 0
    for q in range(n_query):
        order = np.argsort(values[q], kind="stable")
        junk = (g_ids[order] == q_ids[q]) & (g_cams[order] == q_cams[q])
        kept = order[~junk]
        per_query_order.append(kept)
        good = g_ids[kept] == q_ids[q]
        n_good = int(good.sum())
        if n_good == 0:
            continue
        n_valid += 1
        ranks = np.nonzero(good)[0]  # 0-based positions among kept entries
        hit_counts[ranks[0] :] += 1
        precisions = [(j + 1) / (r + 1) for j, r in enumerate(ranks)]
        average_precisions.append(math.fsum(precisions) / n_good)

    if n_valid == 0:
        raise ValidationError("no query has a valid cross-camera match")
    cmc = hit_counts / n_valid
    return RankingResult(per_query_order, cmc, math.fsum(average_precisions) / n_valid)


def cmc_at(result: RankingResult, rank: int) -> float:
    """CMC value at the given 1-based rank, clamped to the curve length."""
    if rank < 1:
        raise ValidationError(f"rank must be >= 1, got {rank}")
    return float(result.cmc[min(rank, result.cmc.size) - 1])


def _reciprocal_neighbors(initial_rank: np.ndarray, i: int, k: int) -> np.ndarray:
    forward = initial_rank[i, : k + 1]
    backward = initial_rank[forward, : k + 1]
    return forward[np.any(backward == i, axis=1)]


def rerank(
    dist_qg: DistanceMatrix,
    dist_qq: DistanceMatrix,
    dist_gg: DistanceMatrix,
    k1: int = 20,
    k2: int = 6,
    lambda_value: float = 0.3,
) -> DistanceMatrix:
    """k-reciprocal re-ranking of a query x gallery distance matrix.

    Queries and gallery are pooled into one collection; each element gets a
    sparse weight vector over its expanded k-reciprocal neighbor set
    (softmax of negated distances), smoothed by local query expansion over
    the ``k2`` nearest forward neighbors.  The output blends the original
    distances with the pairwise Jaccard distance of these vectors:
    ``lambda * original + (1 - lambda) * jaccard``, so ``lambda_value=1``
    returns the input matrix unchanged.
    """
    qg = _matrix_values(dist_qg)
    qq = _matrix_values(dist_qq)
    gg = _matrix_values(dist_gg)
    n_query, n_gallery = qg.shape
    if qq.shape != (n_query, n_query):
        raise ValidationError(
            f"query-query matrix must be ({n_query}, {n_query}), got {qq.shape}"
        )
    if gg.shape != (n_gallery, n_gallery):
        raise ValidationError(
            f"gallery-gallery matrix must be ({n_gallery}, {n_gallery}), "
            f"got {gg.shape}"
        )
    if not k1 > k2 >= 1:
        raise ValidationError(f"need k1 > k2 >= 1, got k1={k1}, k2={k2}")
    if k1 >= n_gallery:
        raise ValidationError(
            f"k1={k1} must be smaller than the gallery size {n_gallery}"
        )
    if not 0 <= lambda_value <= 1:
        raise ValidationError(f"lambda must be in [0, 1], got {lambda_value}")

    n_all = n_query + n_gallery
    dist_all = np.block([[qq, qg], [qg.T, gg]])
    initial_rank = np.argsort(dist_all, axis=1, kind="stable")

    weights = np.zeros((n_all, n_all))
    half_k1 = int(np.around(k1 / 2))
    for i in range(n_all):
        reciprocal = _reciprocal_neighbors(initial_rank, i, k1)
        expanded = reciprocal
        for candidate in reciprocal:
            cand_reciprocal = _reciprocal_neighbors(initial_rank, int(candidate), half_k1)
            overlap = np.intersect1d(cand_reciprocal, reciprocal)
            if overlap.size > 2 / 3 * cand_reciprocal.size:
                expanded = np.append(expanded, cand_reciprocal)
        expanded = np.unique(expanded)
        d = dist_all[i, expanded]
        # softmax of -d, shifted for stability; identical to exp(-d)/sum.
        e = np.exp(-(d - d.min()))
        weights[i, expanded] = e / e.sum()

    if k2 > 1:
        weights = np.stack(
            [weights[initial_rank[i, :k2]].mean(axis=0) for i in range(n_all)]
        )

    query_w = weights[:n_query]
    gallery_w = weights[n_query:]
    jaccard = np.empty((n_query, n_gallery))
    for q in range(n_query):
        shared = np.minimum(query_w[q][None, :], gallery_w).sum(axis=1)
        # rows sum to 1, so union mass = 2 - shared
        jaccard[q] = 1.0 - shared / (2.0 - shared)
    np.clip(jaccard, 0.0, None, out=jaccard)

    final = lambda_value * qg + (1.0 - lambda_value) * jaccard
    return DistanceMatrix(final, "reranked")


@dataclass(frozen=True)
class SweepRow:
    """One evaluated setting of the swept parameter."""

    value: int
    rank1: float
    rank5: float
    rank10: float
    map: float


def evaluate_sets(
    queries: EmbeddingSet,
    gallery: EmbeddingSet,
    cfg: AlignmentConfig,
    metric: str = "lsa",
    threads: int = 1,
) -> RankingResult:
    """Distance matrix plus ranking in one call."""
    dist = pairwise_matrix(queries, gallery, cfg, metric=metric, threads=threads)
    return rank_queries(dist, (queries.ids, queries.cams), (gallery.ids, gallery.cams))


def sweep(
    param: str,
    values: list[int],
    queries: EmbeddingSet,
    gallery: EmbeddingSet,
    cfg: AlignmentConfig | None = None,
    metric: str = "lsa",
    threads: int = 1,
) -> list[SweepRow]:
    """Evaluate retrieval quality across settings of one alignment parameter.

    ``param="window"`` re-evaluates with each window size; ``param="stripes"``
    average-pools adjacent stored stripes down to each requested count,
    which therefore must divide the stored stripe count.  Returns one row
    per value, in the given order.
    """
    if param not in ("stripes", "window"):
        raise ValidationError(f"unknown sweep parameter {param!r}")
    if not values:
        raise ValidationError("sweep needs at least one value")
    base = cfg if cfg is not None else AlignmentConfig(k=queries.k)
    rows = []
    for value in values:
        if param == "window":
            run_q, run_g = queries, gallery
            run_cfg = AlignmentConfig(
                k=base.k,
                window=int(value),
                step=base.step,
                local_weight=base.local_weight,
                global_weight=base.global_weight,
            )
        else:
            run_q = pool_stripes(queries, int(value))
            run_g = pool_stripes(gallery, int(value))
            run_cfg = AlignmentConfig(
                k=int(value),
                step=base.step,
                local_weight=base.local_weight,
                global_weight=base.global_weight,
            )
        result = evaluate_sets(run_q, run_g, run_cfg, metric=metric, threads=threads)
        rows.append(
            SweepRow(
                value=int(value),
                rank1=cmc_at(result, 1),
                rank5=cmc_at(result, 5),
                rank10=cmc_at(result, 10),
                map=result.map,
            )
        )
    return rows
