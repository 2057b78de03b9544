"""Identity-balanced batch construction for metric-learning losses.

Batches hold ``p`` distinct identities with ``k_per_id`` records each, the
structure the triplet loss needs so that every anchor sees at least one
positive and one negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet, ValidationError


@dataclass(frozen=True)
class BatchSpec:
    """How to draw one batch: ``p`` identities times ``k_per_id`` records."""

    p: int = 8
    k_per_id: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.p < 2:
            raise ValidationError(f"need at least 2 identities per batch, got {self.p}")
        if self.k_per_id < 2:
            raise ValidationError(
                f"need at least 2 records per identity, got {self.k_per_id}"
            )


def sample_batch(embeddings: EmbeddingSet, spec: BatchSpec) -> list[int]:
    """Draw an ordered index list of length ``p * k_per_id``.

    Identities are drawn uniformly without replacement; records within an
    identity are drawn without replacement when it has at least
    ``k_per_id`` of them and with replacement otherwise.  Deterministic
    given ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    ids = embeddings.ids
    unique = np.unique(ids)
    if unique.size < spec.p:
        raise ValidationError(
            f"batch needs {spec.p} distinct identities, set has {unique.size}"
        )
    chosen = rng.choice(unique, size=spec.p, replace=False)
    batch: list[int] = []
    for ident in chosen:
        pool = np.nonzero(ids == ident)[0]
        picks = rng.choice(pool, size=spec.k_per_id, replace=pool.size < spec.k_per_id)
        batch.extend(int(i) for i in picks)
    return batch
