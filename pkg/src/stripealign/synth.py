"""Synthetic stripe-embedding benchmark with controllable misalignment.

Each identity gets a random per-stripe prototype; records are noisy copies
that may be cyclically shifted (bounding-box drift) or partially replaced
by noise (occlusion).  Record 0 of each identity becomes the query under
camera 0 and the rest the gallery under camera 1, so every query has
cross-camera matches.  ``corrupt_partial`` applies erase/crop damage to an
existing set at stripe granularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet, ValidationError, _F32


def _snap_f32(a: np.ndarray) -> np.ndarray:
    """Round through 32-bit storage precision so saved sets reload bitwise."""
    return a.astype(_F32).astype(np.float64)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the generated benchmark.

    ``noise_sigma`` is the within-identity spread around the prototype.
    With probability ``shift_prob`` a record's stripes are cyclically
    shifted down by a uniform 1..max_shift rows; with probability
    ``occl_prob`` a contiguous block of ceil(frac * k) stripes (frac drawn
    from ``occl_frac_range``) is replaced by unit Gaussian noise.  The
    global feature is the mean of the final stripe rows, so ``d_global``
    must equal ``d_local`` (the default).
    """

    n_ids: int
    per_id: int
    k: int = 8
    d_local: int = 16
    d_global: int | None = None
    noise_sigma: float = 0.1
    shift_prob: float = 0.0
    max_shift: int = 1
    occl_prob: float = 0.0
    occl_frac_range: tuple[float, float] = (0.1, 0.3)
    crop_frac_range: tuple[float, float] = (0.2, 0.3)
    seed: int = 0

    def __post_init__(self):
        if self.d_global is None:
            object.__setattr__(self, "d_global", self.d_local)
        if self.n_ids < 1 or self.per_id < 2:
            raise ValidationError(
                "need n_ids >= 1 and per_id >= 2 so every query has a gallery match"
            )
        if self.k < 1 or self.d_local < 1:
            raise ValidationError("k and d_local must be positive")
        if self.d_global != self.d_local:
            raise ValidationError(
                "the global feature is the stripe mean, so d_global must "
                f"equal d_local ({self.d_local}), got {self.d_global}"
            )
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        for name in ("shift_prob", "occl_prob"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValidationError(f"{name} must be in [0, 1], got {p}")
        if not 0 <= self.max_shift < self.k:
            raise ValidationError(
                f"max_shift must be in [0, k), got {self.max_shift} with k={self.k}"
            )
        if self.shift_prob > 0 and self.max_shift < 1:
            raise ValidationError("shift_prob > 0 requires max_shift >= 1")
        for name in ("occl_frac_range", "crop_frac_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi <= 1:
                raise ValidationError(f"{name} must satisfy 0 <= lo <= hi <= 1")


def generate(
    spec: SynthSpec,
) -> tuple[EmbeddingSet, EmbeddingSet, list[np.ndarray]]:
    """Build (query, gallery, ground_truth) sets from a ``SynthSpec``.

    ``ground_truth[q]`` lists the gallery indices holding query q's
    identity; all of them sit under the other camera.  Bitwise
    deterministic given ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    k, d = spec.k, spec.d_local
    n_gallery_per_id = spec.per_id - 1

    q_local, g_local = [], []
    for ident in range(spec.n_ids):
        proto = rng.standard_normal((k, d))
        for copy in range(spec.per_id):
            stripes = proto + spec.noise_sigma * rng.standard_normal((k, d))
            if rng.random() < spec.shift_prob:
                shift = int(rng.integers(1, spec.max_shift + 1))
                stripes = np.roll(stripes, shift, axis=0)
            if rng.random() < spec.occl_prob:
                frac = rng.uniform(*spec.occl_frac_range)
                n_occl = min(math.ceil(frac * k), k)
                start = int(rng.integers(0, k - n_occl + 1))
                stripes[start : start + n_occl] = rng.standard_normal((n_occl, d))
            (q_local if copy == 0 else g_local).append(_snap_f32(stripes))

    def build(stacks: list[np.ndarray], ids: np.ndarray, cam: int) -> EmbeddingSet:
        local = np.stack(stacks)
        global_feats = _snap_f32(local.mean(axis=1))
        cams = np.full(ids.shape, cam, dtype=np.int64)
        return EmbeddingSet.from_arrays(local, global_feats, ids, cams)

    query = build(q_local, np.arange(spec.n_ids, dtype=np.int64), cam=0)
    gallery = build(
        g_local, np.repeat(np.arange(spec.n_ids, dtype=np.int64), n_gallery_per_id), 1
    )
    ground_truth = [
        np.arange(i * n_gallery_per_id, (i + 1) * n_gallery_per_id)
        for i in range(spec.n_ids)
    ]
    return query, gallery, ground_truth


_DEFAULT_FRACS = {"erase": (0.1, 0.3), "crop": (0.2, 0.3)}


def corrupt_partial(
    embeddings: EmbeddingSet,
    mode: str,
    frac_range: tuple[float, float] | None = None,
    seed: int = 0,
) -> EmbeddingSet:
    """Damage every record by a random fraction drawn from ``frac_range``.

    ``erase`` replaces a contiguous block of ceil(frac * k) stripes with
    Gaussian noise at the record's own scale; ``crop`` drops the bottom
    block and re-spreads the remaining stripes by repetition back to k
    rows.  Records whose drawn fraction rounds to zero stripes pass
    through bit-identical.  Identity and camera labels are preserved; the
    global feature of a damaged record is recomputed as its stripe mean
    when dimensions permit.
    """
    if mode not in _DEFAULT_FRACS:
        raise ValidationError(f"mode must be 'erase' or 'crop', got {mode!r}")
    if len(embeddings) == 0:
        raise ValidationError("cannot corrupt an empty set")
    lo, hi = frac_range if frac_range is not None else _DEFAULT_FRACS[mode]
    if not 0 <= lo <= hi <= 1:
        raise ValidationError("frac_range must satisfy 0 <= lo <= hi <= 1")

    rng = np.random.default_rng(seed)
    k = embeddings.k
    local = embeddings.stripe_tensor.copy()
    global_feats = embeddings.global_matrix.copy()
    refresh_global = embeddings.d_global == embeddings.d_local
    for i in range(len(embeddings)):
        frac = rng.uniform(lo, hi)
        n_cut = min(math.ceil(frac * k), k)
        if n_cut == 0:
            continue
        if mode == "erase":
            scale = float(local[i].std()) or 1.0
            start = int(rng.integers(0, k - n_cut + 1))
            local[i, start : start + n_cut] = scale * rng.standard_normal(
                (n_cut, local.shape[2])
            )
        else:
            n_cut = min(n_cut, k - 1)  # keep at least one stripe to spread
            kept = local[i, : k - n_cut]
            local[i] = kept[np.arange(k) * (k - n_cut) // k]
        local[i] = _snap_f32(local[i])
        if refresh_global:
            global_feats[i] = _snap_f32(local[i].mean(axis=0))
    return EmbeddingSet.from_arrays(
        local, global_feats, embeddings.ids, embeddings.cams
    )
