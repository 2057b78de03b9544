"""Domain types and the on-disk embedding-set format.

An embedding set is a directory holding a JSON manifest plus two raw
little-endian float32 payloads: per-stripe features and global features.
float32 is a storage format only; everything in memory is float64 so that
gradient checks and oracle comparisons have headroom.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
LOCAL_BIN = "local.bin"
GLOBAL_BIN = "global.bin"
STORAGE_DTYPE = "f32le"

METRIC_TAGS = ("global", "lsa", "hard", "combined", "reranked")

_F32 = np.dtype("<f4")


class ValidationError(ValueError):
    """An input violates a structural invariant (shapes, ranges, labels)."""


class DimensionMismatchError(ValidationError):
    """A record's feature shapes disagree with its set's (k, d_local, d_global)."""

    def __init__(self, record: int, detail: str):
        self.record = record
        super().__init__(f"record {record}: {detail}")


class NonFiniteValueError(ValidationError):
    """A NaN or infinity was found; carries the offending coordinates."""

    def __init__(self, record: int, stripe: int | None, coord: int):
        self.record = record
        self.stripe = stripe
        self.coord = coord
        where = "global feature" if stripe is None else f"stripe {stripe}"
        super().__init__(
            f"non-finite value at record {record}, {where}, coord {coord}"
        )


class FormatError(Exception):
    """An embedding directory does not match the documented layout."""


def _readonly_f64(a) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if isinstance(a, np.ndarray) and (out is a or out.base is a):
        out = out.copy()  # never freeze or alias the caller's array
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """One image's feature bundle.

    ``stripe_feats`` is ``(k, d_local)``, row 0 being the top stripe of the
    image; ``global_feat`` has length ``d_global``.
    """

    id: int
    cam: int
    global_feat: np.ndarray
    stripe_feats: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Immutable, index-addressable collection of records with a fixed shape.

    Construction does not validate the records against (k, d_local,
    d_global); call :func:`validate_set` for that.  Safe to share across
    threads once built.
    """

    records: tuple[EmbeddingRecord, ...]
    k: int
    d_local: int
    d_global: int

    @classmethod
    def from_arrays(cls, local, global_feats, ids, cams) -> "EmbeddingSet":
        """Build a set from stacked arrays.

        Parameters
        ----------
        local : array (n, k, d_local)
        global_feats : array (n, d_global)
        ids, cams : int arrays of length n
        """
        local = _readonly_f64(local)
        global_feats = _readonly_f64(global_feats)
        if local.ndim != 3 or global_feats.ndim != 2:
            raise ValidationError(
                f"expected (n,k,d_local) and (n,d_global) arrays, got "
                f"{local.shape} and {global_feats.shape}"
            )
        n, k, d_local = local.shape
        if global_feats.shape[0] != n:
            raise ValidationError(
                f"local holds {n} records but global holds {global_feats.shape[0]}"
            )
        ids = np.asarray(ids, dtype=np.int64)
        cams = np.asarray(cams, dtype=np.int64)
        if ids.shape != (n,) or cams.shape != (n,):
            raise ValidationError("ids/cams must be 1-D with one entry per record")
        records = tuple(
            EmbeddingRecord(int(ids[i]), int(cams[i]), global_feats[i], local[i])
            for i in range(n)
        )
        obj = cls(records, k, d_local, global_feats.shape[1])
        # Pre-populate the stacked-array caches; the records are views into them.
        obj.__dict__["stripe_tensor"] = local
        obj.__dict__["global_matrix"] = global_feats
        obj.__dict__["ids"] = _ro_ints(ids)
        obj.__dict__["cams"] = _ro_ints(cams)
        return obj

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> EmbeddingRecord:
        return self.records[i]

    @cached_property
    def ids(self) -> np.ndarray:
        return _ro_ints([r.id for r in self.records])

    @cached_property
    def cams(self) -> np.ndarray:
        return _ro_ints([r.cam for r in self.records])

    @cached_property
    def stripe_tensor(self) -> np.ndarray:
        """(n, k, d_local) stack of all stripe matrices."""
        return _readonly_f64(np.stack([r.stripe_feats for r in self.records]))

    @cached_property
    def global_matrix(self) -> np.ndarray:
        """(n, d_global) stack of all global vectors."""
        return _readonly_f64(np.stack([r.global_feat for r in self.records]))


def _ro_ints(a) -> np.ndarray:
    out = np.asarray(a, dtype=np.int64)
    if isinstance(a, np.ndarray) and (out is a or out.base is a):
        out = out.copy()  # never freeze or alias the caller's array
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class AlignmentConfig:
    """Parameters of the sliding-window alignment distance.

    ``window`` defaults to half the stripe count.  ``step`` is kept for
    configuration fidelity but the window bounds enumerate every stripe, so
    it does not enter any computation.  The weights combine the local
    alignment distance and the global distance in ``combined`` mode.
    """

    k: int = 8
    window: int | None = None
    step: int = 1
    local_weight: float = 1.0
    global_weight: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"stripe count must be >= 1, got {self.k}")
        if self.window is None:
            object.__setattr__(self, "window", max(1, self.k // 2))
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")
        if self.local_weight < 0 or self.global_weight < 0:
            raise ValidationError("distance weights must be non-negative")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Dense query x gallery distance table plus the metric that produced it."""

    values: np.ndarray
    metric_tag: str

    def __post_init__(self):
        values = _readonly_f64(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValidationError(f"distance matrix must be 2-D, got {values.ndim}-D")
        if self.metric_tag not in METRIC_TAGS:
            raise ValidationError(
                f"unknown metric tag {self.metric_tag!r}; expected one of {METRIC_TAGS}"
            )
        if values.size and not np.isfinite(values).all():
            raise ValidationError("distance matrix contains non-finite entries")
        if values.size and values.min() < 0:
            raise ValidationError("distance matrix contains negative entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class RankingResult:
    """Per-query retrieval order plus the CMC curve and mAP.

    ``cmc[r]`` is the fraction of evaluable queries whose first correct
    match appears within the top r+1 gallery entries.  ``per_query_order``
    lists, for each query, the kept gallery indices sorted by ascending
    distance (junk entries already removed); queries with no valid match
    get their sorted order too but do not contribute to cmc/map.
    """

    per_query_order: list[np.ndarray]
    cmc: np.ndarray
    map: float


def validate_set(s: EmbeddingSet) -> None:
    """Check every record against the set's manifest shape and finiteness.

    Raises
    ------
    DimensionMismatchError
        naming the first offending record.
    NonFiniteValueError
        carrying (record, stripe, coord) of the first NaN/Inf.
    """
    for idx, rec in enumerate(s.records):
        if rec.id < 0 or rec.cam < 0:
            raise ValidationError(
                f"record {idx}: identity and camera labels must be non-negative"
            )
        if rec.stripe_feats.shape != (s.k, s.d_local):
            raise DimensionMismatchError(
                idx,
                f"stripe matrix is {rec.stripe_feats.shape}, "
                f"expected ({s.k}, {s.d_local})",
            )
        if rec.global_feat.shape != (s.d_global,):
            raise DimensionMismatchError(
                idx,
                f"global vector has length {rec.global_feat.shape}, "
                f"expected ({s.d_global},)",
            )
        bad = ~np.isfinite(rec.stripe_feats)
        if bad.any():
            stripe, coord = np.argwhere(bad)[0]
            raise NonFiniteValueError(idx, int(stripe), int(coord))
        bad = ~np.isfinite(rec.global_feat)
        if bad.any():
            coord = np.argwhere(bad)[0][0]
            raise NonFiniteValueError(idx, None, int(coord))


def _resolve_dir(path) -> Path:
    path = Path(path)
    if path.suffix == ".json":
        return path.parent
    return path


def save_embeddings(s: EmbeddingSet, path) -> None:
    """Write a set to ``path`` (a directory) in the manifest + payload layout."""
    base = _resolve_dir(path)
    base.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n": len(s),
        "k": s.k,
        "d_local": s.d_local,
        "d_global": s.d_global,
        "dtype": STORAGE_DTYPE,
        "ids": [int(x) for x in s.ids],
        "cams": [int(x) for x in s.cams],
    }
    with open(base / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    s.stripe_tensor.astype(_F32).tofile(base / LOCAL_BIN)
    s.global_matrix.astype(_F32).tofile(base / GLOBAL_BIN)


def load_embeddings(path) -> EmbeddingSet:
    """Load a set saved by :func:`save_embeddings`.

    ``path`` may be the directory or its ``manifest.json``.  Payload sizes
    must agree exactly with the manifest; re-saving the returned set
    reproduces the payload bytes bit for bit.
    """
    base = _resolve_dir(path)
    manifest_path = base / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"unreadable manifest {manifest_path}: {e}") from e

    try:
        n = int(manifest["n"])
        k = int(manifest["k"])
        d_local = int(manifest["d_local"])
        d_global = int(manifest["d_global"])
        dtype = manifest["dtype"]
        ids = manifest["ids"]
        cams = manifest["cams"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"manifest {manifest_path} is missing fields: {e}") from e
    if dtype != STORAGE_DTYPE:
        raise FormatError(f"unsupported dtype {dtype!r}; only {STORAGE_DTYPE!r}")
    if min(n, k, d_local, d_global) < 0:
        raise FormatError("manifest dimensions must be non-negative")
    if len(ids) != n or len(cams) != n:
        raise FormatError(
            f"manifest lists {len(ids)} ids / {len(cams)} cams for n={n}"
        )

    local = _read_payload(base / LOCAL_BIN, n * k * d_local).reshape(n, k, d_local)
    global_feats = _read_payload(base / GLOBAL_BIN, n * d_global).reshape(n, d_global)
    return EmbeddingSet.from_arrays(local, global_feats, ids, cams)


def _read_payload(path: Path, count: int) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing payload {path}")
    raw = path.read_bytes()
    expected = count * _F32.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"payload {path.name} holds {len(raw)} bytes, expected {expected}"
        )
    return np.frombuffer(raw, dtype=_F32).astype(np.float64)


def pool_stripes(s: EmbeddingSet, k_new: int) -> EmbeddingSet:
    """Average-pool adjacent stripes down to ``k_new`` rows.

    ``k_new`` must divide the stored stripe count; global features, ids and
    cams are unchanged.
    """
    if k_new < 1 or s.k % k_new != 0:
        raise ValidationError(
            f"requested stripe count {k_new} does not divide stored count {s.k}"
        )
    group = s.k // k_new
    local = s.stripe_tensor.reshape(len(s), k_new, group, s.d_local).mean(axis=2)
    return EmbeddingSet.from_arrays(local, s.global_matrix, s.ids, s.cams)
