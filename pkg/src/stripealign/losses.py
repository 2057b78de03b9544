"""Metric-learning losses with analytic gradients.

Identity classification with label smoothing, the adaptively weighted
hard-mining triplet loss, and center loss with its running-mean update.
Losses return ``(value, gradient)`` pairs; gradients are exact derivatives
of the returned value, checked against central finite differences by the
test suite and by the ``loss-check`` CLI command.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass
from functools import cached_property

import numpy as np

from .core import ValidationError, _readonly_f64, _ro_ints


@dataclass(frozen=True, eq=False)
class LossBatchView:
    """Anchor/positive/negative structure over one batch.

    ``distance`` is the precomputed pairwise matrix for the branch being
    trained (global distance for the global branch, sliding-alignment
    distance for the local branch).  For anchor ``a``, ``positives(a)`` are
    the same-identity samples excluding ``a`` itself and ``negatives(a)``
    the rest.  Pass ``validate=False`` to skip the symmetry check, e.g.
    when probing single matrix entries.
    """

    features: np.ndarray
    labels: np.ndarray
    distance: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        features = _readonly_f64(self.features)
        labels = _ro_ints(self.labels)
        distance = _readonly_f64(self.distance)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "distance", distance)
        n = labels.shape[0]
        if features.ndim != 2 or features.shape[0] != n:
            raise ValidationError("features must be (n, d) with one row per label")
        if distance.shape != (n, n):
            raise ValidationError(
                f"distance must be ({n}, {n}), got {distance.shape}"
            )
        if validate:
            if not np.isfinite(distance).all():
                raise ValidationError("distance matrix contains non-finite entries")
            if np.abs(np.diagonal(distance)).max(initial=0.0) > 1e-12:
                raise ValidationError("distance matrix must have a zero diagonal")
            if not np.allclose(distance, distance.T, atol=1e-8, rtol=0):
                raise ValidationError("distance matrix must be symmetric")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @cached_property
    def _positive_sets(self) -> list[np.ndarray]:
        out = []
        for a in range(len(self)):
            same = np.nonzero(self.labels == self.labels[a])[0]
            out.append(same[same != a])
        return out

    @cached_property
    def _negative_sets(self) -> list[np.ndarray]:
        return [np.nonzero(self.labels != self.labels[a])[0] for a in range(len(self))]

    def positives(self, a: int) -> np.ndarray:
        return self._positive_sets[a]

    def negatives(self, a: int) -> np.ndarray:
        return self._negative_sets[a]


@dataclass(frozen=True, eq=False)
class CenterTable:
    """One learned center per identity class plus per-class usage counters."""

    centers: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        centers = _readonly_f64(self.centers)
        counts = _ro_ints(self.counts)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "counts", counts)
        if centers.ndim != 2:
            raise ValidationError("centers must be a (C, d) matrix")
        if counts.shape != (centers.shape[0],):
            raise ValidationError("counts must hold one entry per class")
        if not np.isfinite(centers).all():
            raise ValidationError("centers contain non-finite entries")

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> "CenterTable":
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes, dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class LossConfig:
    """Hyperparameters of the combined training objective.

    ``branch_triplet_weight`` scales each branch's triplet term;
    ``center_weight`` scales the summed center terms.  ``num_classes``
    is optional and, when positive, checked against the logits width.
    """

    margin: float = 0.3
    center_weight: float = 0.05
    branch_triplet_weight: float = 0.3
    label_smoothing: float = 0.1
    num_classes: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise ValidationError("margin must be non-negative")
        if self.center_weight < 0:
            raise ValidationError("center weight must be non-negative")
        if self.branch_triplet_weight < 0:
            raise ValidationError("branch triplet weight must be non-negative")
        if not 0 <= self.label_smoothing < 1:
            raise ValidationError("label smoothing must be in [0, 1)")


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def id_loss(
    logits: np.ndarray, labels: np.ndarray, smoothing: float = 0.1
) -> tuple[float, np.ndarray]:
    """Mean smoothed cross-entropy over a batch of classifier logits.

    The target distribution mixes the one-hot label with the uniform
    distribution: ``q = (1 - smoothing) * onehot + smoothing / C``.  Returns
    the scalar loss and its gradient with respect to the logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValidationError("logits must be (n, C)")
    n, num_classes = logits.shape
    if num_classes < 2:
        raise ValidationError("need at least 2 classes")
    if labels.shape != (n,):
        raise ValidationError("labels must be 1-D with one entry per row of logits")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise ValidationError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    if not 0 <= smoothing < 1:
        raise ValidationError("smoothing must be in [0, 1)")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    targets = np.full((n, num_classes), smoothing / num_classes)
    targets[np.arange(n), labels] += 1.0 - smoothing
    loss = float(-(targets * log_probs).sum() / n)
    grad = (np.exp(log_probs) - targets) / n
    return loss, grad


def _anchor_weights(
    distance: np.ndarray, a: int, pos: np.ndarray, neg: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    d_pos = distance[a, pos]
    d_neg = distance[a, neg]
    w_pos = _softmax(d_pos)  # far positives weigh more
    w_neg = _softmax(-d_neg)  # near negatives weigh more
    return d_pos, d_neg, w_pos, w_neg


def triplethard_prehinge(batch: LossBatchView, margin: float = 0.3) -> np.ndarray:
    """Per-anchor value of margin + weighted positives - weighted negatives.

    The hinge in :func:`triplethard_loss` clamps these at zero.
    """
    out = np.empty(len(batch))
    for a in range(len(batch)):
        pos = batch.positives(a)
        neg = batch.negatives(a)
        if pos.size == 0 or neg.size == 0:
            raise ValidationError(
                f"anchor {a} needs at least one positive and one negative"
            )
        d_pos, d_neg, w_pos, w_neg = _anchor_weights(batch.distance, a, pos, neg)
        out[a] = margin + w_pos @ d_pos - w_neg @ d_neg
    return out


def triplethard_loss(
    batch: LossBatchView, margin: float = 0.3
) -> tuple[float, np.ndarray]:
    """Adaptively weighted hard-mining triplet loss over a batch.

    For anchor ``a`` the positives are weighted by a softmax over their
    distances (hard positives are far) and the negatives by a softmax over
    negated distances (hard negatives are near); each weight set sums to
    one.  The per-anchor hinge ``[margin + w_pos @ d_pos - w_neg @ d_neg]_+``
    is averaged over anchors.

    The gradient is taken with respect to the distance entries the loss
    reads: anchor ``a`` reads row ``a`` of the matrix, and every entry is
    treated as an independent input.
    """
    distance = batch.distance
    n = len(batch)
    grad = np.zeros_like(distance)
    total = 0.0
    for a in range(n):
        pos = batch.positives(a)
        neg = batch.negatives(a)
        if pos.size == 0 or neg.size == 0:
            raise ValidationError(
                f"anchor {a} needs at least one positive and one negative"
            )
        d_pos, d_neg, w_pos, w_neg = _anchor_weights(distance, a, pos, neg)
        s_pos = w_pos @ d_pos
        s_neg = w_neg @ d_neg
        h = margin + s_pos - s_neg
        if h <= 0:
            continue
        total += h
        # differentiating w_pos @ d_pos through the softmax gives, per entry
        # q, w_pos[q] * (1 + d_pos[q] - s_pos); the negative branch picks up
        # the opposite sign because its softmax runs over negated distances.
        grad[a, pos] += w_pos * (1.0 + d_pos - s_pos)
        grad[a, neg] -= w_neg * (1.0 - d_neg + s_neg)
    return total / n, grad / n


def center_loss(
    features: np.ndarray, labels: np.ndarray, centers: CenterTable
) -> tuple[float, np.ndarray]:
    """Half the summed squared distance of each feature to its class center.

    Returns the scalar and its gradient with respect to the features,
    which is simply ``f_i - c_{y_i}``.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValidationError("features must be (n, d) with one row per label")
    if features.shape[1] != centers.centers.shape[1]:
        raise ValidationError(
            f"feature dim {features.shape[1]} does not match center dim "
            f"{centers.centers.shape[1]}"
        )
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= centers.num_classes:
        raise ValidationError(
            f"unknown label: table covers classes [0, {centers.num_classes})"
        )
    diff = features - centers.centers[labels]
    loss = 0.5 * float(np.sum(diff * diff))
    return loss, diff


def center_update(
    centers: CenterTable,
    features: np.ndarray,
    labels: np.ndarray,
    alpha: float = 0.5,
) -> CenterTable:
    """Move each class center toward the mean of its batch features.

    ``c_j += alpha * sum(f_i - c_j) / (1 + n_j)`` where ``n_j`` counts the
    batch samples of class j; classes absent from the batch are unchanged.
    Returns a new table.
    """
    if not 0 < alpha <= 1:
        raise ValidationError(f"alpha must be in (0, 1], got {alpha}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= centers.num_classes:
        raise ValidationError(
            f"unknown label: table covers classes [0, {centers.num_classes})"
        )
    new_centers = centers.centers.copy()
    new_counts = centers.counts.copy()
    for j in np.unique(labels):
        members = features[labels == j]
        delta = (members - new_centers[j]).sum(axis=0) / (1.0 + members.shape[0])
        new_centers[j] = new_centers[j] + alpha * delta
        new_counts[j] += members.shape[0]
    return CenterTable(new_centers, new_counts)


def total_loss(
    global_batch: LossBatchView,
    local_batch: LossBatchView,
    logits: np.ndarray,
    labels: np.ndarray,
    centers_g: CenterTable,
    centers_l: CenterTable,
    cfg: LossConfig,
) -> tuple[float, dict[str, float]]:
    """Combined objective over one batch.

    ``total = id + beta * (tri_g + tri_l) + lambda * (cen_g + cen_l)``
    with beta the per-branch triplet weight and lambda the center weight.
    The returned breakdown holds the five scaled contributions; their sum
    is the scalar.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not (
        np.array_equal(global_batch.labels, labels)
        and np.array_equal(local_batch.labels, labels)
    ):
        raise ValidationError("batch labels disagree between branches")
    if np.asarray(logits).shape[0] != labels.shape[0]:
        raise ValidationError("logits and labels disagree on batch size")
    if cfg.num_classes > 0 and np.asarray(logits).shape[1] != cfg.num_classes:
        raise ValidationError(
            f"logits width {np.asarray(logits).shape[1]} does not match "
            f"configured num_classes={cfg.num_classes}"
        )

    id_term, _ = id_loss(logits, labels, cfg.label_smoothing)
    tri_g, _ = triplethard_loss(global_batch, cfg.margin)
    tri_l, _ = triplethard_loss(local_batch, cfg.margin)
    cen_g, _ = center_loss(global_batch.features, labels, centers_g)
    cen_l, _ = center_loss(local_batch.features, labels, centers_l)

    beta = cfg.branch_triplet_weight
    lam = cfg.center_weight
    breakdown = {
        "id": id_term,
        "tri_g": beta * tri_g,
        "tri_l": beta * tri_l,
        "cen_g": lam * cen_g,
        "cen_l": lam * cen_l,
    }
    return sum(breakdown.values()), breakdown


def _finite_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    base = x.astype(np.float64).copy()
    for idx in range(base.size):
        probe = base.reshape(-1)
        orig = probe[idx]
        probe[idx] = orig + step
        up = fn(base)
        probe[idx] = orig - step
        down = fn(base)
        probe[idx] = orig
        flat[idx] = (up - down) / (2.0 * step)
    return grad


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def gradient_check_report(
    seeds=range(10), step: float = 1e-5, tolerance: float = 1e-5
) -> list[dict]:
    """Compare every analytic gradient against finite differences.

    Runs each loss on one seeded batch per seed and reports the worst
    relative error.  Backs the ``loss-check`` CLI command.
    """
    rows = []

    errs = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(6, 5))
        labels = rng.integers(0, 5, size=6)
        _, grad = id_loss(logits, labels, smoothing=0.1)
        fd = _finite_difference(
            lambda x: id_loss(x, labels, smoothing=0.1)[0], logits, step
        )
        errs.append(_relative_error(grad, fd))
    rows.append(_check_row("id_loss", errs, tolerance))

    errs = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        labels = np.repeat(np.arange(2), 4)
        raw = rng.uniform(0.2, 2.0, size=(8, 8))
        dist = (raw + raw.T) / 2.0
        np.fill_diagonal(dist, 0.0)
        feats = rng.normal(size=(8, 4))
        batch = LossBatchView(feats, labels, dist)
        _, grad = triplethard_loss(batch, margin=0.3)
        fd = _finite_difference(
            lambda x: triplethard_loss(
                LossBatchView(feats, labels, x, validate=False), margin=0.3
            )[0],
            dist,
            step,
        )
        errs.append(_relative_error(grad, fd))
    rows.append(_check_row("triplethard_loss", errs, tolerance))

    errs = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(6, 8))
        labels = rng.integers(0, 4, size=6)
        table = CenterTable(rng.normal(size=(4, 8)), np.zeros(4, dtype=np.int64))
        _, grad = center_loss(feats, labels, table)
        fd = _finite_difference(
            lambda x: center_loss(x, labels, table)[0], feats, step
        )
        errs.append(_relative_error(grad, fd))
    rows.append(_check_row("center_loss", errs, tolerance))

    return rows


def _check_row(name: str, errs: list[float], tolerance: float) -> dict:
    worst = max(errs)
    return {
        "loss": name,
        "seeds": len(errs),
        "max_rel_err": worst,
        "tolerance": tolerance,
        "passed": worst < tolerance,
    }
