"""Scalar losses and their gradients.

Each loss returns ``(value, gradient)`` where the gradient is taken w.r.t. the
one argument that carries a training signal (logits, a style vector, or the
model parameters). Styles owned by the other party are constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .nn import PARAM_NAMES, GradientSet, ModelParams

EPS = 1e-12


@dataclass
class StyleVector:
    """Mean embedding of one class."""

    class_id: int
    v: np.ndarray
    round: int = 0

    def __post_init__(self) -> None:
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.v.ndim != 1:
            raise ShapeError("style vector must be 1-D")
        if self.class_id < 0:
            raise InputError(f"negative class id {self.class_id}")


@dataclass
class StyleSet:
    """One style per class, stored as a ``(C, e)`` matrix indexed by class id."""

    vectors: np.ndarray
    round: int = 0

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ShapeError("style set must be a non-empty (C, e) matrix")

    @classmethod
    def from_entries(cls, entries: list[StyleVector], num_classes: int) -> StyleSet:
        ids = sorted(s.class_id for s in entries)
        if ids != list(range(num_classes)):
            missing = sorted(set(range(num_classes)) - set(ids))
            raise InputError(
                f"style set must hold exactly one style per class 0..{num_classes - 1}; "
                f"missing {missing}, got ids {ids}"
            )
        by_id = {s.class_id: s.v for s in entries}
        rnd = max((s.round for s in entries), default=0)
        return cls(np.stack([by_id[c] for c in range(num_classes)]), rnd)

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, class_id: int) -> StyleVector:
        return StyleVector(class_id, self.vectors[class_id], self.round)

    def copy(self) -> StyleSet:
        return StyleSet(self.vectors.copy(), self.round)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 0.05
    lambda3: float = 20.0
    lambda4: float = 10.0
    lambda5: float = 0.005

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise InputError(f"{name} must be finite and >= 0, got {val}")


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ShapeError("logits must be a non-empty (n, C) array")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if np.any(labels < 0) or np.any(labels >= c):
        raise InputError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    probs = np.exp(shifted - log_z[:, None])
    grad = probs
    grad[rows, labels] -= 1.0
    grad /= n
    return max(loss, 0.0), grad


def _norm_guarded(a: np.ndarray) -> tuple[float, float]:
    raw = float(np.sqrt(a @ a))
    return raw, max(raw, EPS)


def cs(a: np.ndarray, b: np.ndarray) -> float:
    """exp(cosine similarity) with zero-norm guard."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cs: shapes {a.shape} and {b.shape} differ")
    _, na = _norm_guarded(a)
    _, nb = _norm_guarded(b)
    return float(np.exp(a @ b / (na * nb)))


def _cs_rows(a: np.ndarray, anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """cs(a, anchors[k]) for every row and d/da of each, shape (k, e)."""
    raw, na = _norm_guarded(a)
    nb = np.maximum(np.sqrt(np.einsum("ij,ij->i", anchors, anchors)), EPS)
    cos = anchors @ a / (na * nb)
    vals = np.exp(cos)
    dcos = anchors / (na * nb)[:, None]
    if raw > EPS:
        dcos = dcos - np.outer(cos, a) / (na * raw)
    return vals, vals[:, None] * dcos


def _ratio(
    a: np.ndarray,
    class_id: int,
    first: np.ndarray,
    second: np.ndarray,
    exclude_positive: bool,
) -> tuple[float, np.ndarray]:
    """Sum over classes j of cs(a, first[j]) + cs(a, second[j]), divided by the class_id terms."""
    v1, g1 = _cs_rows(a, first)
    v2, g2 = _cs_rows(a, second)
    vals = v1 + v2
    grads = g1 + g2
    den = vals[class_id]
    dden = grads[class_id]
    if exclude_positive:
        mask = np.arange(len(vals)) != class_id
        num = float(vals[mask].sum())
        dnum = grads[mask].sum(axis=0)
    else:
        num = float(vals.sum())
        dnum = grads.sum(axis=0)
    return num / den, (dnum * den - num * dden) / (den * den)


def _check_sets(class_id: int, dim: int, *sets: StyleSet) -> None:
    c = sets[0].num_classes
    for s in sets:
        if s.num_classes != c:
            raise InputError(f"style sets disagree on class count: {s.num_classes} vs {c}")
        if s.dim != dim:
            raise ShapeError(f"style dimension {s.dim} != {dim}")
    if not 0 <= class_id < c:
        raise InputError(f"class id {class_id} outside [0, {c})")


def contrastive_local(
    m_self: StyleVector,
    prev_styles: StyleSet,
    global_styles: StyleSet,
    exclude_positive: bool = False,
) -> tuple[float, np.ndarray]:
    """Client-side style contrast ratio.

    Numerator sums cs against every previous-round and every global style;
    denominator holds the two same-class terms. Gradient is w.r.t. ``m_self.v``.
    """
    i = m_self.class_id
    _check_sets(i, m_self.v.shape[0], prev_styles, global_styles)
    return _ratio(m_self.v, i, prev_styles.vectors, global_styles.vectors, exclude_positive)


def contrastive_global(
    m_global_i: StyleVector,
    prev_global: StyleSet,
    local_styles: StyleSet,
    exclude_positive: bool = False,
) -> tuple[float, np.ndarray]:
    """Server-side counterpart: anchors are the uploaded client styles and last round's global styles."""
    i = m_global_i.class_id
    _check_sets(i, m_global_i.v.shape[0], prev_global, local_styles)
    return _ratio(m_global_i.v, i, local_styles.vectors, prev_global.vectors, exclude_positive)


def mse_align(m_self: StyleVector, m_global_i: StyleVector) -> tuple[float, np.ndarray]:
    if m_self.class_id != m_global_i.class_id:
        raise InputError(f"class mismatch: {m_self.class_id} vs {m_global_i.class_id}")
    if m_self.v.shape != m_global_i.v.shape:
        raise ShapeError("style vectors differ in length")
    diff = m_self.v - m_global_i.v
    e = diff.shape[0]
    return float(diff @ diff / e), 2.0 * diff / e


def local_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    m_batch: StyleVector,
    prev_styles: StyleSet,
    global_styles: StyleSet,
    w: LossWeights,
    exclude_positive: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted client loss: classification + style contrast + alignment to the global style.

    ``m_batch`` is the mean embedding of the batch, so the style-term gradient
    is spread over the ``n`` sample embeddings with factor ``1/n``.
    Returns ``(loss, dloss/dlogits (n, C), dloss/dembedding (n, e))``.
    """
    ce, dlogits = cross_entropy(logits, labels)
    l2, g2 = contrastive_local(m_batch, prev_styles, global_styles, exclude_positive)
    l3, g3 = mse_align(m_batch, global_styles[m_batch.class_id])
    n = dlogits.shape[0]
    loss = w.lambda1 * ce + w.lambda2 * l2 + w.lambda3 * l3
    dm = w.lambda2 * g2 + w.lambda3 * g3
    dembed = np.broadcast_to(dm / n, (n, dm.shape[0])).copy()
    return loss, w.lambda1 * dlogits, dembed


def global_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    embeddings: np.ndarray,
    prev_global: StyleSet,
    local_styles: StyleSet,
    w: LossWeights,
    exclude_positive: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted server loss on a public batch.

    For every class present in the batch, the class-mean embedding stands in
    for that class's current global style and is contrasted against the
    uploaded client styles and last round's global styles. The contrast term
    is averaged over the classes present.
    """
    ce, dlogits = cross_entropy(logits, labels)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    dembed = np.zeros_like(embeddings)
    present = np.unique(labels)
    l5 = 0.0
    for c in present:
        rows = labels == c
        k = int(rows.sum())
        mean = StyleVector(int(c), embeddings[rows].mean(axis=0))
        val, grad = contrastive_global(mean, prev_global, local_styles, exclude_positive)
        l5 += val / len(present)
        dembed[rows] += w.lambda5 * grad / (len(present) * k)
    loss = w.lambda4 * ce + w.lambda5 * l5
    return loss, w.lambda4 * dlogits, dembed


def proximal_term(
    local: ModelParams, global_ref: ModelParams, mu: float
) -> tuple[float, GradientSet]:
    """(mu/2) * ||theta - theta_ref||^2 over all tensors, and mu * (theta - theta_ref)."""
    if mu < 0:
        raise InputError("mu must be >= 0")
    try:
        local.check_compatible(global_ref)
    except ShapeError as exc:
        raise InputError(str(exc)) from exc
    total = 0.0
    grads = []
    for name in PARAM_NAMES:
        diff = getattr(local, name) - getattr(global_ref, name)
        total += float(np.sum(diff * diff))
        grads.append(mu * diff)
    return 0.5 * mu * total, ModelParams(*grads)
