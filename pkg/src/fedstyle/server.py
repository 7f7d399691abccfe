"""Server side: weighted aggregation, global style training on public data, evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .client import ClientUpdate, TrainConfig
from .data import Dataset
from .errors import InputError, NumericError, ProtocolError, ShapeError
from .losses import StyleSet, cross_entropy, global_loss
from .nn import PARAM_NAMES, GradientSet, ModelParams, backward, forward, sgd_step


@dataclass
class ServerState:
    global_params: ModelParams
    public_data: Dataset
    global_styles: StyleSet | None = None
    prev_global_styles: StyleSet | None = None
    velocity: GradientSet | None = None
    round: int = 0


@dataclass
class AggregationReport:
    round: int
    client_counts: list[int]
    pre_loss: float
    post_loss: float


class Evaluation(NamedTuple):
    accuracy: float
    macro_f1: float
    confusion: np.ndarray


def weighted_average(updates: list[ClientUpdate]) -> ModelParams:
    """Sample-count weighted mean of client parameters, summed in client-id order."""
    if not updates:
        raise InputError("no client updates to aggregate")
    updates = sorted(updates, key=lambda u: u.client_id)
    ref = updates[0].params
    for u in updates[1:]:
        try:
            ref.check_compatible(u.params)
        except ShapeError as exc:
            raise InputError(f"client {u.client_id}: {exc}") from exc
    counts = np.array([u.num_samples for u in updates], dtype=np.float64)
    if np.any(counts <= 0):
        raise InputError("client sample counts must be positive")
    shares = counts / counts.sum()
    out = []
    for name in PARAM_NAMES:
        acc = np.zeros_like(getattr(ref, name))
        for share, u in zip(shares, updates):
            acc += share * getattr(u.params, name)
        out.append(acc)
    return ModelParams(*out)


def class_styles(params: ModelParams, data: Dataset, round: int = 0) -> StyleSet:
    """Per-class mean embeddings over ``data``; every class must be present."""
    counts = data.class_counts()
    missing = np.flatnonzero(counts == 0)
    if len(missing):
        raise InputError(f"public data lacks classes {missing.tolist()}")
    z = forward(params, data.x).embedding
    sums = np.zeros((data.num_classes, z.shape[1]))
    np.add.at(sums, data.y, z)
    return StyleSet(sums / counts[:, None], round)


def init_global_styles(state: ServerState) -> StyleSet:
    styles = class_styles(state.global_params, state.public_data, state.round)
    state.global_styles = styles
    state.prev_global_styles = styles.copy()
    return styles


def stratified_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle within each class, interleave classes round-robin, then chunk.

    Every batch of size >= C therefore spans all classes with near-equal counts.
    """
    per_class = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        per_class.append(idx[rng.permutation(len(idx))])
    longest = max(len(p) for p in per_class)
    order = [p[k] for k in range(longest) for p in per_class if k < len(p)]
    order = np.array(order, dtype=np.int64)
    return [order[s : s + batch_size] for s in range(0, len(order), batch_size)]


def _public_loss(params, data, prev_global, local_styles, tc) -> float:
    trace = forward(params, data.x)
    loss, _, _ = global_loss(
        trace.logits, data.y, trace.embedding, prev_global, local_styles, tc.weights,
        tc.exclude_positive,
    )
    return loss


def global_update(
    state: ServerState,
    updates: list[ClientUpdate],
    tc: TrainConfig,
    rng: np.random.Generator,
    round: int | None = None,
) -> AggregationReport:
    """Aggregate client models, train on public data against the uploaded styles, refresh styles.

    Last round's global styles serve as the previous-round anchors; after the
    update ``prev_global_styles`` holds exactly those.
    """
    if state.global_styles is None:
        raise ProtocolError("global styles not initialised")
    round = state.round + 1 if round is None else round
    c = state.global_styles.num_classes
    ids = sorted(u.client_id for u in updates)
    if ids != list(range(c)):
        raise ProtocolError(f"round {round}: expected one update per class 0..{c - 1}, got {ids}")
    local_styles = StyleSet.from_entries([u.style for u in updates], c)
    prev_global = state.global_styles

    params = weighted_average(updates)
    public = state.public_data
    pre = _public_loss(params, public, prev_global, local_styles, tc)
    velocity = params.zeros_like()
    for epoch in range(tc.epochs):
        for b, idx in enumerate(stratified_batches(public.y, tc.batch_size, rng)):
            trace = forward(params, public.x[idx])
            loss, dlogits, dembed = global_loss(
                trace.logits, public.y[idx], trace.embedding, prev_global, local_styles,
                tc.weights, tc.exclude_positive,
            )
            if not np.isfinite(loss):
                raise NumericError(f"server: non-finite loss at round {round}, epoch {epoch}, batch {b}")
            grads = backward(params, trace, dlogits, dembed)
            params, velocity = sgd_step(params, grads, velocity, tc.lr, tc.momentum)
    if not params.is_finite():
        raise NumericError(f"server: parameters became non-finite at round {round}")

    state.global_params = params
    state.velocity = velocity
    state.prev_global_styles = prev_global
    state.global_styles = class_styles(params, public, round)
    state.round = round
    post = _public_loss(params, public, prev_global, local_styles, tc)
    return AggregationReport(round, [u.num_samples for u in sorted(updates, key=lambda u: u.client_id)], pre, post)


def train_on_public(
    params: ModelParams,
    public: Dataset,
    tc: TrainConfig,
    rng: np.random.Generator,
) -> tuple[ModelParams, float]:
    """Server-only supervised training (the ``local`` baseline); lambda4-weighted cross-entropy."""
    lam = tc.weights.lambda4
    velocity = params.zeros_like()
    losses = []
    for _ in range(tc.epochs):
        order = rng.permutation(len(public))
        for s in range(0, len(order), tc.batch_size):
            idx = order[s : s + tc.batch_size]
            trace = forward(params, public.x[idx])
            ce, dlogits = cross_entropy(trace.logits, public.y[idx])
            grads = backward(params, trace, lam * dlogits)
            params, velocity = sgd_step(params, grads, velocity, tc.lr, tc.momentum)
            losses.append(lam * ce)
    if not losses:
        losses.append(lam * cross_entropy(forward(params, public.x).logits, public.y)[0])
    return params, float(np.mean(losses))


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def macro_f1(cm: np.ndarray) -> float:
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def evaluate(params: ModelParams, test: Dataset) -> Evaluation:
    if len(test) == 0:
        raise InputError("empty test set")
    pred = np.argmax(forward(params, test.x).logits, axis=1)
    cm = confusion_matrix(test.y, pred, params.W3.shape[0])
    return Evaluation(float(np.mean(pred == test.y)), macro_f1(cm), cm)
