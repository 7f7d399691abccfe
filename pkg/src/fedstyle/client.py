"""Client-side local training: style-regularized (FedStyle), FedAvg and FedProx."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import InputError, NumericError
from .losses import (
    LossWeights,
    StyleSet,
    StyleVector,
    cross_entropy,
    local_loss,
    proximal_term,
)
from .nn import ForwardTrace, GradientSet, ModelParams, backward, forward, sgd_step


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loss knobs for one party's training pass."""

    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    mu: float = 0.01
    exclude_positive: bool = False


@dataclass
class ClientState:
    client_id: int
    data: Dataset
    prev_styles: StyleSet | None = None
    params: ModelParams | None = None
    velocity: GradientSet | None = None


@dataclass
class ClientUpdate:
    client_id: int
    params: ModelParams
    style: StyleVector
    num_samples: int
    mean_loss: float


# (params, trace, labels) -> (loss, dlogits, dembed, extra parameter gradient or None)
BatchLoss = Callable[
    [ModelParams, ForwardTrace, np.ndarray],
    tuple[float, np.ndarray, np.ndarray | None, GradientSet | None],
]


def compute_style(params: ModelParams, data: Dataset, class_id: int, round: int = 0) -> StyleVector:
    """Mean embedding of ``data`` under ``params``; all rows must belong to ``class_id``."""
    if len(data) == 0:
        raise InputError("cannot compute a style from an empty dataset")
    if np.any(data.y != class_id):
        raise InputError(f"style for class {class_id} given samples of other classes")
    z = forward(params, data.x).embedding
    return StyleVector(class_id, z.mean(axis=0), round)


def majority_class(data: Dataset) -> int:
    return int(np.argmax(data.class_counts()))


def _run_local_sgd(
    state: ClientState,
    global_params: ModelParams,
    tc: TrainConfig,
    rng: np.random.Generator,
    batch_loss: BatchLoss,
) -> float:
    """Warm-start from ``global_params`` and run ``tc.epochs`` of shuffled mini-batch SGD.

    Updates ``state.params``/``state.velocity`` in place; returns the mean batch loss
    (the full-set loss at the starting point when no step is taken).
    """
    data = state.data
    n = len(data)
    if n == 0:
        raise InputError(f"client {state.client_id} has no data")
    params = global_params.copy()
    velocity = params.zeros_like()
    losses = []
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start : start + tc.batch_size]
            trace = forward(params, data.x[idx])
            loss, dlogits, dembed, extra = batch_loss(params, trace, data.y[idx])
            if not np.isfinite(loss):
                raise NumericError(
                    f"client {state.client_id}: non-finite loss at epoch {epoch}, batch {b}"
                )
            grads = backward(params, trace, dlogits, dembed)
            if extra is not None:
                grads = grads + extra
            try:
                params, velocity = sgd_step(params, grads, velocity, tc.lr, tc.momentum)
            except NumericError as exc:
                raise NumericError(
                    f"client {state.client_id}: epoch {epoch}, batch {b}: {exc}"
                ) from exc
            losses.append(loss)
    if not losses:
        losses.append(batch_loss(params, forward(params, data.x), data.y)[0])
    if not params.is_finite():
        raise NumericError(f"client {state.client_id}: parameters became non-finite")
    state.params = params
    state.velocity = velocity
    return float(np.mean(losses))


def _ce_loss(weights: LossWeights) -> BatchLoss:
    def fn(params, trace, labels):
        ce, dlogits = cross_entropy(trace.logits, labels)
        return weights.lambda1 * ce, weights.lambda1 * dlogits, None, None

    return fn


def local_update_fedstyle(
    state: ClientState,
    global_params: ModelParams,
    global_styles: StyleSet,
    tc: TrainConfig,
    rng: np.random.Generator,
    round: int = 0,
) -> ClientUpdate:
    """Local style training on a single-class client.

    Each batch's mean embedding is the differentiable estimate of the client's
    style. After training, the uploaded style is the mean over the full local
    set, and ``prev_styles`` becomes (own new style, received global styles).
    """
    i = state.client_id
    if state.prev_styles is None:
        raise InputError(f"client {i}: prev_styles not initialised")
    if np.any(state.data.y != i):
        raise InputError(f"client {i}: style training needs single-class data of class {i}")
    w = tc.weights
    prev = state.prev_styles

    def fn(params, trace, labels):
        m_batch = StyleVector(i, trace.embedding.mean(axis=0), round)
        loss, dlogits, dembed = local_loss(
            trace.logits, labels, m_batch, prev, global_styles, w, tc.exclude_positive
        )
        return loss, dlogits, dembed, None

    mean_loss = _run_local_sgd(state, global_params, tc, rng, fn)
    style = compute_style(state.params, state.data, i, round)
    vectors = global_styles.vectors.copy()
    vectors[i] = style.v
    state.prev_styles = StyleSet(vectors, round)
    return ClientUpdate(i, state.params, style, len(state.data), mean_loss)


def _logging_style(state: ClientState, round: int) -> StyleVector:
    c = majority_class(state.data)
    return compute_style(state.params, state.data.of_class(c), c, round)


def local_update_fedavg(
    state: ClientState,
    global_params: ModelParams,
    tc: TrainConfig,
    rng: np.random.Generator,
    round: int = 0,
) -> ClientUpdate:
    """Plain local SGD on the (lambda1-weighted) cross-entropy."""
    mean_loss = _run_local_sgd(state, global_params, tc, rng, _ce_loss(tc.weights))
    return ClientUpdate(
        state.client_id, state.params, _logging_style(state, round), len(state.data), mean_loss
    )


def local_update_fedprox(
    state: ClientState,
    global_params: ModelParams,
    tc: TrainConfig,
    rng: np.random.Generator,
    round: int = 0,
) -> ClientUpdate:
    """Cross-entropy plus the proximal pull ``(mu/2)||theta - theta_global||^2``."""
    ce_fn = _ce_loss(tc.weights)

    def fn(params, trace, labels):
        loss, dlogits, _, _ = ce_fn(params, trace, labels)
        prox, prox_grad = proximal_term(params, global_params, tc.mu)
        return loss + prox, dlogits, None, prox_grad

    mean_loss = _run_local_sgd(state, global_params, tc, rng, fn)
    return ClientUpdate(
        state.client_id, state.params, _logging_style(state, round), len(state.data), mean_loss
    )
