"""Three-layer dense classifier with hand-written reverse mode.

Architecture::

    h1 = ReLU(W1 x + b1)        (hidden_dim)
    z  = ReLU(W2 h1 + b2)       (embed_dim, the penultimate layer / embedding)
    logits = W3 z + b3          (num_classes)

Everything is float64. Batches are row-major: ``x`` has shape ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import InputError, NumericError, ShapeError

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    hidden_dim: int
    embed_dim: int
    num_classes: int

    def __post_init__(self) -> None:
        for f in fields(self):
            if int(getattr(self, f.name)) < 1:
                raise InputError(f"{f.name} must be >= 1")
        if self.num_classes < 2:
            raise InputError("num_classes must be >= 2")


@dataclass
class ModelParams:
    """Weights and biases of the classifier; also used as the gradient container."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def dims(self) -> ModelDims:
        h, d = self.W1.shape
        e = self.W2.shape[0]
        c = self.W3.shape[0]
        return ModelDims(d, h, e, c)

    def items(self):
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> ModelParams:
        return ModelParams(*(getattr(self, n).copy() for n in PARAM_NAMES))

    def zeros_like(self) -> ModelParams:
        return ModelParams(*(np.zeros_like(getattr(self, n)) for n in PARAM_NAMES))

    def check_compatible(self, other: ModelParams) -> None:
        for name, arr in self.items():
            if getattr(other, name).shape != arr.shape:
                raise ShapeError(
                    f"{name}: shape {getattr(other, name).shape} != {arr.shape}"
                )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.items()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, dims: ModelDims) -> ModelParams:
        shapes = _shapes(dims)
        out, offset = [], 0
        for name in PARAM_NAMES:
            size = int(np.prod(shapes[name]))
            out.append(np.array(vec[offset : offset + size], dtype=np.float64).reshape(shapes[name]))
            offset += size
        if offset != len(vec):
            raise ShapeError(f"flat vector has {len(vec)} entries, expected {offset}")
        return cls(*out)

    def __add__(self, other: ModelParams) -> ModelParams:
        return ModelParams(*(getattr(self, n) + getattr(other, n) for n in PARAM_NAMES))

    def scale(self, factor: float) -> ModelParams:
        return ModelParams(*(factor * getattr(self, n) for n in PARAM_NAMES))


GradientSet = ModelParams


def _shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    d, h, e, c = dims.input_dim, dims.hidden_dim, dims.embed_dim, dims.num_classes
    return {"W1": (h, d), "b1": (h,), "W2": (e, h), "b2": (e,), "W3": (c, e), "b3": (c,)}


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass over a batch of ``n`` rows."""

    x: np.ndarray
    pre1: np.ndarray
    h1: np.ndarray
    pre2: np.ndarray
    embedding: np.ndarray
    logits: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


def init_params(dims: ModelDims, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights, zero biases."""
    shapes = _shapes(dims)
    out = []
    for name in PARAM_NAMES:
        shape = shapes[name]
        if name.startswith("W"):
            fan_out, fan_in = shape
            s = np.sqrt(6.0 / (fan_in + fan_out))
            out.append(rng.uniform(-s, s, size=shape))
        else:
            out.append(np.zeros(shape))
    return ModelParams(*out)


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    """Run the network on a single feature vector or a batch of rows.

    A 1-D input is treated as a batch of one; the trace is always batched.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.W1.shape[1]:
        raise ShapeError(f"input has shape {x.shape}, expected (n, {params.W1.shape[1]})")
    pre1 = x @ params.W1.T + params.b1
    h1 = np.maximum(pre1, 0.0)
    pre2 = h1 @ params.W2.T + params.b2
    z = np.maximum(pre2, 0.0)
    logits = z @ params.W3.T + params.b3
    return ForwardTrace(x, pre1, h1, pre2, z, logits)


def backward(
    params: ModelParams,
    trace: ForwardTrace,
    dlogits: np.ndarray | None,
    dembed: np.ndarray | None = None,
) -> GradientSet:
    """Gradient of a scalar loss w.r.t. all parameters, summed over the batch.

    ``dlogits`` (n, C) enters at the head; ``dembed`` (n, e) enters directly at
    the embedding and so never touches W3/b3. Either may be ``None`` for zero.
    """
    n = len(trace)
    if dlogits is None:
        dlogits = np.zeros_like(trace.logits)
    if dembed is None:
        dembed = np.zeros_like(trace.embedding)
    if dlogits.shape != trace.logits.shape:
        raise ShapeError(f"dlogits shape {dlogits.shape} != logits shape {trace.logits.shape}")
    if dembed.shape != trace.embedding.shape:
        raise ShapeError(f"dembed shape {dembed.shape} != embedding shape {trace.embedding.shape}")
    if n == 0:
        raise ShapeError("empty trace")

    gW3 = dlogits.T @ trace.embedding
    gb3 = dlogits.sum(axis=0)
    dz = dlogits @ params.W3 + dembed
    dpre2 = dz * (trace.pre2 > 0)
    gW2 = dpre2.T @ trace.h1
    gb2 = dpre2.sum(axis=0)
    dpre1 = (dpre2 @ params.W2) * (trace.pre1 > 0)
    gW1 = dpre1.T @ trace.x
    gb1 = dpre1.sum(axis=0)
    return ModelParams(gW1, gb1, gW2, gb2, gW3, gb3)


def sgd_step(
    params: ModelParams,
    grads: GradientSet,
    velocity: GradientSet,
    lr: float,
    momentum: float,
) -> tuple[ModelParams, GradientSet]:
    """Heavy-ball SGD: ``v <- momentum*v + g``, ``theta <- theta - lr*v``."""
    if lr <= 0:
        raise InputError("lr must be > 0")
    if not 0.0 <= momentum < 1.0:
        raise InputError("momentum must be in [0, 1)")
    params.check_compatible(grads)
    params.check_compatible(velocity)
    new_p, new_v = [], []
    for name in PARAM_NAMES:
        g = getattr(grads, name)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        v = momentum * getattr(velocity, name) + g
        new_v.append(v)
        new_p.append(getattr(params, name) - lr * v)
    return ModelParams(*new_p), ModelParams(*new_v)
