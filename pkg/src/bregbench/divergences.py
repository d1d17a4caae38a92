"""Objective functions for probability-vector targets.

Nine per-example losses are provided, five general-purpose ones and four
Bregman divergences, together with closed-form gradients with respect to the
prediction and to the pre-softmax logits.  Every function works on a single
vector of shape ``(K,)`` or on a batch of shape ``(N, K)``; reductions run
over the last axis.

Zeros inside logarithms and ratios are guarded by a :class:`ClipPolicy` that
clamps the operand to ``[epsilon, 1]``.  Clipping is applied only inside log
and division terms (never in difference terms) and is treated as a stop
gradient: coordinates that were clamped contribute zero derivative.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .errors import InvalidInputError, NumericDomainError, ShapeError, SingularGradientError

SIMPLEX_ATOL = 1e-9
RMSE_FLOOR = 1e-12


class LossId(enum.Enum):
    MSE = "mse"
    RMSE = "rmse"
    CROSS_ENTROPY = "cross_entropy"
    REVERSE_KL = "reverse_kl"
    JENSEN_SHANNON = "jensen_shannon"
    FORWARD_KL = "forward_kl"
    ITAKURA_SAITO = "itakura_saito"
    GENERALIZED_I = "generalized_i"
    SQUARED_EUCLIDEAN = "squared_euclidean"

    @property
    def is_bregman(self) -> bool:
        return self in _BREGMAN

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, name: "str | LossId") -> "LossId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise InvalidInputError(f"unknown loss {name!r}; expected one of: {valid}") from None

    def __str__(self):
        return self.value


_BREGMAN = frozenset(
    {LossId.FORWARD_KL, LossId.ITAKURA_SAITO, LossId.GENERALIZED_I, LossId.SQUARED_EUCLIDEAN}
)

_LABELS = {
    LossId.MSE: "MSE",
    LossId.RMSE: "RMSE",
    LossId.CROSS_ENTROPY: "Cross Entropy",
    LossId.REVERSE_KL: "Reverse KL",
    LossId.JENSEN_SHANNON: "Jensen-Shannon",
    LossId.FORWARD_KL: "Forward KL",
    LossId.ITAKURA_SAITO: "Itakura-Saito",
    LossId.GENERALIZED_I: "Generalized I",
    LossId.SQUARED_EUCLIDEAN: "Squared Euclidean",
}

ALL_LOSSES = tuple(LossId)


@dataclass(frozen=True)
class ClipPolicy:
    """Clamp applied to operands of log and division terms."""

    epsilon: float = 1e-7

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1e-4):
            raise InvalidInputError(f"clip epsilon must lie in (0, 1e-4], got {self.epsilon}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.epsilon, 1.0)

    def active(self, x: np.ndarray) -> np.ndarray:
        """Mask of coordinates left untouched by :meth:`apply` (derivative passes through)."""
        return ((x >= self.epsilon) & (x <= 1.0)).astype(np.float64)


DEFAULT_CLIP = ClipPolicy()


def as_prob_vector(values, name: str = "p") -> np.ndarray:
    """Validate ``values`` as one simplex point, or a batch of them, and return a float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ShapeError(f"{name}: expected shape (K,) or (N, K), got {arr.shape}")
    if arr.shape[-1] < 2:
        raise InvalidInputError(f"{name}: need at least 2 categories, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: non-finite entries")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInputError(f"{name}: entries must lie in [0, 1]")
    if np.any(np.abs(arr.sum(axis=-1) - 1.0) > SIMPLEX_ATOL):
        raise InvalidInputError(f"{name}: entries must sum to 1")
    return arr


def _as_logits(z) -> np.ndarray:
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ShapeError(f"logits: expected shape (K,) or (N, K), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("logits: non-finite entries")
    return arr


def _check_pair(p: np.ndarray, q: np.ndarray):
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {q.shape}")


def _scalar_or_array(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def softmax(z) -> np.ndarray:
    z = _as_logits(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_value(loss: LossId, p, q, clip: ClipPolicy = DEFAULT_CLIP, rmse_floor: float = 0.0):
    """Evaluate ``loss`` elementwise without checking that ``p`` and ``q`` are on the simplex.

    The formulas extend naturally to the non-negative orthant, which is what
    finite-difference checks need.  Use :func:`evaluate_loss` for validated
    input.
    """
    loss = LossId.parse(loss)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_pair(p, q)
    k = p.shape[-1]

    if loss is LossId.MSE:
        out = np.sum((p - q) ** 2, axis=-1) / k
    elif loss is LossId.RMSE:
        out = np.sqrt(np.maximum(np.sum((p - q) ** 2, axis=-1) / k, rmse_floor))
    elif loss is LossId.SQUARED_EUCLIDEAN:
        out = np.sum((p - q) ** 2, axis=-1)
    elif loss is LossId.CROSS_ENTROPY:
        out = -np.sum(p * np.log(clip.apply(q)), axis=-1)
    elif loss is LossId.FORWARD_KL:
        out = np.sum(p * (np.log(clip.apply(p)) - np.log(clip.apply(q))), axis=-1)
    elif loss is LossId.GENERALIZED_I:
        out = np.sum(p * (np.log(clip.apply(p)) - np.log(clip.apply(q))) - (p - q), axis=-1)
    elif loss is LossId.REVERSE_KL:
        out = np.sum(q * (np.log(clip.apply(q)) - np.log(clip.apply(p))), axis=-1)
    elif loss is LossId.JENSEN_SHANNON:
        log_m = np.log(clip.apply(0.5 * (p + q)))
        out = 0.5 * np.sum(
            p * (np.log(clip.apply(p)) - log_m) + q * (np.log(clip.apply(q)) - log_m), axis=-1
        )
    elif loss is LossId.ITAKURA_SAITO:
        ratio = clip.apply(p) / clip.apply(q)
        out = np.sum(ratio - np.log(ratio) - 1.0, axis=-1)
    else:  # pragma: no cover
        raise InvalidInputError(f"unhandled loss {loss}")

    if np.any(np.isnan(out)):
        raise NumericDomainError(f"{loss}: NaN in loss value; clipping was insufficient")
    return _scalar_or_array(out)


def evaluate_loss(loss: LossId, p, q, clip: ClipPolicy = DEFAULT_CLIP):
    """Per-example loss between target ``p`` and prediction ``q`` (natural log, nats)."""
    p = as_prob_vector(p, "target")
    q = as_prob_vector(q, "prediction")
    _check_pair(p, q)
    return loss_value(loss, p, q, clip)


def entropy(p, clip: ClipPolicy = DEFAULT_CLIP):
    p = as_prob_vector(p)
    return _scalar_or_array(-np.sum(p * np.log(clip.apply(p)), axis=-1))


def batch_loss(loss: LossId, targets, predictions, clip: ClipPolicy = DEFAULT_CLIP) -> float:
    """Arithmetic mean of per-example losses over a batch."""
    targets = np.atleast_2d(as_prob_vector(targets, "targets"))
    predictions = np.atleast_2d(as_prob_vector(predictions, "predictions"))
    if len(targets) == 0:
        raise InvalidInputError("empty batch")
    _check_pair(targets, predictions)
    return float(np.mean(loss_value(loss, targets, predictions, clip)))


def loss_gradient(loss: LossId, p, q, clip: ClipPolicy = DEFAULT_CLIP, rmse_floor: float = 0.0) -> np.ndarray:
    """Unvalidated partial derivatives of :func:`loss_value` with respect to ``q``.

    For RMSE, ``rmse_floor`` is the floor under the square root: rows whose
    mean squared error falls at or below a positive floor have zero gradient
    (the floored loss is constant there).  With the default floor of zero a
    perfect fit raises :class:`SingularGradientError`.
    """
    loss = LossId.parse(loss)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_pair(p, q)
    k = p.shape[-1]

    if loss is LossId.MSE:
        return 2.0 * (q - p) / k
    if loss is LossId.SQUARED_EUCLIDEAN:
        return 2.0 * (q - p)
    if loss is LossId.RMSE:
        mse = np.sum((p - q) ** 2, axis=-1, keepdims=True) / k
        if rmse_floor <= 0.0:
            if np.any(mse <= 0.0):
                raise SingularGradientError("RMSE gradient is undefined where prediction equals target")
            return (q - p) / (k * np.sqrt(mse))
        above = mse > rmse_floor
        root = np.sqrt(np.maximum(mse, rmse_floor))
        return np.where(above, (q - p) / (k * root), 0.0)

    cq = clip.apply(q)
    mq = clip.active(q)
    if loss in (LossId.CROSS_ENTROPY, LossId.FORWARD_KL):
        return -p / cq * mq
    if loss is LossId.GENERALIZED_I:
        return -p / cq * mq + 1.0
    if loss is LossId.REVERSE_KL:
        return np.log(cq) - np.log(clip.apply(p)) + mq
    if loss is LossId.JENSEN_SHANNON:
        m = 0.5 * (p + q)
        cm = clip.apply(m)
        return 0.5 * (np.log(cq) - np.log(cm) + mq - clip.active(m) * m / cm)
    if loss is LossId.ITAKURA_SAITO:
        return (cq - clip.apply(p)) / cq**2 * mq
    raise InvalidInputError(f"unhandled loss {loss}")  # pragma: no cover


def gradient_wrt_prediction(loss: LossId, p, q, clip: ClipPolicy = DEFAULT_CLIP) -> np.ndarray:
    p = as_prob_vector(p, "target")
    q = as_prob_vector(q, "prediction")
    return loss_gradient(loss, p, q, clip)


def softmax_backward(s: np.ndarray, grad_q: np.ndarray) -> np.ndarray:
    """Multiply ``grad_q`` by the transposed softmax Jacobian at output ``s``."""
    return s * (grad_q - np.sum(s * grad_q, axis=-1, keepdims=True))


def gradient_wrt_logits(loss: LossId, p, z, clip: ClipPolicy = DEFAULT_CLIP, rmse_floor: float = 0.0) -> np.ndarray:
    p = as_prob_vector(p, "target")
    s = softmax(z)
    _check_pair(p, s)
    return softmax_backward(s, loss_gradient(loss, p, s, clip, rmse_floor))


# -- generic Bregman construction ---------------------------------------------


@dataclass(frozen=True)
class ConvexGenerator:
    """A strictly convex, differentiable generator with its gradient.

    ``domain`` tells :func:`bregman_from_phi` how to treat zeros:
    ``"real"`` needs no guard, ``"nonnegative"`` accepts zeros in the value
    but needs an interior point for the gradient, ``"positive"`` needs both
    arguments strictly positive.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    domain: str = "real"


SQUARED_NORM = ConvexGenerator(
    "squared_norm",
    value=lambda x: np.sum(x * x, axis=-1),
    gradient=lambda x: 2.0 * x,
)
NEGATIVE_ENTROPY = ConvexGenerator(
    "negative_entropy",
    value=lambda x: np.sum(xlogy(x, x), axis=-1),
    gradient=lambda x: np.log(x) + 1.0,
    domain="nonnegative",
)
GENERALIZED_ENTROPY = ConvexGenerator(
    "generalized_entropy",
    value=lambda x: np.sum(xlogy(x, x) - x, axis=-1),
    gradient=np.log,
    domain="nonnegative",
)
NEGATIVE_LOG = ConvexGenerator(
    "negative_log",
    value=lambda x: -np.sum(np.log(x), axis=-1),
    gradient=lambda x: -1.0 / x,
    domain="positive",
)

GENERATORS = {
    LossId.SQUARED_EUCLIDEAN: SQUARED_NORM,
    LossId.FORWARD_KL: NEGATIVE_ENTROPY,
    LossId.GENERALIZED_I: GENERALIZED_ENTROPY,
    LossId.ITAKURA_SAITO: NEGATIVE_LOG,
}


def bregman_from_phi(phi: ConvexGenerator, x, y, clip: ClipPolicy | None = DEFAULT_CLIP):
    """d(x, y) = phi(x) - phi(y) - <x - y, grad phi(y)>.

    Pass ``clip=None`` to disable clipping; a boundary ``y`` then raises
    :class:`NumericDomainError` for generators that are not defined there.
    """
    x = as_prob_vector(x, "x")
    y = as_prob_vector(y, "y")
    _check_pair(x, y)

    if phi.domain == "real":
        xv, yv, yg = x, y, y
    else:
        if clip is None:
            bad = np.any(y <= 0.0) or (phi.domain == "positive" and np.any(x <= 0.0))
            if bad:
                raise NumericDomainError(f"{phi.name}: argument on the simplex boundary and clipping disabled")
            clip_fn = lambda v: v  # noqa: E731
        else:
            clip_fn = clip.apply
        if phi.domain == "positive":
            xv, yv = clip_fn(x), clip_fn(y)
            yg = yv
        else:
            xv, yv, yg = x, y, clip_fn(y)

    out = phi.value(xv) - phi.value(yv) - np.sum((xv - yv) * phi.gradient(yg), axis=-1)
    if np.any(np.isnan(out)):
        raise NumericDomainError(f"{phi.name}: NaN in divergence")
    return _scalar_or_array(out)
