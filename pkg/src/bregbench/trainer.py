"""A small multilayer perceptron with softmax output, trained by Adam.

Hidden layers use ReLU; the output layer produces logits that go through a
softmax.  Backpropagation starts from the closed-form logit gradient of the
selected loss, so no autodiff machinery is involved.  Everything is float64
and fully determined by the configured seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .data import LabeledDataset
from .divergences import (
    ALL_LOSSES,
    DEFAULT_CLIP,
    RMSE_FLOOR,
    ClipPolicy,
    LossId,
    evaluate_loss,
    loss_gradient,
    loss_value,
    softmax,
    softmax_backward,
)
from .errors import BenchError, ConfigError, NumericDomainError, ShapeError


@dataclass(eq=False)
class MlpParams:
    weights: list  # weights[i] has shape (fan_in, fan_out)
    biases: list

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def unflatten(cls, vector, layer_sizes) -> "MlpParams":
        vector = np.asarray(vector, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(vector[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            biases.append(vector[pos : pos + fan_out].copy())
            pos += fan_out
        if pos != len(vector):
            raise ShapeError(f"vector of length {len(vector)} does not fit layers {layer_sizes}")
        return cls(weights, biases)

    def max_abs_diff(self, other: "MlpParams") -> float:
        return float(np.max(np.abs(self.flatten() - other.flatten())))

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return self.layer_sizes == other.layer_sizes and np.array_equal(self.flatten(), other.flatten())


def glorot_init(layer_sizes, seed: int) -> MlpParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"invalid layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _forward_cache(params: MlpParams, x: np.ndarray):
    """Return the per-layer inputs (post-activation) and the final logits."""
    inputs = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        if i == last:
            return inputs, a
        h = np.maximum(a, 0.0)
        inputs.append(h)


def _check_features(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.weights[0].shape[0]:
        raise ShapeError(f"features of shape {x.shape} do not match input size {params.weights[0].shape[0]}")
    return x


def forward(params: MlpParams, x):
    """Logits and softmax probabilities for one feature vector or a batch of them."""
    x = _check_features(params, x)
    _, logits = _forward_cache(params, x)
    return logits, softmax(logits)


def _loss_and_grads(params, x, p, loss, clip, rmse_floor):
    x2 = np.atleast_2d(x)
    p2 = np.atleast_2d(p)
    if p2.shape != (len(x2), params.weights[-1].shape[1]):
        raise ShapeError(f"targets of shape {np.shape(p)} do not match batch/output size")
    inputs, logits = _forward_cache(params, x2)
    s = softmax(logits)
    per_example = loss_value(loss, p2, s, clip, rmse_floor=rmse_floor)
    delta = softmax_backward(s, loss_gradient(loss, p2, s, clip, rmse_floor=rmse_floor)) / len(x2)

    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            # ReLU derivative taken as 0 at exactly 0
            delta = (delta @ params.weights[i].T) * (inputs[i] > 0.0)
    return per_example, MlpParams(gw, gb)


def backward(params: MlpParams, x, p, loss: LossId, clip: ClipPolicy = DEFAULT_CLIP, rmse_floor: float = RMSE_FLOOR) -> MlpParams:
    """Parameter gradients of the loss (mean over the batch when ``x`` is 2-D)."""
    x = _check_features(params, x)
    return _loss_and_grads(params, x, np.asarray(p, dtype=np.float64), LossId.parse(loss), clip, rmse_floor)[1]


@dataclass(frozen=True)
class TrainConfig:
    loss: LossId = LossId.CROSS_ENTROPY
    hidden_sizes: tuple = (64,)
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    deterministic_full_batch: bool = False
    clip_epsilon: float = 1e-7

    def __post_init__(self):
        object.__setattr__(self, "loss", LossId.parse(self.loss))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.learning_rate >= 0:
            # zero is accepted: it evaluates the initial model without moving it
            raise ConfigError("learning_rate must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ConfigError("adam_epsilon must be positive")
        try:
            ClipPolicy(self.clip_epsilon)
        except BenchError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def clip(self) -> ClipPolicy:
        return ClipPolicy(self.clip_epsilon)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new params and state, inputs untouched."""
    t = state.t + 1
    lr, b1, b2, eps = cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        if a.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {a.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_arrays.append(a - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return MlpParams(new_arrays[0::2], new_arrays[1::2]), AdamState(new_m, new_v, t)


@dataclass
class TrainReport:
    loss_history: np.ndarray
    final_params: MlpParams
    wall_time: float = field(compare=False)
    epochs_run: int = 0

    def __eq__(self, other):
        if not isinstance(other, TrainReport):
            return NotImplemented
        return (
            self.epochs_run == other.epochs_run
            and np.array_equal(self.loss_history, other.loss_history)
            and self.final_params == other.final_params
        )


def train(ds: LabeledDataset, cfg: TrainConfig) -> TrainReport:
    """Mini-batch Adam for ``cfg.epochs`` epochs.

    The recorded loss for an epoch is the instance-weighted mean of the batch
    losses seen during that epoch, each evaluated before its update.  With
    ``deterministic_full_batch`` every epoch is a single step on the whole
    set, in fixed order.
    """
    start = time.perf_counter()
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    params = glorot_init([ds.d, *cfg.hidden_sizes, ds.k], int(init_seq.generate_state(1)[0]))
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(shuffle_seq)
    clip = cfg.clip
    batch = ds.n if cfg.deterministic_full_batch else cfg.batch_size

    history = []
    for epoch in range(cfg.epochs):
        order = np.arange(ds.n) if cfg.deterministic_full_batch else rng.permutation(ds.n)
        total = 0.0
        for b, lo in enumerate(range(0, ds.n, batch)):
            idx = order[lo : lo + batch]
            try:
                values, grads = _loss_and_grads(
                    params, ds.features[idx], ds.targets[idx], cfg.loss, clip, RMSE_FLOOR
                )
                params, state = adam_step(params, grads, state, cfg)
                if not np.all(np.isfinite(params.flatten())):
                    raise NumericDomainError("parameters became non-finite")
            except NumericDomainError as exc:
                raise type(exc)(f"{cfg.loss} epoch {epoch} batch {b}: {exc}") from exc
            total += float(np.sum(values))
        history.append(total / ds.n)

    return TrainReport(np.asarray(history), params, time.perf_counter() - start, cfg.epochs)


@dataclass
class MetricBundle:
    macro_f1: float
    ndcg: float
    acc_rank: float
    losses: dict  # LossId -> mean per-example loss
    n: int = 0

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "macro_f1": self.macro_f1,
            "ndcg": self.ndcg,
            "acc_rank": self.acc_rank,
            "losses": {str(k): v for k, v in self.losses.items()},
        }


def evaluate_predictions(targets, predictions, clip: ClipPolicy = DEFAULT_CLIP) -> MetricBundle:
    targets = np.atleast_2d(targets)
    predictions = np.atleast_2d(predictions)
    losses = {
        loss: float(np.mean(evaluate_loss(loss, targets, predictions, clip))) for loss in ALL_LOSSES
    }
    return MetricBundle(
        macro_f1=metrics.macro_f1(targets, predictions),
        ndcg=metrics.ndcg(targets, predictions),
        acc_rank=metrics.accuracy_ranking_decrease(targets, predictions),
        losses=losses,
        n=len(targets),
    )


def evaluate(params: MlpParams, ds: LabeledDataset, clip: ClipPolicy = DEFAULT_CLIP, use_truth: bool = False) -> MetricBundle:
    """Forward every instance once and score predictions against targets (or ground truth)."""
    if ds.d != params.weights[0].shape[0] or ds.k != params.weights[-1].shape[1]:
        raise ShapeError(f"dataset (d={ds.d}, K={ds.k}) does not match network {params.layer_sizes}")
    reference = ds.targets
    if use_truth:
        if ds.truth is None:
            raise ShapeError("dataset carries no ground-truth distributions")
        reference = ds.truth
    _, probs = forward(params, ds.features)
    return evaluate_predictions(reference, probs, clip)
