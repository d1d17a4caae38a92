"""Crowdsourced probability targets: repeats normalization, synthetic data, file I/O.

Dataset file layout (UTF-8, comma separated)::

    #meta,d=<d>,K=<K>,N=<N>
    x_1,...,x_d,p_1,...,p_K
    ...

Reals are written with 17 significant digits so that a save/load round trip
reproduces every value bit for bit.  Only features and targets are stored;
annotation counts and ground-truth distributions live in memory only.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .divergences import softmax
from .errors import ConfigError, FormatError, InvalidInputError, ShapeError

TARGET_ATOL = 1e-6
_META = re.compile(r"^#meta,d=(\d+),K=(\d+),N=(\d+)$")


def normalize_repeats(r) -> np.ndarray:
    """Turn annotation counts into a probability vector (row-wise for a 2-D array)."""
    r = np.asarray(r)
    if r.ndim not in (1, 2) or r.shape[-1] < 2:
        raise InvalidInputError(f"repeats must have shape (K,) or (N, K) with K >= 2, got {r.shape}")
    if np.any(r < 0):
        raise InvalidInputError("repeats must be non-negative")
    if np.any(r != np.round(r)):
        raise InvalidInputError("repeats must be integer counts")
    totals = r.sum(axis=-1, keepdims=True)
    if np.any(totals < 1):
        raise InvalidInputError("every repeats vector needs at least one annotation")
    return r.astype(np.float64) / totals


@dataclass(frozen=True)
class LabeledInstance:
    features: np.ndarray
    target: np.ndarray
    repeats: np.ndarray | None = None


@dataclass(eq=False)
class LabeledDataset:
    """N feature vectors with probability targets.

    ``repeats`` (annotation counts) and ``truth`` (the distribution the
    annotators sampled from) are optional and only present for generated data.
    """

    features: np.ndarray
    targets: np.ndarray
    repeats: np.ndarray | None = None
    truth: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("features and targets must be 2-D arrays")
        if len(self.features) != len(self.targets):
            raise ShapeError(f"{len(self.features)} feature rows vs {len(self.targets)} target rows")
        if len(self.targets) < 1:
            raise InvalidInputError("dataset needs at least one instance")
        if self.targets.shape[1] < 2:
            raise InvalidInputError("need at least 2 categories")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise InvalidInputError("non-finite values in dataset")
        if np.any(self.targets < 0) or np.any(np.abs(self.targets.sum(axis=1) - 1.0) > TARGET_ATOL):
            raise InvalidInputError("targets must lie on the probability simplex")
        for name in ("repeats", "truth"):
            extra = getattr(self, name)
            if extra is not None and np.shape(extra) != self.targets.shape:
                raise ShapeError(f"{name} shape {np.shape(extra)} does not match targets {self.targets.shape}")
        if self.repeats is not None:
            self.repeats = np.asarray(self.repeats, dtype=np.int64)
            if np.max(np.abs(normalize_repeats(self.repeats) - self.targets)) > 1e-12:
                raise InvalidInputError("targets disagree with normalized repeats")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=np.float64)

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return self.targets.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> LabeledInstance:
        rep = None if self.repeats is None else self.repeats[i]
        return LabeledInstance(self.features[i], self.targets[i], rep)

    def __iter__(self):
        return (self[i] for i in range(self.n))

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return all(
            same(getattr(self, f), getattr(other, f)) for f in ("features", "targets", "repeats", "truth")
        )

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(
            self.features[index],
            self.targets[index],
            None if self.repeats is None else self.repeats[index],
            None if self.truth is None else self.truth[index],
        )

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        def cat(a, b):
            return None if a is None or b is None else np.concatenate([a, b])

        return LabeledDataset(
            np.concatenate([self.features, other.features]),
            np.concatenate([self.targets, other.targets]),
            cat(self.repeats, other.repeats),
            cat(self.truth, other.truth),
        )


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic crowd-annotation generator.

    ``imbalance`` adds a linearly decreasing bias to the teacher logits so
    that low-index categories dominate; zero keeps classes balanced.
    """

    N: int = 2000
    d: int = 20
    K: int = 5
    annotators_per_item: int = 50
    teacher_hidden: int = 32
    temperature: float = 1.0
    seed: int = 0
    imbalance: float = 0.0

    def __post_init__(self):
        for name in ("N", "d", "K", "annotators_per_item", "teacher_hidden"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if not (isinstance(self.temperature, (int, float)) and self.temperature > 0):
            raise ConfigError(f"temperature must be positive, got {self.temperature!r}")
        if not isinstance(self.seed, (int, np.integer)) or not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.imbalance, (int, float)) or self.imbalance < 0:
            raise ConfigError(f"imbalance must be non-negative, got {self.imbalance!r}")


TEACHER_OUTPUT_SCALE = 3.0


def generate_synthetic(cfg: SynthConfig) -> LabeledDataset:
    """Sample features, pass them through a random tanh teacher, and simulate annotators.

    Each instance receives ``annotators_per_item`` independent labels drawn
    from the teacher's distribution; the normalized counts become the target.
    """
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal((cfg.N, cfg.d))
    w1 = rng.standard_normal((cfg.d, cfg.teacher_hidden)) / math.sqrt(cfg.d)
    b1 = 0.5 * rng.standard_normal(cfg.teacher_hidden)
    w2 = rng.standard_normal((cfg.teacher_hidden, cfg.K)) * TEACHER_OUTPUT_SCALE / math.sqrt(cfg.teacher_hidden)
    b2 = -cfg.imbalance * np.arange(cfg.K) / (cfg.K - 1)
    logits = np.tanh(x @ w1 + b1) @ w2 + b2
    truth = softmax(logits / cfg.temperature)
    repeats = rng.multinomial(cfg.annotators_per_item, truth)
    return LabeledDataset(x, normalize_repeats(repeats), repeats, truth)


def split(ds: LabeledDataset, train_fraction: float = 0.7, seed: int = 0):
    """Seeded shuffle, then the first floor(N * train_fraction) instances go to the train side."""
    if not (0.0 < train_fraction < 1.0):
        raise InvalidInputError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(ds.n * train_fraction))
    if n_train == 0 or n_train == ds.n:
        raise InvalidInputError(f"split of {ds.n} instances at {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(ds.n)
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


def format_real(x: float) -> str:
    return format(float(x), ".17g")


def save_dataset(ds: LabeledDataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"#meta,d={ds.d},K={ds.k},N={ds.n}\n")
        for x, p in zip(ds.features, ds.targets):
            fh.write(",".join(format_real(v) for v in (*x, *p)) + "\n")


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty dataset file", line=1)
    m = _META.match(lines[0].strip())
    if not m:
        raise FormatError(f"expected '#meta,d=<d>,K=<K>,N=<N>' header, got {lines[0]!r}", line=1)
    d, k, n = (int(g) for g in m.groups())
    if k < 2 or n < 1:
        raise FormatError("header needs K >= 2 and N >= 1", line=1)

    features = np.empty((n, d))
    targets = np.empty((n, k))
    rows = [(i, row) for i, row in enumerate(csv.reader(lines[1:]), start=2) if row]
    if len(rows) != n:
        raise FormatError(f"header declares N={n} but file has {len(rows)} rows")
    for r, (lineno, row) in enumerate(rows):
        if len(row) != d + k:
            raise FormatError(f"expected {d + k} fields (d={d}, K={k}), got {len(row)}", line=lineno)
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise FormatError(f"non-numeric field: {exc}", line=lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError("non-finite field", line=lineno)
        p = values[d:]
        if min(p) < 0.0 or abs(math.fsum(p) - 1.0) > TARGET_ATOL:
            raise FormatError(f"target is not a probability vector (sum {math.fsum(p):.9g})", line=lineno)
        features[r] = values[:d]
        targets[r] = p
    return LabeledDataset(features, targets)
