"""Shared domain types: labeled datasets, group bookkeeping, linear models,
per-sample weighting and purpose-keyed random streams."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class RadLLRError(Exception):
    """Base error. ``code`` is a stable machine-readable tag."""

    def __init__(self, code: str, message: str | None = None):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class DataError(RadLLRError, ValueError):
    """Invalid input data, configuration values or file contents."""


class NumericalError(RadLLRError, ArithmeticError):
    """A fit or closed-form evaluation could not produce finite numbers."""


class GroupKey(NamedTuple):
    y: int
    d: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Latent features with class labels, domain labels and optional
    binary pseudo-annotations.

    Arrays are copied and made read-only on construction. ``num_classes`` and
    ``num_domains`` default to ``max(label) + 1`` (at least 2).
    """

    features: np.ndarray
    y: np.ndarray
    d: np.ndarray
    d_tilde: np.ndarray | None = None
    num_classes: int | None = None
    num_domains: int | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError("shape-mismatch", "features must be a 2-D array")
        y = np.asarray(self.y)
        d = np.asarray(self.d)
        n = X.shape[0]
        if y.shape != (n,) or d.shape != (n,):
            raise DataError("shape-mismatch", "label arrays must have length n")
        if n and not (np.issubdtype(y.dtype, np.integer) or np.all(np.mod(y, 1) == 0)):
            raise DataError("invalid-label", "class labels must be integers")
        if n and not (np.issubdtype(d.dtype, np.integer) or np.all(np.mod(d, 1) == 0)):
            raise DataError("invalid-label", "domain labels must be integers")
        y = y.astype(np.int64)
        d = d.astype(np.int64)
        if n and (y.min() < 0 or d.min() < 0):
            raise DataError("invalid-label", "labels must be non-negative")
        K = self.num_classes if self.num_classes is not None else max(2, int(y.max(initial=-1)) + 1)
        M = self.num_domains if self.num_domains is not None else max(2, int(d.max(initial=-1)) + 1)
        if n and (y.max() >= K or d.max() >= M):
            raise DataError("invalid-label", f"labels outside {K} classes x {M} domains")
        dt = self.d_tilde
        if dt is not None:
            dt = np.asarray(dt)
            if dt.shape != (n,):
                raise DataError("shape-mismatch", "d_tilde must have length n")
            if not np.all((dt == 0) | (dt == 1)):
                raise DataError("invalid-label", "d_tilde entries must be 0 or 1")
            dt = _frozen(dt.astype(np.int64))
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "d_tilde", dt)
        object.__setattr__(self, "num_classes", int(K))
        object.__setattr__(self, "num_domains", int(M))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    @property
    def num_groups(self) -> int:
        return self.num_classes * self.num_domains

    def group_index(self) -> np.ndarray:
        """Flat group id ``y * M + d`` for every row."""
        return self.y * self.num_domains + self.d

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            self.features[idx],
            self.y[idx],
            self.d[idx],
            None if self.d_tilde is None else self.d_tilde[idx],
            self.num_classes,
            self.num_domains,
        )

    def replace(self, **changes) -> "LabeledDataset":
        kw = dict(
            features=self.features,
            y=self.y,
            d=self.d,
            d_tilde=self.d_tilde,
            num_classes=self.num_classes,
            num_domains=self.num_domains,
        )
        kw.update(changes)
        return LabeledDataset(**kw)


@dataclass(frozen=True, eq=False)
class GroupStats:
    counts: np.ndarray  # (K, M)
    priors: np.ndarray  # (K, M)
    n_min: int

    def flat_counts(self) -> np.ndarray:
        return self.counts.ravel()

    def flat_priors(self) -> np.ndarray:
        return self.priors.ravel()


def compute_group_stats(data: LabeledDataset) -> GroupStats:
    """Empirical group counts, priors and the smallest nonempty group size."""
    if data.n < 1:
        raise DataError("empty-dataset")
    counts = np.bincount(data.group_index(), minlength=data.num_groups)
    counts = counts.reshape(data.num_classes, data.num_domains)
    priors = counts / counts.sum()
    n_min = int(counts[counts > 0].min())
    return GroupStats(_frozen(counts), _frozen(priors), n_min)


LINKS = ("identity-threshold", "softmax-argmax")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Last-layer classifier ``f(x) = link(w^T x + b)``.

    ``identity-threshold`` uses a weight vector and scalar bias and predicts
    ``1{w^T x + b > 1/2}``. ``softmax-argmax`` uses an ``(m, K)`` weight
    matrix and predicts the argmax of the logits (first index on ties).
    """

    w: np.ndarray
    b: np.ndarray | float
    link: str = "softmax-argmax"

    def __post_init__(self):
        if self.link not in LINKS:
            raise DataError("invalid-link", self.link)
        w = np.asarray(self.w, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if self.link == "identity-threshold":
            if w.ndim != 1 or b.ndim != 0:
                raise DataError("shape-mismatch", "threshold mode needs w: (m,), b: scalar")
        elif w.ndim != 2 or b.shape != (w.shape[1],):
            raise DataError("shape-mismatch", "softmax mode needs w: (m, K), b: (K,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericalError("diverged", "non-finite model parameters")
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def n_features(self) -> int:
        return self.w.shape[0]

    @property
    def num_classes(self) -> int:
        return 2 if self.link == "identity-threshold" else self.w.shape[1]

    def decision_function(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(
                "shape-mismatch",
                f"expected {self.n_features} features, got shape {X.shape}",
            )
        return X @ self.w + self.b

    def predict(self, features) -> np.ndarray:
        s = self.decision_function(features)
        if self.link == "identity-threshold":
            return (s > 0.5).astype(np.int64)
        return np.argmax(s, axis=1).astype(np.int64)

    @classmethod
    def from_binary_logit(cls, w, b) -> "LinearModel":
        """Binary logistic model ``sigma(w^T x + b)`` as a two-column softmax
        with a zero reference column."""
        w = np.asarray(w, dtype=float).ravel()
        return cls(np.column_stack([np.zeros_like(w), w]), np.array([0.0, float(b)]))

    def binary_logit(self) -> tuple[np.ndarray, float]:
        """Inverse of :meth:`from_binary_logit` for any two-class softmax."""
        if self.link != "softmax-argmax" or self.w.shape[1] != 2:
            raise DataError("shape-mismatch", "not a two-class softmax model")
        return self.w[:, 1] - self.w[:, 0], float(self.b[1] - self.b[0])


def predict(model: LinearModel, features) -> np.ndarray:
    return model.predict(features)


def per_group_accuracy(model: LinearModel, data: LabeledDataset) -> dict[GroupKey, float | None]:
    """Accuracy for every (class, domain) group; ``None`` marks an empty group."""
    correct = model.predict(data.features) == data.y
    g = data.group_index()
    G = data.num_groups
    hits = np.bincount(g, weights=correct, minlength=G)
    tot = np.bincount(g, minlength=G)
    out = {}
    for k in range(G):
        key = GroupKey(k // data.num_domains, k % data.num_domains)
        out[key] = float(hits[k] / tot[k]) if tot[k] else None
    return out


def worst_group_accuracy(model: LinearModel, data: LabeledDataset) -> float:
    if data.n < 1:
        raise DataError("empty-dataset")
    accs = [a for a in per_group_accuracy(model, data).values() if a is not None]
    return min(accs)


WEIGHT_MODES = ("uniform", "per-group", "pseudo-minority")


@dataclass(frozen=True, eq=False)
class WeightingScheme:
    """Per-sample loss costs.

    ``per-group`` looks up ``group_costs[y, d]``; ``pseudo-minority`` applies
    ``minority_factor`` where ``d_tilde == 1`` and 1 elsewhere.
    """

    mode: str = "uniform"
    group_costs: np.ndarray | None = None
    minority_factor: float = 1.0

    def __post_init__(self):
        if self.mode not in WEIGHT_MODES:
            raise DataError("invalid-weighting", self.mode)
        if self.mode == "per-group":
            if self.group_costs is None:
                raise DataError("invalid-weighting", "per-group mode needs group_costs")
            c = np.asarray(self.group_costs, dtype=float)
            if c.ndim != 2 or not np.all(c > 0):
                raise DataError("invalid-weighting", "group costs must be a positive (K, M) array")
            object.__setattr__(self, "group_costs", _frozen(c))
        if not self.minority_factor > 0:
            raise DataError("invalid-weighting", "minority_factor must be > 0")

    @classmethod
    def uniform(cls) -> "WeightingScheme":
        return cls("uniform")

    def sample_weights(self, data: LabeledDataset) -> np.ndarray:
        if self.mode == "uniform":
            return np.ones(data.n)
        if self.mode == "per-group":
            if self.group_costs.shape != (data.num_classes, data.num_domains):
                raise DataError("shape-mismatch", "group_costs do not match dataset groups")
            return self.group_costs[data.y, data.d]
        if data.d_tilde is None:
            raise DataError("missing-annotation", "pseudo-minority weighting needs d_tilde")
        return np.where(data.d_tilde == 1, float(self.minority_factor), 1.0)


def stable_hash(label: str) -> int:
    """32-bit hash of a string that does not depend on PYTHONHASHSEED."""
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "little")


@dataclass(frozen=True)
class RngSeed:
    """A master seed plus a purpose label (``noise``, ``downsample``, ``init``,
    ``split``...). Streams are derived with :class:`numpy.random.SeedSequence`
    keyed on ``(stable_hash(stream), *index)`` so they never collide across
    purposes and never touch global state."""

    seed: int = 0
    stream: str = "init"
    index: tuple = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DataError("invalid-seed", "seed must be a 64-bit unsigned integer")

    def spawn(self, *index: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream, tuple(self.index) + tuple(int(i) for i in index))

    def with_stream(self, stream: str) -> "RngSeed":
        return RngSeed(self.seed, stream, self.index)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(stable_hash(self.stream),) + tuple(self.index)
        )
        return np.random.Generator(np.random.PCG64(ss))
