"""Retraining pipelines built from downsampling and upweighting.

Method vocabulary:

``llr``           uniform-weight retraining on all data
``gds`` / ``cds`` downsample every (class, domain) group / every class to the smallest one
``guw`` / ``cuw`` weight each sample by ``1 / (units * prior)`` of its group / class
``gds-averaged``  mean of several ``gds`` models fitted on independent downsamples
``m-self``        fine-tune on a class-balanced set of training errors
``rad-uw``        dispatched to :mod:`radllr.rad`

Only ``gds``, ``guw`` and ``gds-averaged`` read the domain column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import (
    DataError,
    GroupStats,
    LabeledDataset,
    LinearModel,
    NumericalError,
    RngSeed,
    WeightingScheme,
    compute_group_stats,
)
from .rad import RadAnnotation, RadConfig, fit_rad_uw
from .solvers import (
    LAMBDA_CONVENTIONS,
    LogRegConfig,
    LsqConfig,
    average_models,
    fit_l1_logistic,
    fit_weighted_least_squares,
    l2_variant,
    logistic_loss_grad,
    resolve_lambda,
)

METHODS = ("llr", "gds", "guw", "cds", "cuw", "gds-averaged", "m-self", "rad-uw")
DOMAIN_FREE = ("llr", "cds", "cuw", "m-self", "rad-uw")


@dataclass(frozen=True)
class MSelfConfig:
    finetune_steps: int = 100
    learning_rate: float = 1e-2
    points_per_class: int = 100

    def __post_init__(self):
        if self.finetune_steps < 0 or self.points_per_class < 1 or not self.learning_rate > 0:
            raise DataError("invalid-config", "bad M-SELF settings")


@dataclass(frozen=True)
class PipelineSpec:
    """One retraining recipe.

    ``loss`` selects the squared-loss closed form (binary only) or penalised
    logistic regression; ``penalty`` picks L1 or squared L2 for the latter.
    ``rad`` holds the identification settings used by ``rad-uw``; its
    retraining strength is taken from ``solver.lam``. ``lam_convention``
    says how ``solver.lam`` is read; it is resolved against the rows and
    weights of each individual fit.
    """

    method: str = "llr"
    solver: LogRegConfig = field(default_factory=LogRegConfig)
    loss: str = "logistic"
    penalty: str = "l1"
    lsq: LsqConfig = field(default_factory=LsqConfig)
    averaging_runs: int = 10
    mself: MSelfConfig = field(default_factory=MSelfConfig)
    rad: RadConfig | None = None
    lam_convention: str = "absolute"

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError("invalid-method", f"unknown method {self.method}")
        if self.loss not in ("logistic", "squared"):
            raise DataError("invalid-config", f"unknown loss {self.loss}")
        if self.penalty not in ("l1", "l2"):
            raise DataError("invalid-config", f"unknown penalty {self.penalty}")
        if self.lam_convention not in LAMBDA_CONVENTIONS:
            raise DataError("invalid-config", f"unknown lambda convention {self.lam_convention}")
        if self.averaging_runs < 1:
            raise DataError("invalid-config", "averaging_runs must be >= 1")
        if self.method == "rad-uw" and self.rad is None:
            raise DataError("invalid-config", "rad-uw needs a RadConfig")
        if self.loss == "squared" and self.method in ("m-self", "rad-uw"):
            raise DataError("invalid-config", f"{self.method} is logistic-only")


@dataclass(frozen=True, eq=False)
class PipelineResult:
    model: LinearModel
    flags: tuple = ()
    info: dict = field(default_factory=dict)
    annotation: RadAnnotation | None = None


def _units(data: LabeledDataset, by: str) -> tuple[np.ndarray, int]:
    if by == "group":
        return data.group_index(), data.num_groups
    if by == "class":
        return data.y, data.num_classes
    raise DataError("invalid-config", f"unknown balancing unit {by}")


def downsample_indices(data: LabeledDataset, by: str, seed: RngSeed) -> np.ndarray:
    """Sorted row indices of a balanced subsample (see :func:`downsample`)."""
    if data.n < 1:
        raise DataError("empty-dataset")
    unit, g = _units(data, by)
    counts = np.bincount(unit, minlength=g)
    if np.any(counts == 0):
        raise DataError("empty-group", f"{by} counts {counts.tolist()}")
    n_min = int(counts.min())
    rng = seed.generator()
    keep = [rng.choice(np.flatnonzero(unit == k), size=n_min, replace=False) for k in range(g)]
    return np.sort(np.concatenate(keep))


def downsample(data: LabeledDataset, by: str = "group", seed: RngSeed | int = 0) -> LabeledDataset:
    """Uniform subsample without replacement so every group (or class) keeps
    exactly as many rows as the smallest one. Row order is preserved."""
    if not isinstance(seed, RngSeed):
        seed = RngSeed(int(seed), "downsample")
    return data.subset(downsample_indices(data, by, seed))


def upweight_costs(stats: GroupStats, by: str = "group") -> WeightingScheme:
    """Inverse-prior costs ``1 / (g * prior)`` per group, or
    ``1 / (K * class prior)`` broadcast across domains."""
    pri = np.asarray(stats.priors, dtype=float)
    if by == "group":
        if np.any(pri <= 0):
            raise DataError("empty-group", "a group has zero prior")
        costs = 1.0 / (pri.size * pri)
    elif by == "class":
        cls = pri.sum(axis=1)
        if np.any(cls <= 0):
            raise DataError("empty-group", "a class has zero prior")
        costs = np.repeat((1.0 / (len(cls) * cls))[:, None], pri.shape[1], axis=1)
    else:
        raise DataError("invalid-config", f"unknown balancing unit {by}")
    return WeightingScheme("per-group", group_costs=costs)


def _train(spec: PipelineSpec, data: LabeledDataset, weights: WeightingScheme, seed: RngSeed) -> LinearModel:
    if spec.loss == "squared":
        return fit_weighted_least_squares(data, weights, spec.lsq)
    return _logistic(spec, data, weights, seed)


def _logistic(spec: PipelineSpec, data: LabeledDataset, weights: WeightingScheme, seed: RngSeed) -> LinearModel:
    fit = fit_l1_logistic if spec.penalty == "l1" else l2_variant
    lam = resolve_lambda(spec.solver.lam, spec.lam_convention, data, weights)
    return fit(data, weights, spec.solver.replace(lam=lam), seed)[0]


def _blind(data: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(data.features, data.y, np.zeros(data.n, dtype=np.int64), num_classes=data.num_classes)


def _as_logits(model: LinearModel) -> tuple[np.ndarray, np.ndarray]:
    if model.w.shape[1] == 2:
        w, b = model.binary_logit()
        return w[:, None], np.array([b])
    return np.array(model.w), np.array(model.b)


def fit_mself(spec: PipelineSpec, train: LabeledDataset, seed: RngSeed) -> PipelineResult:
    data = _blind(train)
    K = data.num_classes
    id_model = _logistic(spec, data, WeightingScheme.uniform(), seed)
    wrong = np.flatnonzero(id_model.predict(data.features) != data.y)
    if wrong.size == 0:
        return PipelineResult(id_model, ("empty-error-set",), {"error_set_size": 0})
    rng = seed.with_stream("mself").generator()
    chosen = []
    for k in range(K):
        idx = wrong[data.y[wrong] == k]
        if idx.size > spec.mself.points_per_class:
            idx = np.sort(rng.choice(idx, size=spec.mself.points_per_class, replace=False))
        chosen.append(idx)
    sel = np.concatenate(chosen)
    X, y = data.features[sel], data.y[sel]
    c = np.ones(sel.size)
    W, b = _as_logits(id_model)
    for _ in range(spec.mself.finetune_steps):
        _, gW, gb = logistic_loss_grad(W, b, X, y, c, K)
        W = W - spec.mself.learning_rate * gW
        b = b - spec.mself.learning_rate * gb
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise NumericalError("diverged", "M-SELF fine-tuning diverged")
    model = LinearModel.from_binary_logit(W[:, 0], b[0]) if K == 2 else LinearModel(W, b)
    return PipelineResult(model, (), {"error_set_size": int(sel.size)})


def run_mself(spec: PipelineSpec, train: LabeledDataset, seed: RngSeed) -> LinearModel:
    """Identification fit, class-balanced error set, then ``finetune_steps``
    full-batch gradient steps on that set. Never reads the domain column."""
    return fit_mself(spec, train, seed).model


def fit_pipeline(
    spec: PipelineSpec,
    train: LabeledDataset,
    seed: RngSeed | int = 0,
    rad_annotation: RadAnnotation | None = None,
) -> PipelineResult:
    if not isinstance(seed, RngSeed):
        seed = RngSeed(int(seed), "init")
    if train.n < 1:
        raise DataError("empty-dataset")
    method = spec.method
    if method in DOMAIN_FREE:
        train = _blind(train)
    ds_seed = seed.with_stream("downsample")
    if method == "llr":
        return PipelineResult(_train(spec, train, WeightingScheme.uniform(), seed))
    if method in ("gds", "cds"):
        by = "group" if method == "gds" else "class"
        sub = downsample(train, by, ds_seed)
        return PipelineResult(_train(spec, sub, WeightingScheme.uniform(), seed), info={"n_fit": sub.n})
    if method in ("guw", "cuw"):
        by = "group" if method == "guw" else "class"
        costs = upweight_costs(compute_group_stats(train), by)
        return PipelineResult(_train(spec, train, costs, seed))
    if method == "gds-averaged":
        models = [
            _train(spec, downsample(train, "group", ds_seed.spawn(r)), WeightingScheme.uniform(), seed)
            for r in range(spec.averaging_runs)
        ]
        return PipelineResult(average_models(models))
    if method == "m-self":
        return fit_mself(spec, train, seed)
    return _rad_result(spec, train, seed, rad_annotation)


def rad_config_for(spec: PipelineSpec) -> RadConfig:
    """The :class:`RadConfig` a ``rad-uw`` pipeline runs with."""
    return RadConfig(
        spec.rad.lambda_id,
        spec.solver.lam,
        spec.rad.upweight_factor,
        spec.solver,
        spec.rad.id_penalty,
        spec.penalty,
        spec.lam_convention,
        spec.rad.id_convention or spec.rad.convention,
    )


def _rad_result(spec, train, seed, annotation) -> PipelineResult:
    cfg = rad_config_for(spec)
    res = fit_rad_uw(train, cfg, seed, annotation)
    return PipelineResult(res.model, res.flags, {"minority_count": res.annotation.minority_count}, res.annotation)


def run_pipeline(spec: PipelineSpec, train: LabeledDataset, seed: RngSeed | int = 0) -> LinearModel:
    return fit_pipeline(spec, train, seed).model


class RetrainingClassifier(ClassifierMixin, BaseEstimator):
    """Estimator front end for :func:`fit_pipeline`.

    ``fit`` takes an optional ``domains`` array; methods that balance by
    group require it. Class labels must be integers ``0..K-1``.
    """

    def __init__(
        self,
        method="llr",
        lam=0.0,
        loss="logistic",
        penalty="l1",
        averaging_runs=10,
        finetune_steps=100,
        learning_rate=1e-2,
        points_per_class=100,
        lambda_id=1e-2,
        upweight=10.0,
        max_iters=10_000,
        tol=1e-8,
        seed=0,
    ):
        self.method = method
        self.lam = lam
        self.loss = loss
        self.penalty = penalty
        self.averaging_runs = averaging_runs
        self.finetune_steps = finetune_steps
        self.learning_rate = learning_rate
        self.points_per_class = points_per_class
        self.lambda_id = lambda_id
        self.upweight = upweight
        self.max_iters = max_iters
        self.tol = tol
        self.seed = seed

    def _spec(self) -> PipelineSpec:
        solver = LogRegConfig(self.lam, self.max_iters, self.tol)
        return PipelineSpec(
            method=self.method,
            solver=solver,
            loss=self.loss,
            penalty=self.penalty,
            averaging_runs=self.averaging_runs,
            mself=MSelfConfig(self.finetune_steps, self.learning_rate, self.points_per_class),
            rad=RadConfig(self.lambda_id, self.lam, self.upweight, solver),
        )

    def fit(self, X, y, domains=None):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        if domains is None:
            if self.method not in DOMAIN_FREE:
                raise DataError("missing-annotation", f"{self.method} needs domain labels")
            domains = np.zeros(len(y_enc), dtype=int)
        data = LabeledDataset(X, y_enc, np.asarray(domains), num_classes=len(self.classes_))
        res = fit_pipeline(self._spec(), data, RngSeed(int(self.seed), "init"))
        self.model_ = res.model
        self.flags_ = res.flags
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        return self.model_.decision_function(check_array(X))

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[self.model_.predict(check_array(X))]


__all__ = [
    "METHODS",
    "DOMAIN_FREE",
    "MSelfConfig",
    "PipelineSpec",
    "PipelineResult",
    "downsample",
    "downsample_indices",
    "upweight_costs",
    "fit_pipeline",
    "run_pipeline",
    "fit_mself",
    "run_mself",
    "RetrainingClassifier",
]
