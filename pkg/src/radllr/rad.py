"""Regularized annotation of domains (RAD) and RAD-UW retraining.

RAD fits a strongly penalised logistic model on ``(x, y)`` alone and marks
every training point it misclassifies as a pseudo-minority (``d_tilde = 1``).
RAD-UW then refits on all points with pseudo-minorities upweighted by a
single factor ``c``. Neither step reads the domain column.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import DataError, LabeledDataset, LinearModel, RngSeed, WeightingScheme
from .solvers import LAMBDA_CONVENTIONS, FitDiagnostics, LogRegConfig, fit_l1_logistic, l2_variant, resolve_lambda

_TRAINERS = {"l1": fit_l1_logistic, "l2": l2_variant}


@dataclass(frozen=True)
class RadConfig:
    """Penalty strengths for the identification and retraining fits, the
    pseudo-minority upweight factor and solver settings. ``id_penalty`` and
    ``retrain_penalty`` switch either stage to a squared L2 penalty.
    ``convention`` says how the strengths are read (see
    :func:`radllr.solvers.resolve_lambda`); ``id_convention`` overrides it
    for ``lambda_id``."""

    lambda_id: float = 1e-2
    retrain_lambda: float = 1e-3
    upweight_factor: float = 10.0
    solver: LogRegConfig = field(default_factory=LogRegConfig)
    id_penalty: str = "l1"
    retrain_penalty: str = "l1"
    convention: str = "absolute"
    id_convention: str | None = None

    def __post_init__(self):
        if not self.lambda_id >= 0 or not self.retrain_lambda >= 0:
            raise DataError("invalid-lambda", "penalty strengths must be >= 0")
        if not self.upweight_factor > 0:
            raise DataError("invalid-weighting", "upweight factor must be > 0")
        for pen in (self.id_penalty, self.retrain_penalty):
            if pen not in _TRAINERS:
                raise DataError("invalid-config", f"unknown penalty {pen}")
        if self.convention not in LAMBDA_CONVENTIONS or self.id_convention not in LAMBDA_CONVENTIONS + (None,):
            raise DataError("invalid-config", f"unknown lambda convention {self.convention}")


@dataclass(frozen=True, eq=False)
class RadAnnotation:
    d_tilde: np.ndarray
    id_model: LinearModel
    minority_count: int
    diagnostics: FitDiagnostics | None = None


@dataclass(frozen=True, eq=False)
class RadUWResult:
    model: LinearModel
    annotation: RadAnnotation
    diagnostics: FitDiagnostics
    flags: tuple = ()


def _blind(data: LabeledDataset) -> LabeledDataset:
    # zero the domain column so nothing downstream can depend on it
    return LabeledDataset(data.features, data.y, np.zeros(data.n, dtype=np.int64), num_classes=data.num_classes)


def rad_annotate(data: LabeledDataset, cfg: RadConfig, seed: RngSeed | None = None) -> RadAnnotation:
    if data.n < 1:
        raise DataError("empty-dataset")
    blind = _blind(data)
    uniform = WeightingScheme.uniform()
    lam = resolve_lambda(cfg.lambda_id, cfg.id_convention or cfg.convention, blind, uniform)
    id_model, diag = _TRAINERS[cfg.id_penalty](blind, uniform, cfg.solver.replace(lam=lam), seed)
    d_tilde = (id_model.predict(blind.features) != blind.y).astype(np.int64)
    d_tilde.setflags(write=False)
    return RadAnnotation(d_tilde, id_model, int(d_tilde.sum()), diag)


def fit_rad_uw(
    data: LabeledDataset,
    cfg: RadConfig,
    seed: RngSeed | None = None,
    annotation: RadAnnotation | None = None,
) -> RadUWResult:
    """Both stages. A precomputed ``annotation`` for the same data and
    identification settings skips stage one."""
    ann = annotation if annotation is not None else rad_annotate(data, cfg, seed)
    flags = ()
    if ann.minority_count == 0:
        flags = ("no-pseudo-minority",)
    train = _blind(data).replace(d_tilde=ann.d_tilde)
    weights = WeightingScheme("pseudo-minority", minority_factor=cfg.upweight_factor)
    lam = resolve_lambda(cfg.retrain_lambda, cfg.convention, train, weights)
    model, diag = _TRAINERS[cfg.retrain_penalty](train, weights, cfg.solver.replace(lam=lam), seed)
    return RadUWResult(model, ann, diag, flags)


def rad_uw(data: LabeledDataset, cfg: RadConfig, seed: RngSeed | None = None) -> LinearModel:
    return fit_rad_uw(data, cfg, seed).model


class RADUpweightClassifier(ClassifierMixin, BaseEstimator):
    """Two-stage RAD-UW classifier.

    Parameters
    ----------
    lambda_id : float
        L1 strength of the identification model.
    lam : float
        L1 strength of the retraining model.
    upweight : float
        Loss multiplier for points the identification model misclassifies.
    """

    def __init__(self, lambda_id=1e-2, lam=1e-3, upweight=10.0, max_iters=10_000, tol=1e-8):
        self.lambda_id = lambda_id
        self.lam = lam
        self.upweight = upweight
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        data = LabeledDataset(X, y_enc, np.zeros(len(y_enc), dtype=int), num_classes=len(self.classes_))
        cfg = RadConfig(
            self.lambda_id, self.lam, self.upweight, LogRegConfig(max_iters=self.max_iters, tol=self.tol)
        )
        res = fit_rad_uw(data, cfg)
        if res.flags:
            warnings.warn("no pseudo-minority points; model equals plain retraining", stacklevel=2)
        self.model_ = res.model
        self.id_model_ = res.annotation.id_model
        self.pseudo_minority_ = res.annotation.d_tilde
        return self

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[self.model_.predict(check_array(X))]
