"""Last-layer trainers.

Two objectives are supported:

* weighted squared loss on binary targets, solved in closed form from
  (weighted) first and second moments, giving a threshold-at-1/2 model;
* weighted logistic loss with an L1 (or squared L2) penalty on the weights
  only, minimised by accelerated proximal gradient with backtracking.

The logistic objective is::

    (1/n) sum_i c_i * logloss(w^T x_i + b, y_i) + lam * ||w||_1

Multiplying every ``c_i`` by ``k`` is the same problem as dividing ``lam``
by ``k``.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import (
    DataError,
    LabeledDataset,
    LinearModel,
    NumericalError,
    RngSeed,
    WeightingScheme,
)


@dataclass(frozen=True)
class LsqConfig:
    jitter: float = 1e-10

    def __post_init__(self):
        if self.jitter < 0:
            raise DataError("invalid-jitter", "jitter must be >= 0")


@dataclass(frozen=True)
class LogRegConfig:
    """``lam`` is the penalty strength (``lambda`` is a Python keyword)."""

    lam: float = 0.0
    max_iters: int = 10_000
    tol: float = 1e-8
    step_rule: str = "backtracking"
    init: str = "zeros"

    def __post_init__(self):
        if not (self.lam >= 0) or not np.isfinite(self.lam):
            raise DataError("invalid-lambda", f"lambda={self.lam}")
        if not self.tol > 0:
            raise DataError("invalid-config", "tol must be > 0")
        if self.max_iters < 1:
            raise DataError("invalid-config", "max_iters must be >= 1")
        if self.step_rule not in ("fixed", "backtracking"):
            raise DataError("invalid-config", f"unknown step rule {self.step_rule}")
        if self.init != "zeros":
            raise DataError("invalid-config", "only zero initialisation is supported")

    def replace(self, **kw) -> "LogRegConfig":
        d = dict(lam=self.lam, max_iters=self.max_iters, tol=self.tol, step_rule=self.step_rule, init=self.init)
        d.update(kw)
        return LogRegConfig(**d)


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    objective: float
    converged: bool
    sparsity: int


# -- weighted least squares ---------------------------------------------------


@dataclass(frozen=True)
class Moments:
    """Weighted means and (co)variances of features and a scalar target."""

    mean_x: np.ndarray
    cov_xx: np.ndarray
    mean_y: float
    cov_xy: np.ndarray


def weighted_moments(X: np.ndarray, y: np.ndarray, weights: np.ndarray) -> Moments:
    w = np.asarray(weights, dtype=float)
    W = w.sum()
    if not W > 0:
        raise DataError("invalid-weighting", "weights sum to zero")
    p = w / W
    mx = p @ X
    my = float(p @ y)
    Xc = X - mx
    cov = (Xc * p[:, None]).T @ Xc
    cxy = Xc.T @ (p * (y - my))
    return Moments(mx, 0.5 * (cov + cov.T), my, cxy)


def solve_moments(mom: Moments, cfg: LsqConfig = LsqConfig()) -> LinearModel:
    """``w = (Var(X) + jitter I)^-1 Cov(X, Y)``, ``b = E[Y] - w^T E[X]``."""
    m = mom.cov_xx.shape[0]
    A = mom.cov_xx + cfg.jitter * np.eye(m)
    ev = linalg.eigvalsh(A)
    if not np.all(np.isfinite(ev)) or ev[0] <= m * np.finfo(float).eps * max(ev[-1], 0.0):
        raise NumericalError("singular-moments")
    c = linalg.cho_factor(A, lower=True)
    w = linalg.cho_solve(c, mom.cov_xy)
    b = mom.mean_y - w @ mom.mean_x
    return LinearModel(w, b, link="identity-threshold")


def fit_weighted_least_squares(
    data: LabeledDataset,
    weights: WeightingScheme | None = None,
    cfg: LsqConfig | None = None,
) -> LinearModel:
    """Squared-loss regression of the 0/1 class label on the features."""
    if data.n < 1:
        raise DataError("empty-dataset")
    if data.num_classes != 2:
        raise DataError("not-binary", "least squares mode supports two classes only")
    weights = weights or WeightingScheme.uniform()
    c = weights.sample_weights(data)
    mom = weighted_moments(data.features, data.y.astype(float), c)
    return solve_moments(mom, cfg or LsqConfig())


# -- logistic regression --------------------------------------------------------


def soft_threshold(v, t):
    """Proximal map of ``t * |.|``: ``sign(v) * max(|v| - t, 0)``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _n_outputs(K: int) -> int:
    return 1 if K == 2 else K


def _softplus(z, e):
    # log(1 + exp(z)) given e = exp(-|z|); stable for any z
    return np.maximum(z, 0.0) + np.log1p(e)


def logistic_loss_grad(W, b, X, y, c, K):
    """Smooth part ``(1/n) sum c_i logloss_i`` and its gradient.

    Binary problems use one logit column (``W: (m, 1)``), multiclass problems
    use ``K`` softmax columns.
    """
    n = X.shape[0]
    Z = X @ W + b
    if K == 2:
        z = Z[:, 0]
        e = np.exp(-np.abs(z))
        loss = _softplus(z, e) - y * z
        r = 1.0 / (1.0 + e)
        G = (np.where(z >= 0, r, e * r) - y)[:, None]
    else:
        lse = logsumexp(Z, axis=1)
        loss = lse - Z[np.arange(n), y]
        G = np.exp(Z - lse[:, None])
        G[np.arange(n), y] -= 1.0
    f = float(c @ loss) / n
    Gc = G * (c / n)[:, None]
    return f, X.T @ Gc, Gc.sum(axis=0)


def logistic_loss(W, b, X, y, c, K) -> float:
    n = X.shape[0]
    Z = X @ W + b
    if K == 2:
        z = Z[:, 0]
        loss = _softplus(z, np.exp(-np.abs(z))) - y * z
    else:
        loss = logsumexp(Z, axis=1) - Z[np.arange(n), y]
    return float(c @ loss) / n


def _lipschitz_estimate(X, c, K) -> float:
    n = X.shape[0]
    Xa = np.column_stack([X, np.ones(n)])
    gram = (Xa * c[:, None]).T @ Xa / n
    top = float(linalg.eigvalsh(gram, subset_by_index=[gram.shape[0] - 1, gram.shape[0] - 1])[0])
    return max(top * (0.25 if K == 2 else 0.5), 1e-12)


def _prepare(data: LabeledDataset, weights: WeightingScheme | None):
    if data.n < 1:
        raise DataError("empty-dataset")
    K = data.num_classes
    if K < 2:
        raise DataError("invalid-label", "need at least two classes")
    weights = weights or WeightingScheme.uniform()
    c = np.asarray(weights.sample_weights(data), dtype=float)
    if not np.all(c > 0) or not np.all(np.isfinite(c)):
        raise DataError("invalid-weighting", "sample weights must be positive and finite")
    return data.features, data.y, c, K


# the stopping test compares F now with F this many accepted steps ago; a
# single-step decrease test stops far from the optimum on ill-conditioned data
WINDOW = 100


def _proximal_gradient(X, y, c, K, cfg: LogRegConfig, penalty: str, trace: list | None = None):
    lam = cfg.lam
    m = X.shape[1]
    k = _n_outputs(K)

    if penalty == "l1":
        def smooth(W, b):
            return logistic_loss_grad(W, b, X, y, c, K)

        def smooth_val(W, b):
            return logistic_loss(W, b, X, y, c, K)

        def prox(W, step):
            return soft_threshold(W, lam * step)

        def pen(W):
            return lam * float(np.abs(W).sum())
    else:
        def smooth(W, b):
            f, gW, gb = logistic_loss_grad(W, b, X, y, c, K)
            return f + lam * float((W * W).sum()), gW + 2 * lam * W, gb

        def smooth_val(W, b):
            return logistic_loss(W, b, X, y, c, K) + lam * float((W * W).sum())

        def prox(W, step):
            return W

        def pen(W):
            return 0.0

    if K == 2:
        y = y.astype(float)  # avoids int/float mixing in every loss evaluation
    L = _lipschitz_estimate(X, c, K) + (2 * lam if penalty == "l2" else 0.0)
    backtrack = cfg.step_rule == "backtracking"

    def step_from(W, b, L):
        f, gW, gb = smooth(W, b)
        while True:
            Wn = prox(W - gW / L, 1.0 / L)
            bn = b - gb / L
            fn = smooth_val(Wn, bn)
            if not backtrack:
                break
            dW, db = Wn - W, bn - b
            quad = f + float((gW * dW).sum() + gb @ db) + 0.5 * L * float((dW * dW).sum() + db @ db)
            if fn <= quad + 1e-14 * abs(f):
                break
            L *= 2.0
            if L > 1e300:
                raise NumericalError("diverged", "step size underflow")
        return Wn, bn, fn + pen(Wn), L

    W = np.zeros((m, k))
    b = np.zeros(k)
    F = smooth_val(W, b) + pen(W)
    Wy, by, t = W, b, 1.0
    converged = False
    history = collections.deque(maxlen=WINDOW)
    it = 0
    while it < cfg.max_iters:
        it += 1
        Wn, bn, Fn, L = step_from(Wy, by, L)
        if not np.isfinite(Fn):
            raise NumericalError("diverged", "non-finite objective")
        if Fn > F:
            if Wy is W:
                # even a plain step cannot decrease F: stationary to rounding
                converged = True
                break
            # momentum overshoot: restart with a plain step from the current point
            Wy, by, t = W, b, 1.0
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next
        Wy, by = Wn + mom * (Wn - W), bn + mom * (bn - b)
        W, b, F, t = Wn, bn, Fn, t_next
        history.append(F)
        if trace is not None:
            trace.append(F)
        if len(history) == WINDOW and history[0] - F <= cfg.tol * max(abs(F), 1e-300):
            converged = True
            break
    if not np.isfinite(F):
        raise NumericalError("diverged", "non-finite objective")
    diag = FitDiagnostics(it, float(F), converged, int(np.count_nonzero(W == 0.0)))
    return W, b, diag


def _to_model(W, b, K) -> LinearModel:
    if K == 2:
        return LinearModel.from_binary_logit(W[:, 0], b[0])
    return LinearModel(W, b)


def objective(model: LinearModel, data: LabeledDataset, weights: WeightingScheme | None, lam: float, penalty: str = "l1") -> float:
    """Full penalised objective of ``model`` on ``data``."""
    X, y, c, K = _prepare(data, weights)
    if K == 2:
        w, b = model.binary_logit()
        W, bb = w[:, None], np.array([b])
    else:
        W, bb = model.w, model.b
    f = logistic_loss(W, bb, X, y, c, K)
    if penalty == "l1":
        return f + lam * float(np.abs(W).sum())
    return f + lam * float((W * W).sum())


def fit_l1_logistic(
    data: LabeledDataset,
    weights: WeightingScheme | None = None,
    cfg: LogRegConfig | None = None,
    seed: RngSeed | None = None,
    trace: list | None = None,
) -> tuple[LinearModel, FitDiagnostics]:
    """Weighted L1-penalised logistic regression (softmax for ``K > 2``).

    The bias is never penalised. Initialisation is all-zero, so ``seed`` has
    no effect; it is accepted for a uniform trainer signature. ``trace``, if
    given, receives the objective after every accepted step.
    """
    cfg = cfg or LogRegConfig()
    X, y, c, K = _prepare(data, weights)
    W, b, diag = _proximal_gradient(X, y, c, K, cfg, "l1", trace)
    return _to_model(W, b, K), diag


def l2_variant(
    data: LabeledDataset,
    weights: WeightingScheme | None = None,
    cfg: LogRegConfig | None = None,
    seed: RngSeed | None = None,
    trace: list | None = None,
) -> tuple[LinearModel, FitDiagnostics]:
    """As :func:`fit_l1_logistic` with ``lam * ||w||_2^2`` instead."""
    cfg = cfg or LogRegConfig()
    X, y, c, K = _prepare(data, weights)
    W, b, diag = _proximal_gradient(X, y, c, K, cfg, "l2", trace)
    return _to_model(W, b, K), diag


def lambda_max(data: LabeledDataset, weights: WeightingScheme | None = None) -> float:
    """Smallest L1 strength at which the all-zero weight vector is optimal."""
    X, y, c, K = _prepare(data, weights)
    k = _n_outputs(K)
    # optimal bias with w = 0 is the weighted class log-odds
    pri = np.bincount(y, weights=c, minlength=K) / c.sum()
    with np.errstate(divide="ignore"):
        logp = np.log(pri)
    if K == 2:
        b = np.array([logp[1] - logp[0]])
    else:
        b = logp
    b = np.where(np.isfinite(b), b, -50.0)
    _, gW, _ = logistic_loss_grad(np.zeros((X.shape[1], k)), b, X, y, c, K)
    return float(np.max(np.abs(gW)))


LAMBDA_CONVENTIONS = ("absolute", "inverse", "relative")


def resolve_lambda(value: float, convention: str, data: LabeledDataset, weights: WeightingScheme | None = None) -> float:
    """Penalty strength for a grid value.

    ``absolute`` uses the value as is. ``inverse`` reads it as an inverse
    strength ``C`` on the summed loss, i.e. ``lam = 1 / (n * C)`` for the
    mean-loss objective used here. ``relative`` scales :func:`lambda_max`
    of the data actually being fitted.
    """
    value = float(value)
    if convention == "absolute":
        return value
    if convention == "inverse":
        if not value > 0:
            raise DataError("invalid-lambda", "inverse strength must be > 0")
        return 1.0 / (data.n * value)
    if convention == "relative":
        if not value >= 0:
            raise DataError("invalid-lambda", "relative strength must be >= 0")
        return value * lambda_max(data, weights)
    raise DataError("invalid-config", f"unknown lambda convention {convention}")


def stronger_first(convention: str) -> bool:
    """Whether larger grid values mean stronger regularisation."""
    return convention != "inverse"


def average_models(models: Sequence[LinearModel]) -> LinearModel:
    """Entrywise mean of weights and biases."""
    models = list(models)
    if not models:
        raise DataError("shape-mismatch", "no models to average")
    ref = models[0]
    for mdl in models[1:]:
        if mdl.link != ref.link or mdl.w.shape != ref.w.shape or np.shape(mdl.b) != np.shape(ref.b):
            raise DataError("shape-mismatch", "models differ in shape or link")
    w = np.mean([mdl.w for mdl in models], axis=0)
    b = np.mean([mdl.b for mdl in models], axis=0)
    return LinearModel(w, b, ref.link)


# -- scikit-learn estimators ------------------------------------------------------


class _EncodedClassifier(ClassifierMixin, BaseEstimator):
    def _encode(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise DataError("invalid-label", "need at least two classes")
        self.n_features_in_ = X.shape[1]
        return X, y_enc

    def _dataset(self, X, y_enc):
        return LabeledDataset(X, y_enc, np.zeros(len(y_enc), dtype=int), num_classes=len(self.classes_))

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_array(X)
        s = self.model_.decision_function(X)
        if self.model_.link == "softmax-argmax" and s.shape[1] == 2:
            return s[:, 1] - s[:, 0]
        return s

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[self.model_.predict(check_array(X))]

    @property
    def coef_(self):
        check_is_fitted(self)
        if self.model_.link == "identity-threshold":
            return self.model_.w[None, :]
        if self.model_.w.shape[1] == 2:
            return self.model_.binary_logit()[0][None, :]
        return self.model_.w.T

    @property
    def intercept_(self):
        check_is_fitted(self)
        if self.model_.link == "identity-threshold":
            return np.atleast_1d(self.model_.b)
        if self.model_.w.shape[1] == 2:
            return np.array([self.model_.binary_logit()[1]])
        return self.model_.b


class L1LogisticRegression(_EncodedClassifier):
    """Penalised logistic regression trained by proximal gradient.

    Parameters
    ----------
    lam : float
        Penalty strength on the weights (never the intercept).
    penalty : {"l1", "l2"}
        ``l2`` uses ``lam * ||w||_2^2``.
    max_iters, tol, step_rule
        See :class:`LogRegConfig`.
    """

    def __init__(self, lam=0.0, penalty="l1", max_iters=10_000, tol=1e-8, step_rule="backtracking"):
        self.lam = lam
        self.penalty = penalty
        self.max_iters = max_iters
        self.tol = tol
        self.step_rule = step_rule

    def fit(self, X, y, sample_weight=None):
        X, y_enc = self._encode(X, y)
        data = self._dataset(X, y_enc)
        cfg = LogRegConfig(self.lam, self.max_iters, self.tol, self.step_rule)
        if self.penalty not in ("l1", "l2"):
            raise DataError("invalid-config", f"unknown penalty {self.penalty}")
        _, _, c, K = _prepare(data, None)
        if sample_weight is not None:
            c = np.asarray(sample_weight, dtype=float)
            if c.shape != (data.n,) or not np.all(c > 0):
                raise DataError("invalid-weighting", "sample_weight must be positive, length n")
        W, b, self.diagnostics_ = _proximal_gradient(data.features, data.y, c, K, cfg, self.penalty)
        self.model_ = _to_model(W, b, K)
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        s = self.model_.decision_function(check_array(X))
        s = s - s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)


class LeastSquaresClassifier(_EncodedClassifier):
    """Binary classifier from weighted squared-loss regression on 0/1
    targets, thresholded at 1/2."""

    def __init__(self, jitter=1e-10):
        self.jitter = jitter

    def fit(self, X, y, sample_weight=None):
        X, y_enc = self._encode(X, y)
        if len(self.classes_) != 2:
            raise DataError("not-binary", "least squares mode supports two classes only")
        c = np.ones(len(y_enc)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        self.model_ = solve_moments(weighted_moments(X, y_enc.astype(float), c), LsqConfig(self.jitter))
        return self

