"""Closed-form squared-loss classifiers and worst-group accuracies for the
four-group mixture of :mod:`radllr.synthgen`.

All norms are sigma^-1 norms, ``||v||^2 = v^T sigma^-1 v``, computed from a
single Cholesky factor of sigma. ``normal_cdf`` plays the role of the
symmetric projection CDF; it is the only place the Gaussian choice enters the
reduced formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import erfc

from .core import DataError, GroupKey, LinearModel
from .noise import check_noise, ds_effective_prior, noisy_minority_prior
from .solvers import Moments
from .synthgen import B, R, MixtureSpec, SigmaNorm, check_prior

ORTHOGONALITY_LIMIT = 1e-6


def normal_cdf(x):
    """Standard normal CDF through the complementary error function, which
    keeps full relative accuracy in the lower tail."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


def sherman_morrison_solve(A: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(A + v v^T + u u^T)^-1 u`` for SPD ``A`` via two rank-one updates:
    ``c_u (A^-1 u - c_v A^-1 v)``."""
    cho = linalg.cho_factor(A, lower=True)
    Ai_u = linalg.cho_solve(cho, u)
    Ai_v = linalg.cho_solve(cho, v)
    c_v = (v @ Ai_u) / (1.0 + v @ Ai_v)
    Bi_u = Ai_u - c_v * Ai_v
    c_u = 1.0 / (1.0 + u @ Bi_u)
    return c_u * Bi_u


def c_tilde(pi0: float, norm_C2: float) -> float:
    """Weight on the spurious direction under orthogonal mean shifts."""
    return (1 - 4 * pi0) / (1 + 2 * pi0 * (1 - 2 * pi0) * norm_C2)


@dataclass(frozen=True, eq=False)
class ErmClosedForm:
    """``w = gamma * (sigma^-1 delta_D - c_pi0 * sigma^-1 delta_C)``."""

    w: np.ndarray
    b: float
    c_pi0: float
    gamma: float
    beta: float

    def model(self) -> LinearModel:
        return LinearModel(self.w, self.b, link="identity-threshold")


def erm_weights(spec: MixtureSpec, pi0: float | None = None) -> ErmClosedForm:
    """Population squared-loss minimiser at minority prior ``pi0``
    (defaults to ``spec.pi0``)."""
    pi0 = check_prior(spec.pi0 if pi0 is None else pi0)
    nrm = SigmaNorm(spec.sigma)
    dC, dD = spec.delta_C, spec.delta_D
    delta = 1 - 4 * pi0
    beta = 2 * pi0 * (1 - 2 * pi0)
    dbar = dD - delta * dC
    S = nrm.L @ nrm.L.T
    # (sigma + beta dC dC^T + dbar dbar^T / 4)^-1 dbar / 4
    w = 0.5 * sherman_morrison_solve(S, 0.5 * dbar, np.sqrt(beta) * dC)
    Si_dC = nrm.solve(dC)
    c_pi0 = (delta + beta * (dC @ nrm.solve(dD))) / (1 + beta * (dC @ Si_dC))
    # gamma = 1 / (4 + dbar^T (sigma + beta dC dC^T)^-1 dbar)
    Si_dbar = nrm.solve(dbar)
    Bi_dbar = Si_dbar - (beta * (dC @ Si_dbar) / (1 + beta * (dC @ Si_dC))) * Si_dC
    gamma = 1.0 / (4.0 + dbar @ Bi_dbar)
    mu = spec.group_means()
    b = 0.5 - 0.5 * w @ (mu[0, R] + mu[1, B])
    return ErmClosedForm(w, float(b), float(c_pi0), float(gamma), float(beta))


def reduced_accuracies(norm_D2: float, norm_C2: float, c: float, denominator: str = "sigma-norm"):
    """Minority and majority accuracies of ``sigma^-1 (delta_D - c delta_C)``
    thresholded at the class midpoint, under orthogonal shifts.

    ``denominator="sigma-norm"`` uses ``2 sqrt(|D|^2 + c^2 |C|^2)``, the
    sigma-norm of the weight vector. ``"sum-of-norms"`` uses
    ``2 (|D| + c |C|)``, kept only so the two forms can be compared against
    simulation.
    """
    if denominator == "sigma-norm":
        den = 2.0 * np.sqrt(norm_D2 + c * c * norm_C2)
    elif denominator == "sum-of-norms":
        den = 2.0 * (np.sqrt(norm_D2) + c * np.sqrt(norm_C2))
    else:
        raise DataError("invalid-config", f"unknown denominator {denominator}")
    minority = float(normal_cdf((norm_D2 - c * norm_C2) / den))
    majority = float(normal_cdf((norm_D2 + c * norm_C2) / den))
    return minority, majority


def _orthogonal_norms(spec: MixtureSpec):
    nrm = SigmaNorm(spec.sigma)
    nC2, nD2 = nrm.sq(spec.delta_C), nrm.sq(spec.delta_D)
    cos = abs(nrm.inner(spec.delta_C, spec.delta_D)) / np.sqrt(nC2 * nD2) if nC2 * nD2 > 0 else 0.0
    if cos > ORTHOGONALITY_LIMIT:
        raise DataError("assumption-violated", f"sigma^-1 cosine of mean shifts is {cos:.3g}")
    return nC2, nD2


@dataclass(frozen=True)
class ErmAccuracy:
    minority_acc: float
    majority_acc: float
    wga_erm: float
    c_tilde: float


def erm_wga(spec: MixtureSpec, pi0: float | None = None, denominator: str = "sigma-norm") -> ErmAccuracy:
    """Worst-group accuracy of the population squared-loss model at minority
    prior ``pi0``. The minimum is the minority term since ``c_tilde >= 0``."""
    pi0 = check_prior(spec.pi0 if pi0 is None else pi0)
    nC2, nD2 = _orthogonal_norms(spec)
    c = c_tilde(pi0, nC2)
    lo, hi = reduced_accuracies(nD2, nC2, c, denominator)
    return ErmAccuracy(lo, hi, min(lo, hi), c)


@dataclass(frozen=True)
class TheoryPoint:
    p: float
    pi0: float
    pi_noisy: float
    pi_ds: float
    c_tilde: float
    wga_erm: float
    wga_ds: float
    wga_uw: float
    minority_acc: float
    majority_acc: float


def ds_uw_wga(spec: MixtureSpec, pi0: float | None = None, p: float = 0.0) -> TheoryPoint:
    """Downsampling / upweighting on labels with flip rate ``p``: the ERM
    expression evaluated at the effective downsampled prior."""
    pi0 = check_prior(spec.pi0 if pi0 is None else pi0)
    p = check_noise(p)
    pi_ds = ds_effective_prior(pi0, p)
    erm = erm_wga(spec, pi0)
    ds = erm_wga(spec, pi_ds)
    return TheoryPoint(
        p=p,
        pi0=pi0,
        pi_noisy=noisy_minority_prior(pi0, p),
        pi_ds=pi_ds,
        c_tilde=ds.c_tilde,
        wga_erm=erm.wga_erm,
        wga_ds=ds.wga_erm,
        wga_uw=ds.wga_erm,
        minority_acc=ds.minority_acc,
        majority_acc=ds.majority_acc,
    )


def theory_curve(spec: MixtureSpec, p_grid, pi0: float | None = None) -> list[TheoryPoint]:
    return [ds_uw_wga(spec, pi0, p) for p in p_grid]


@dataclass
class MonotonicityReport:
    pi0_grid: np.ndarray
    p_grid: np.ndarray
    wga: np.ndarray  # (len(pi0_grid), len(p_grid))
    slopes: np.ndarray  # same shape; finite-difference d wga / d p
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def wga_monotonicity_check(spec: MixtureSpec, pi0_grid, p_grid, h: float = 1e-6) -> MonotonicityReport:
    """Finite-difference slope of the DS/UW worst-group accuracy in ``p``.

    Central differences in the interior, one-sided at ``p = 0`` and
    ``p = 1/2``. A non-negative slope with ``pi0 < 1/4`` and ``p < 1/2`` is
    recorded as a violation.
    """
    pi0_grid = np.asarray(pi0_grid, dtype=float)
    p_grid = np.asarray(p_grid, dtype=float)
    wga = np.empty((len(pi0_grid), len(p_grid)))
    slopes = np.empty_like(wga)

    def f(pi0, p):
        return ds_uw_wga(spec, pi0, p).wga_ds

    violations = []
    for i, pi0 in enumerate(pi0_grid):
        for j, p in enumerate(p_grid):
            wga[i, j] = f(pi0, p)
            lo, hi = max(p - h, 0.0), min(p + h, 0.5)
            slopes[i, j] = (f(pi0, hi) - f(pi0, lo)) / (hi - lo)
            if pi0 < 0.25 and p < 0.5 and not slopes[i, j] < 0:
                violations.append((float(pi0), float(p), float(slopes[i, j])))
    return MonotonicityReport(pi0_grid, p_grid, wga, slopes, violations)


def population_group_accuracy(model: LinearModel, spec: MixtureSpec) -> dict[GroupKey, float]:
    """Exact per-group accuracy of a binary linear model under the Gaussian
    mixture: ``Phi(+-(score(mu) - threshold) / sqrt(w^T sigma w))``."""
    if model.link == "identity-threshold":
        w, b, thr = model.w, float(model.b), 0.5
    else:
        w, b = model.binary_logit()
        thr = 0.0
    if w.shape != (spec.m,):
        raise DataError("shape-mismatch", "model and mixture dimensions differ")
    sd = float(np.sqrt(w @ spec.sigma @ w))
    mu = spec.group_means()
    out = {}
    for y in (0, 1):
        for d in (R, B):
            margin = w @ mu[y, d] + b - thr
            sign = 1.0 if y == 1 else -1.0
            if sd == 0.0:
                # constant score: ties predict class 0
                out[GroupKey(y, d)] = float((sign * margin > 0) if y == 1 else (margin <= 0))
            else:
                out[GroupKey(y, d)] = float(normal_cdf(sign * margin / sd))
    return out


def population_wga(model: LinearModel, spec: MixtureSpec) -> float:
    return min(population_group_accuracy(model, spec).values())


def population_moments(spec: MixtureSpec, group_mass: np.ndarray) -> Moments:
    """Exact feature/label moments of the mixture reweighted by
    ``group_mass[y, d]`` (normalised to sum to one)."""
    q = np.asarray(group_mass, dtype=float)
    if q.shape != (2, 2) or np.any(q < 0) or not q.sum() > 0:
        raise DataError("invalid-prior", "group_mass must be a non-negative (2, 2) array")
    q = q / q.sum()
    mu = spec.group_means().reshape(4, spec.m)
    qf = q.ravel()
    yv = np.array([0.0, 0.0, 1.0, 1.0])
    mx = qf @ mu
    my = float(qf @ yv)
    C = mu - mx
    cov = spec.sigma + (C * qf[:, None]).T @ C
    cxy = C.T @ (qf * (yv - my))
    return Moments(mx, 0.5 * (cov + cov.T), my, cxy)
