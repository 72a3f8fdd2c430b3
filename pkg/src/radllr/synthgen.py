"""Four-group Gaussian mixture with a parallelogram of group means.

Domains are indexed ``R = 0`` and ``B = 1``. Group means are::

    mu(0,R) = anchor          mu(1,R) = anchor + delta_D
    mu(0,B) = anchor + delta_C  mu(1,B) = anchor + delta_C + delta_D

and the minority groups (0,R), (1,B) each carry prior ``pi0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .core import DataError, GroupKey, LabeledDataset, RngSeed, _frozen

R, B = 0, 1
ASYMMETRY_TOL = 1e-9
MIN_EIGENVALUE = 1e-10
ORTHOGONALITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    delta_C: np.ndarray
    delta_D: np.ndarray
    sigma: np.ndarray
    pi0: float
    mu_anchor: np.ndarray | None = None

    def __post_init__(self):
        dC = np.atleast_1d(np.asarray(self.delta_C, dtype=float))
        dD = np.atleast_1d(np.asarray(self.delta_D, dtype=float))
        S = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        m = dC.shape[0]
        if dC.shape != (m,) or dD.shape != (m,) or S.shape != (m, m):
            raise DataError("shape-mismatch", "delta_C, delta_D, sigma dimensions disagree")
        a = np.zeros(m) if self.mu_anchor is None else np.asarray(self.mu_anchor, dtype=float)
        if a.shape != (m,):
            raise DataError("shape-mismatch", "mu_anchor must be an m-vector")
        object.__setattr__(self, "delta_C", _frozen(dC))
        object.__setattr__(self, "delta_D", _frozen(dD))
        object.__setattr__(self, "sigma", _frozen(S))
        object.__setattr__(self, "mu_anchor", _frozen(a))
        object.__setattr__(self, "pi0", float(self.pi0))

    @property
    def m(self) -> int:
        return self.delta_C.shape[0]

    def with_pi0(self, pi0: float) -> "MixtureSpec":
        return MixtureSpec(self.delta_C, self.delta_D, self.sigma, pi0, self.mu_anchor)

    def group_means(self) -> np.ndarray:
        """``(2, 2, m)`` array indexed ``[y, d]``."""
        a, dC, dD = self.mu_anchor, self.delta_C, self.delta_D
        return np.array([[a, a + dC], [a + dD, a + dC + dD]])

    def group_priors(self) -> np.ndarray:
        """``(2, 2)`` array indexed ``[y, d]``."""
        p = self.pi0
        return np.array([[p, 0.5 - p], [0.5 - p, p]])

    def to_dict(self) -> dict:
        return {
            "delta_C": self.delta_C.tolist(),
            "delta_D": self.delta_D.tolist(),
            "sigma": self.sigma.tolist(),
            "pi0": self.pi0,
            "mu_anchor": self.mu_anchor.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        try:
            return cls(d["delta_C"], d["delta_D"], d["sigma"], d["pi0"], d.get("mu_anchor"))
        except KeyError as e:
            raise DataError("invalid-spec", f"missing field {e.args[0]}") from None


def fig1_spec() -> MixtureSpec:
    """The two-dimensional example mixture with ``pi0 = 1/50``."""
    return MixtureSpec(
        delta_C=[0.0, -0.5],
        delta_D=[-0.25, -0.25],
        sigma=[[0.003, 0.003], [0.003, 0.004]],
        pi0=1 / 50,
    )


def random_orthogonal_spec(m: int, rng: np.random.Generator, pi0: float | None = None) -> MixtureSpec:
    """Random valid spec: SPD sigma and ``delta_C`` projected to be
    sigma^-1-orthogonal to ``delta_D``."""
    A = rng.standard_normal((m, m))
    S = A @ A.T / m + 0.2 * np.eye(m)
    dD = rng.standard_normal(m)
    v = rng.standard_normal(m) * 2.0
    Si_dD = linalg.solve(S, dD, assume_a="pos")
    dC = v - (v @ Si_dD) / (dD @ Si_dD) * dD
    if pi0 is None:
        pi0 = float(rng.uniform(0.01, 0.25))
    return MixtureSpec(dC, dD, S, pi0, rng.standard_normal(m))


def check_prior(pi0: float) -> float:
    pi0 = float(pi0)
    if not (0.0 < pi0 <= 0.25):
        raise DataError("invalid-prior", f"pi0={pi0} not in (0, 1/4]")
    return pi0


def symmetrized_sigma(sigma: np.ndarray) -> np.ndarray:
    S = np.asarray(sigma, dtype=float)
    if np.max(np.abs(S - S.T), initial=0.0) > ASYMMETRY_TOL:
        raise DataError("sigma-not-pd", "sigma is not symmetric")
    return 0.5 * (S + S.T)


def sigma_cholesky(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of the symmetrized covariance."""
    S = symmetrized_sigma(sigma)
    eig_min = float(np.linalg.eigvalsh(S)[0])
    if eig_min < MIN_EIGENVALUE:
        raise DataError("sigma-not-pd", f"min eigenvalue {eig_min:.3g}")
    return linalg.cholesky(S, lower=True)


class SigmaNorm:
    """Inner products ``<u, v> = u^T sigma^-1 v`` from one Cholesky factor."""

    def __init__(self, sigma: np.ndarray):
        self.L = sigma_cholesky(sigma)

    def whiten(self, v) -> np.ndarray:
        return linalg.solve_triangular(self.L, np.asarray(v, dtype=float), lower=True)

    def solve(self, v) -> np.ndarray:
        return linalg.cho_solve((self.L, True), np.asarray(v, dtype=float))

    def inner(self, u, v) -> float:
        return float(self.whiten(u) @ self.whiten(v))

    def sq(self, v) -> float:
        z = self.whiten(v)
        return float(z @ z)


@dataclass(frozen=True, eq=False)
class DerivedMoments:
    group_means: dict
    class_means: np.ndarray
    delta_bar: np.ndarray
    beta: float
    norm_C2: float
    norm_D2: float
    inner_CD: float = field(default=0.0)


def derive_moments(spec: MixtureSpec) -> DerivedMoments:
    pi0 = check_prior(spec.pi0)
    nrm = SigmaNorm(spec.sigma)
    mu = spec.group_means()
    pri = spec.group_priors()
    class_means = np.array([(pri[y] @ mu[y]) / pri[y].sum() for y in (0, 1)])
    return DerivedMoments(
        group_means={GroupKey(y, d): mu[y, d] for y in (0, 1) for d in (R, B)},
        class_means=class_means,
        delta_bar=class_means[1] - class_means[0],
        beta=2 * pi0 * (1 - 2 * pi0),
        norm_C2=nrm.sq(spec.delta_C),
        norm_D2=nrm.sq(spec.delta_D),
        inner_CD=nrm.inner(spec.delta_C, spec.delta_D),
    )


def sample(
    spec: MixtureSpec,
    n: int,
    seed: RngSeed | int = 0,
    group_priors: np.ndarray | None = None,
) -> LabeledDataset:
    """Draw ``n`` labeled points.

    ``group_priors`` (a ``(2, 2)`` array indexed ``[y, d]``) overrides the
    mixture priors; per-group conditionals are unchanged, which makes
    group-balanced evaluation sets possible.
    """
    if n < 1:
        raise DataError("empty-dataset", "n must be >= 1")
    if group_priors is None:
        check_prior(spec.pi0)
        pri = spec.group_priors()
    else:
        pri = np.asarray(group_priors, dtype=float)
        if pri.shape != (2, 2) or np.any(pri < 0) or abs(pri.sum() - 1) > 1e-12:
            raise DataError("invalid-prior", "group_priors must be a (2, 2) distribution")
    L = sigma_cholesky(spec.sigma)
    if not isinstance(seed, RngSeed):
        seed = RngSeed(int(seed), "sample")
    rng = seed.generator()
    g = rng.choice(4, size=n, p=pri.ravel())
    y, d = np.divmod(g, 2)
    z = rng.standard_normal((n, spec.m))
    X = spec.group_means()[y, d] + z @ L.T
    return LabeledDataset(X, y, d, num_classes=2, num_domains=2)


@dataclass(frozen=True)
class AssumptionReport:
    """``checks`` maps a check name to ``(passed, value)``."""

    checks: dict

    @property
    def ok(self) -> bool:
        return all(p for p, _ in self.checks.values())

    def __str__(self):
        rows = [f"{k:<14} {'pass' if p else 'FAIL'}  {v:.3g}" for k, (p, v) in self.checks.items()]
        return "\n".join(rows)


def validate_assumptions(spec: MixtureSpec, orthogonality_tol: float = ORTHOGONALITY_TOL) -> AssumptionReport:
    """Report-only check of symmetry/PD of sigma, the prior range and
    sigma^-1-orthogonality of the mean shifts.

    The orthogonality value is the sigma^-1 cosine between ``delta_C`` and
    ``delta_D`` so it does not depend on the overall scale of the shifts.
    """
    checks = {}
    S = spec.sigma
    asym = float(np.max(np.abs(S - S.T), initial=0.0))
    checks["symmetric"] = (asym <= ASYMMETRY_TOL, asym)
    eig_min = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])
    pd = eig_min >= MIN_EIGENVALUE and asym <= ASYMMETRY_TOL
    checks["sigma_pd"] = (pd, eig_min)
    checks["prior_range"] = (0.0 < spec.pi0 <= 0.25, spec.pi0)
    if pd:
        nrm = SigmaNorm(S)
        denom = np.sqrt(nrm.sq(spec.delta_C) * nrm.sq(spec.delta_D))
        resid = abs(nrm.inner(spec.delta_C, spec.delta_D)) / denom if denom > 0 else 0.0
        checks["orthogonality"] = (resid < orthogonality_tol, resid)
    else:
        checks["orthogonality"] = (False, float("nan"))
    return AssumptionReport(checks)
