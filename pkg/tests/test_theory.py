import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radllr.core import DataError
from radllr.solvers import LsqConfig, solve_moments
from radllr.synthgen import MixtureSpec, derive_moments, random_orthogonal_spec
from radllr.theory import (
    c_tilde,
    ds_uw_wga,
    erm_wga,
    erm_weights,
    normal_cdf,
    population_moments,
    population_wga,
    reduced_accuracies,
    sherman_morrison_solve,
    theory_curve,
    wga_monotonicity_check,
)

mpmath.mp.dps = 40


def test_normal_cdf_against_mpmath():
    xs = np.linspace(-8, 8, 161)
    got = normal_cdf(xs)
    want = np.array([float(mpmath.ncdf(mpmath.mpf(float(x)))) for x in xs])
    assert np.max(np.abs(got - want) / want) <= 1e-12


@given(st.integers(0, 10_000))
def test_sherman_morrison_matches_dense_inverse(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 6))
    G = rng.standard_normal((m, m))
    A = G @ G.T + m * np.eye(m)
    u, v = rng.standard_normal(m), rng.standard_normal(m)
    dense = np.linalg.solve(A + np.outer(v, v) + np.outer(u, u), u)
    assert np.allclose(sherman_morrison_solve(A, u, v), dense, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_closed_form_matches_moment_solve(seed):
    spec = random_orthogonal_spec(4, np.random.default_rng(seed), 0.07)
    ref = erm_weights(spec)
    model = solve_moments(population_moments(spec, spec.group_priors()), LsqConfig(0.0))
    assert np.allclose(ref.w, model.w, rtol=1e-9, atol=1e-12)
    assert ref.b == pytest.approx(float(model.b), rel=1e-9, abs=1e-12)


def _hand_wga(pi0, nC2, nD2):
    pi0, nC2, nD2 = (mpmath.mpf(v) for v in (pi0, nC2, nD2))
    c = (1 - 4 * pi0) / (1 + 2 * pi0 * (1 - 2 * pi0) * nC2)
    z = (nD2 - c * nC2) / (2 * mpmath.sqrt(nD2 + c * c * nC2))
    return float(c), float(mpmath.ncdf(z))


def test_fig1_values_by_hand(fig1):
    c, wga = _hand_wga(0.02, 250, mpmath.mpf(125) / 6)
    res = erm_wga(fig1)
    assert res.c_tilde == pytest.approx(c, rel=1e-12)
    assert res.wga_erm == pytest.approx(wga, rel=1e-12)
    assert round(res.c_tilde, 4) == 0.0868 and round(res.wga_erm, 5) == 0.46386
    assert erm_wga(fig1, 0.25).wga_erm == pytest.approx(float(mpmath.ncdf(mpmath.sqrt(mpmath.mpf(125) / 6) / 2)), rel=1e-12)
    assert round(erm_wga(fig1, 0.25).wga_erm, 5) == 0.98876


def test_balanced_prior_removes_spurious_weight(fig1):
    assert c_tilde(0.25, 250.0) == 0.0
    form = erm_weights(fig1, 0.25)
    assert form.c_pi0 == pytest.approx(0.0, abs=1e-12)
    lo, hi = reduced_accuracies(125 / 6, 250.0, 0.0)
    assert lo == hi


@pytest.mark.parametrize("pi0", [0.02, 0.1, 0.2])
def test_two_routes_to_erm_accuracy(fig1, pi0):
    """Closed-form model scored exactly against the mixture agrees with the
    reduced norm formula, and the sum-of-norms variant does not."""
    direct = population_wga(erm_weights(fig1, pi0).model(), fig1)
    reduced = erm_wga(fig1, pi0)
    assert direct == pytest.approx(reduced.wga_erm, abs=1e-12)
    alt = erm_wga(fig1, pi0, denominator="sum-of-norms").wga_erm
    assert abs(alt - direct) > 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_two_routes_random_specs(seed):
    spec = random_orthogonal_spec(5, np.random.default_rng(100 + seed), 0.05)
    assert population_wga(erm_weights(spec).model(), spec) == pytest.approx(erm_wga(spec).wga_erm, abs=1e-12)


def test_noise_endpoints(fig1):
    clean = ds_uw_wga(fig1, p=0.0)
    assert clean.pi_ds == pytest.approx(0.25, abs=1e-14)
    assert clean.wga_ds == pytest.approx(erm_wga(fig1, 0.25).wga_erm, abs=1e-14)
    full = ds_uw_wga(fig1, p=0.5)
    assert full.wga_ds == pytest.approx(full.wga_erm, abs=1e-12)
    assert ds_uw_wga(fig1, p=0.1).pi_ds == pytest.approx(0.069334, abs=1e-6)
    curve = theory_curve(fig1, [0.0, 0.1, 0.2])
    assert [pt.p for pt in curve] == [0.0, 0.1, 0.2]


def test_monotone_decrease_in_noise(fig1):
    rep = wga_monotonicity_check(fig1, [0.01, 0.05, 0.1, 0.2], np.linspace(0, 0.45, 10))
    assert rep.ok, rep.violations
    assert np.all(rep.slopes < 0)


def test_assumption_violations():
    skew = MixtureSpec([1.0, 0.0], [1.0, 1.0], np.eye(2), 0.1)
    with pytest.raises(DataError, match="assumption-violated"):
        erm_wga(skew)
    with pytest.raises(DataError, match="invalid-prior"):
        erm_wga(MixtureSpec([1.0, 0.0], [0.0, 1.0], np.eye(2), 0.3))
    with pytest.raises(DataError, match="invalid-noise-level"):
        ds_uw_wga(MixtureSpec([1.0, 0.0], [0.0, 1.0], np.eye(2), 0.1), p=0.7)


def test_spec_moments_are_consistent(fig1):
    mom = derive_moments(fig1)
    assert erm_wga(fig1).c_tilde == pytest.approx(c_tilde(fig1.pi0, mom.norm_C2), rel=1e-15)
