import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radllr.core import DataError, RngSeed, compute_group_stats
from radllr.synthgen import (
    MixtureSpec,
    SigmaNorm,
    derive_moments,
    random_orthogonal_spec,
    sample,
    validate_assumptions,
)


def test_fig1_norms_by_hand(fig1):
    # sigma^-1 = [[4000, -3000], [-3000, 3000]] / 3
    inv = np.array([[4000.0, -3000.0], [-3000.0, 3000.0]]) / 3
    assert np.allclose(inv @ fig1.sigma, np.eye(2))
    mom = derive_moments(fig1)
    assert mom.norm_C2 == pytest.approx(250.0, rel=1e-12)
    assert mom.norm_D2 == pytest.approx(125 / 6, rel=1e-12)
    assert abs(mom.inner_CD) < 1e-9
    # the core direction sigma^-1 delta_D is the first axis
    assert np.allclose(SigmaNorm(fig1.sigma).solve(fig1.delta_D), [-250 / 3, 0.0])


def test_group_means_and_priors(fig1):
    mu = fig1.group_means()
    assert np.allclose(mu[1, 1] - mu[0, 1], fig1.delta_D)
    assert np.allclose(mu[0, 1] - mu[0, 0], fig1.delta_C)
    assert np.allclose(fig1.group_priors(), [[0.02, 0.48], [0.48, 0.02]])
    mom = derive_moments(fig1)
    assert np.allclose(mom.delta_bar, fig1.delta_D - (1 - 4 * 0.02) * fig1.delta_C)


def test_sample_matches_mixture(fig1):
    n = 200_000
    data = sample(fig1, n, RngSeed(1, "sample"))
    counts = compute_group_stats(data).counts
    pri = fig1.group_priors()
    sd = np.sqrt(n * pri * (1 - pri))
    assert np.all(np.abs(counts - n * pri) < 4 * sd)
    g = (data.y == 1) & (data.d == 0)
    Xg = data.features[g]
    se = np.sqrt(np.diag(fig1.sigma) / g.sum())
    assert np.all(np.abs(Xg.mean(0) - fig1.group_means()[1, 0]) < 5 * se)
    assert np.allclose(np.cov(Xg.T), fig1.sigma, rtol=0.05, atol=1e-5)


def test_sample_is_deterministic_and_supports_prior_override(fig1):
    a = sample(fig1, 50, RngSeed(2, "sample"))
    b = sample(fig1, 50, RngSeed(2, "sample"))
    assert np.array_equal(a.features, b.features) and np.array_equal(a.d, b.d)
    bal = sample(fig1, 40_000, RngSeed(2, "sample"), group_priors=np.full((2, 2), 0.25))
    assert np.all(np.abs(compute_group_stats(bal).priors - 0.25) < 0.01)
    with pytest.raises(DataError, match="invalid-prior"):
        sample(fig1, 5, group_priors=np.full((2, 2), 0.3))


def test_validation_reports(fig1):
    assert validate_assumptions(fig1).ok
    bad = MixtureSpec([1.0, 0.0], [0.0, 1.0], [[1.0, 2.0], [2.0, 1.0]], 0.1)
    rep = validate_assumptions(bad)
    assert not rep.checks["sigma_pd"][0]
    skew = MixtureSpec([1.0, 0.0], [1.0, 1.0], np.eye(2), 0.3)
    rep = validate_assumptions(skew)
    assert not rep.checks["orthogonality"][0] and not rep.checks["prior_range"][0]
    asym = MixtureSpec([1.0, 0.0], [0.0, 1.0], [[1.0, 0.1], [0.0, 1.0]], 0.1)
    assert not validate_assumptions(asym).checks["symmetric"][0]
    assert "FAIL" in str(rep)


@given(st.integers(2, 8), st.integers(0, 10_000))
def test_random_orthogonal_spec_is_valid(m, seed):
    spec = random_orthogonal_spec(m, np.random.default_rng(seed))
    assert validate_assumptions(spec, orthogonality_tol=1e-8).ok


def test_invalid_inputs(fig1):
    with pytest.raises(DataError, match="shape-mismatch"):
        MixtureSpec([1.0, 0.0], [0.0, 1.0, 2.0], np.eye(2), 0.1)
    with pytest.raises(DataError, match="invalid-prior"):
        sample(fig1.with_pi0(0.3), 10)
    with pytest.raises(DataError, match="sigma-not-pd"):
        sample(MixtureSpec([1.0], [1.0], [[0.0]], 0.1), 10)


def test_spec_dict_round_trip(fig1):
    again = MixtureSpec.from_dict(fig1.to_dict())
    assert np.array_equal(again.sigma, fig1.sigma) and again.pi0 == fig1.pi0
    with pytest.raises(DataError, match="invalid-spec"):
        MixtureSpec.from_dict({"delta_C": [1.0]})
