import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import toy_dataset
from radllr.augment import (
    DOMAIN_FREE,
    MSelfConfig,
    PipelineSpec,
    RetrainingClassifier,
    downsample,
    downsample_indices,
    fit_mself,
    fit_pipeline,
    upweight_costs,
)
from radllr.core import DataError, LinearModel, RngSeed, compute_group_stats
from radllr.noise import NoiseModel, ds_effective_prior, inject
from radllr.rad import RadConfig
from radllr.solvers import LogRegConfig, LsqConfig, solve_moments
from radllr.synthgen import sample
from radllr.theory import ds_uw_wga, population_moments, population_wga


def test_downsample_balances_groups():
    data = toy_dataset([5, 3, 7, 2])
    sub = downsample(data, "group", RngSeed(0, "downsample"))
    assert compute_group_stats(sub).counts.tolist() == [[2, 2], [2, 2]]
    cls = downsample(data, "class", RngSeed(0, "downsample"))
    assert np.bincount(cls.y).tolist() == [8, 8]
    idx = downsample_indices(data, "group", RngSeed(0, "downsample"))
    assert np.all(np.diff(idx) > 0)
    assert np.array_equal(sub.features, data.features[idx])


def test_downsample_errors():
    with pytest.raises(DataError, match="empty-group"):
        downsample(toy_dataset([3, 0, 2, 2]))
    with pytest.raises(DataError, match="invalid-config"):
        downsample(toy_dataset([1, 1, 1, 1]), by="domain")


@given(st.lists(st.integers(1, 30), min_size=4, max_size=4), st.integers(0, 1000))
def test_downsample_properties(counts, seed):
    data = toy_dataset(counts)
    idx = downsample_indices(data, "group", RngSeed(seed, "downsample"))
    assert len(set(idx.tolist())) == len(idx) == 4 * min(counts)
    again = downsample_indices(data, "group", RngSeed(seed, "downsample"))
    assert np.array_equal(idx, again)


def test_upweight_costs_examples():
    stats = compute_group_stats(toy_dataset([10, 30, 30, 30]))
    costs = upweight_costs(stats, "group").group_costs
    assert np.allclose(costs, [[2.5, 5 / 6], [5 / 6, 5 / 6]])
    cls = upweight_costs(stats, "class").group_costs
    assert np.allclose(cls, [[1.25, 1.25], [5 / 6, 5 / 6]])


@given(st.lists(st.integers(1, 50), min_size=4, max_size=4))
def test_upweighted_mass_is_balanced(counts):
    stats = compute_group_stats(toy_dataset(counts))
    for by in ("group", "class"):
        costs = upweight_costs(stats, by).group_costs
        assert np.sum(stats.priors * costs) == pytest.approx(1.0, rel=1e-12)
    group_mass = stats.priors * upweight_costs(stats, "group").group_costs
    assert np.allclose(group_mass, 0.25)


def test_llr_equals_guw_on_balanced_data():
    data = toy_dataset([40, 40, 40, 40], m=3)
    cfg = LogRegConfig(1e-3)
    a = fit_pipeline(PipelineSpec("llr", cfg), data).model
    b = fit_pipeline(PipelineSpec("guw", cfg), data).model
    assert np.allclose(a.w, b.w, atol=1e-7)


def test_squared_gds_and_guw_agree_at_large_n(fig1):
    data = sample(fig1, 100_000, RngSeed(9, "sample"))
    gds = fit_pipeline(PipelineSpec("gds", loss="squared"), data, RngSeed(1, "train")).model
    guw = fit_pipeline(PipelineSpec("guw", loss="squared"), data).model
    assert abs(population_wga(gds, fig1) - population_wga(guw, fig1)) < 0.02


def _flip_joint(spec, p):
    flip = np.array([[1 - p, p], [p, 1 - p]])  # [d, d_noisy]
    return spec.group_priors()[:, :, None] * flip[None, :, :]  # [y, d, d_noisy]


def _ds_true_mass(spec, p):
    """Every noisy group is cut to mass 1/4 and keeps its true-domain mix."""
    joint = _flip_joint(spec, p)
    composition = joint / joint.sum(axis=1, keepdims=True)  # P(d | y, d_noisy)
    return 0.25 * composition.sum(axis=2)


def _uw_true_mass(spec, p):
    """Each sample carries cost 1 / (4 * prior of its noisy group)."""
    joint = _flip_joint(spec, p)
    cost = 1.0 / (4.0 * joint.sum(axis=1))
    return np.einsum("ydn,yn->yd", joint, cost)


@pytest.mark.parametrize("p", [0.0, 0.1, 0.3, 0.5])
def test_noisy_balancing_two_routes(fig1, p):
    ds = _ds_true_mass(fig1, p)
    uw = _uw_true_mass(fig1, p)
    assert np.allclose(ds, uw, rtol=1e-13, atol=0)
    assert ds[0, 0] == pytest.approx(ds_effective_prior(fig1.pi0, p), abs=1e-14)
    model = solve_moments(population_moments(fig1, ds), LsqConfig(0.0))
    assert population_wga(model, fig1) == pytest.approx(ds_uw_wga(fig1, p=p).wga_ds, abs=1e-9)


def test_empirical_downsampling_matches_effective_prior(fig1):
    data = sample(fig1, 200_000, RngSeed(4, "sample"))
    noisy = inject(data, NoiseModel(0.1), RngSeed(4, "noise"))
    idx = downsample_indices(noisy, "group", RngSeed(4, "downsample"))
    true_groups = compute_group_stats(data.subset(idx)).priors
    assert true_groups[0, 0] == pytest.approx(ds_effective_prior(fig1.pi0, 0.1), abs=0.005)


def test_empirical_noisy_upweighting_tracks_theory(fig1):
    data = sample(fig1, 100_000, RngSeed(2, "sample"))
    noisy = inject(data, NoiseModel(0.2), RngSeed(2, "noise"))
    model = fit_pipeline(PipelineSpec("guw", loss="squared"), noisy).model
    assert population_wga(model, fig1) == pytest.approx(ds_uw_wga(fig1, p=0.2).wga_ds, abs=0.02)


def _spec_for(method):
    cfg = LogRegConfig(1e-3)
    return PipelineSpec(
        method,
        cfg,
        mself=MSelfConfig(50, 1e-2, 10),
        rad=RadConfig(0.05, 1e-3, 5.0) if method == "rad-uw" else None,
    )


@pytest.mark.parametrize("method", DOMAIN_FREE)
def test_domain_free_methods_ignore_domains(six_dim, method):
    perm = six_dim.replace(d=np.random.default_rng(0).permutation(six_dim.d))
    a = fit_pipeline(_spec_for(method), six_dim, RngSeed(3, "train")).model
    b = fit_pipeline(_spec_for(method), perm, RngSeed(3, "train")).model
    assert np.array_equal(a.w, b.w) and np.array_equal(a.b, b.b)


def test_gds_is_seed_deterministic(six_dim):
    spec = _spec_for("gds")
    a = fit_pipeline(spec, six_dim, RngSeed(5, "train")).model
    b = fit_pipeline(spec, six_dim, RngSeed(5, "train")).model
    c = fit_pipeline(spec, six_dim, RngSeed(6, "train")).model
    assert np.array_equal(a.w, b.w) and not np.array_equal(a.w, c.w)


def test_averaging_reduces_spread(six_dim):
    single = PipelineSpec("gds", LogRegConfig(1e-3))
    avg = PipelineSpec("gds-averaged", LogRegConfig(1e-3), averaging_runs=8)

    def spread(spec):
        ws = np.array([fit_pipeline(spec, six_dim, RngSeed(s, "train")).model.binary_logit()[0] for s in range(6)])
        return ws.std(axis=0).sum()

    assert spread(avg) < spread(single)


def test_mself_empty_error_set_returns_identification_model():
    y = np.repeat([0, 1], 20)
    X = (y[:, None] * 4.0 - 2.0) + np.random.default_rng(0).uniform(-0.5, 0.5, (40, 1))
    data = toy_dataset([10, 10, 10, 10]).replace(features=X, y=y)
    res = fit_mself(_spec_for("m-self"), data, RngSeed(0, "train"))
    assert res.flags == ("empty-error-set",) and res.info["error_set_size"] == 0


def test_mself_caps_error_set_per_class(fig1):
    data = sample(fig1, 3000, RngSeed(1, "sample"))
    spec = PipelineSpec("m-self", LogRegConfig(1e-2), mself=MSelfConfig(10, 1e-3, 3))
    res = fit_mself(spec, data, RngSeed(0, "train"))
    assert 1 <= res.info["error_set_size"] <= 6


def test_mself_beats_plain_retraining(fig1):
    scores = []
    for s in range(10):
        data = sample(fig1, 2000, RngSeed(s, "sample"))
        mu, sd = data.features.mean(0), data.features.std(0)
        std = data.replace(features=(data.features - mu) / sd)

        def scored(model):
            w, b = model.binary_logit()
            return population_wga(LinearModel.from_binary_logit(w / sd, b - (w / sd) @ mu), fig1)

        llr = fit_pipeline(PipelineSpec("llr", LogRegConfig(1e-4)), std, RngSeed(s, "train")).model
        mself = fit_pipeline(
            PipelineSpec("m-self", LogRegConfig(1e-4), mself=MSelfConfig(500, 1e-2, 100)), std, RngSeed(s, "train")
        ).model
        scores.append((scored(llr), scored(mself)))
    scores = np.array(scores)
    assert scores[:, 1].mean() > scores[:, 0].mean()


def test_pipeline_spec_validation():
    with pytest.raises(DataError, match="invalid-method"):
        PipelineSpec("erm")
    with pytest.raises(DataError, match="invalid-config"):
        PipelineSpec("rad-uw")
    with pytest.raises(DataError, match="invalid-config"):
        PipelineSpec("m-self", loss="squared")
    with pytest.raises(DataError, match="invalid-config"):
        MSelfConfig(learning_rate=0.0)


def test_retraining_estimator(six_dim):
    est = RetrainingClassifier(method="guw", lam=1e-3)
    assert clone(est).get_params()["method"] == "guw"
    with pytest.raises(DataError, match="missing-annotation"):
        est.fit(six_dim.features, six_dim.y)
    est.fit(six_dim.features, six_dim.y, domains=six_dim.d)
    assert est.score(six_dim.features, six_dim.y) > 0.6
    free = RetrainingClassifier(method="cuw", lam=1e-3).fit(six_dim.features, six_dim.y)
    assert free.predict(six_dim.features).shape == (six_dim.n,)
