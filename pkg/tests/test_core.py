import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radllr.core import (
    DataError,
    GroupKey,
    LabeledDataset,
    LinearModel,
    RngSeed,
    WeightingScheme,
    compute_group_stats,
    per_group_accuracy,
    stable_hash,
    worst_group_accuracy,
)


def test_dataset_copies_and_freezes():
    X = np.zeros((3, 2))
    y = np.array([0, 1, 1])
    data = LabeledDataset(X, y, np.array([0, 0, 1]))
    X[0, 0] = 5.0
    y[0] = 1
    assert data.features[0, 0] == 0.0 and data.y[0] == 0
    with pytest.raises(ValueError):
        data.features[0, 0] = 1.0
    assert (data.n, data.m, data.num_classes, data.num_domains) == (3, 2, 2, 2)


@pytest.mark.parametrize(
    "kwargs, code",
    [
        (dict(features=np.zeros((3, 2)), y=[0, 1], d=[0, 0, 1]), "shape-mismatch"),
        (dict(features=np.zeros((2, 2)), y=[0.5, 1], d=[0, 0]), "invalid-label"),
        (dict(features=np.zeros((2, 2)), y=[0, -1], d=[0, 0]), "invalid-label"),
        (dict(features=np.zeros((2, 2)), y=[0, 1], d=[0, 0], d_tilde=[0, 2]), "invalid-label"),
        (dict(features=np.zeros((2, 2)), y=[0, 3], d=[0, 0], num_classes=2), "invalid-label"),
    ],
)
def test_dataset_validation(kwargs, code):
    with pytest.raises(DataError) as e:
        LabeledDataset(**kwargs)
    assert e.value.code == code


def test_group_stats():
    data = LabeledDataset(np.zeros((6, 1)), [0, 0, 0, 1, 1, 1], [0, 1, 1, 0, 0, 1])
    st_ = compute_group_stats(data)
    assert st_.counts.tolist() == [[1, 2], [2, 1]]
    assert np.allclose(st_.priors, [[1 / 6, 2 / 6], [2 / 6, 1 / 6]])
    assert st_.n_min == 1
    with pytest.raises(DataError, match="empty-dataset"):
        compute_group_stats(LabeledDataset(np.zeros((0, 1)), [], []))


def test_threshold_and_softmax_models():
    thr = LinearModel(np.array([1.0]), 0.0, "identity-threshold")
    assert thr.predict([[0.4], [0.5], [0.6]]).tolist() == [0, 0, 1]
    soft = LinearModel(np.zeros((1, 3)), np.array([1.0, 1.0, 0.0]))
    assert soft.predict([[7.0]]).tolist() == [0]  # tie goes to the first index
    with pytest.raises(DataError, match="shape-mismatch"):
        thr.predict(np.zeros((2, 3)))
    with pytest.raises(DataError, match="shape-mismatch"):
        LinearModel(np.zeros(2), np.zeros(2), "identity-threshold")


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.floats(-5, 5))
def test_binary_logit_round_trip(w, b):
    m = LinearModel.from_binary_logit(w, b)
    w2, b2 = m.binary_logit()
    assert np.array_equal(w2, np.asarray(w)) and b2 == b
    X = np.random.default_rng(0).standard_normal((20, len(w)))
    assert np.array_equal(m.predict(X), (X @ np.asarray(w) + b > 0).astype(int))


def test_per_group_accuracy_hand_example():
    X = np.array([[0.0], [1.0], [0.0], [1.0], [1.0]])
    data = LabeledDataset(X, [0, 0, 1, 1, 1], [0, 0, 0, 0, 0], num_domains=2)
    model = LinearModel(np.array([1.0]), 0.0, "identity-threshold")
    accs = per_group_accuracy(model, data)
    assert accs[GroupKey(0, 0)] == 0.5
    assert accs[GroupKey(1, 0)] == pytest.approx(2 / 3)
    assert accs[GroupKey(0, 1)] is None and accs[GroupKey(1, 1)] is None
    assert worst_group_accuracy(model, data) == 0.5


@given(st.integers(0, 2**32 - 1))
def test_wga_bounds_overall_accuracy(seed):
    rng = np.random.default_rng(seed)
    n = 40
    data = LabeledDataset(rng.standard_normal((n, 2)), rng.integers(0, 2, n), rng.integers(0, 2, n))
    model = LinearModel.from_binary_logit(rng.standard_normal(2), rng.standard_normal())
    overall = float(np.mean(model.predict(data.features) == data.y))
    accs = [a for a in per_group_accuracy(model, data).values() if a is not None]
    assert worst_group_accuracy(model, data) == min(accs) <= overall + 1e-12


def test_weighting_schemes():
    data = LabeledDataset(np.zeros((4, 1)), [0, 0, 1, 1], [0, 1, 0, 1], d_tilde=[1, 0, 0, 1])
    assert WeightingScheme.uniform().sample_weights(data).tolist() == [1, 1, 1, 1]
    pg = WeightingScheme("per-group", group_costs=[[1.0, 2.0], [3.0, 4.0]])
    assert pg.sample_weights(data).tolist() == [1, 2, 3, 4]
    pm = WeightingScheme("pseudo-minority", minority_factor=5.0)
    assert pm.sample_weights(data).tolist() == [5, 1, 1, 5]
    with pytest.raises(DataError, match="missing-annotation"):
        pm.sample_weights(data.replace(d_tilde=None))
    with pytest.raises(DataError, match="invalid-weighting"):
        WeightingScheme("per-group", group_costs=[[1.0, -1.0], [1.0, 1.0]])


def test_stable_hash_matches_sha256_prefix():
    expected = int.from_bytes(hashlib.sha256(b"noise").digest()[:4], "little")
    assert stable_hash("noise") == expected


def test_rng_streams_are_deterministic_and_distinct():
    a = RngSeed(7, "noise").generator().random(5)
    b = RngSeed(7, "noise").generator().random(5)
    c = RngSeed(7, "downsample").generator().random(5)
    d = RngSeed(7, "noise").spawn(1).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    with pytest.raises(DataError, match="invalid-seed"):
        RngSeed(-1)
