import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from onlinedefer.core import (
    AugmentedInput,
    ConfigurationError,
    DataError,
    DomainError,
    ExpertCost,
    ExpertSet,
    FeatureVector,
    LabelSpace,
    bound_features,
    make_label_set,
    normalize_costs,
)


def test_label_space_sizes():
    sp = LabelSpace(6, 3)
    assert sp.N == 9
    assert sp.is_class(6) and not sp.is_class(7)
    assert sp.expert_of(8) == 2
    with pytest.raises(DomainError):
        sp.expert_of(3)


@pytest.mark.parametrize("n, n_e", [(1, 0), (2, -1)])
def test_label_space_rejects_degenerate(n, n_e):
    with pytest.raises(ConfigurationError):
        LabelSpace(n, n_e)


@pytest.mark.parametrize(
    "n, n_e, avail, expected",
    [
        (2, 1, (1,), [1, 2, 3]),
        (4, 2, (), [1, 2, 3, 4]),
        (6, 3, (1, 3), [1, 2, 3, 4, 5, 6, 7, 9]),
        (6, 3, (3, 1), [1, 2, 3, 4, 5, 6, 7, 9]),
    ],
)
def test_make_label_set_examples(n, n_e, avail, expected):
    assert make_label_set(LabelSpace(n, n_e), ExpertSet(avail)) == expected


@pytest.mark.parametrize("avail", [(0,), (4,), (1, 1)])
def test_make_label_set_rejects_bad_experts(avail):
    with pytest.raises(ConfigurationError):
        make_label_set(LabelSpace(3, 3), avail)


@given(
    n=st.integers(2, 8),
    n_e=st.integers(0, 6),
    data=st.data(),
)
def test_label_set_size_and_order(n, n_e, data):
    avail = data.draw(st.sets(st.integers(1, n_e), max_size=n_e)) if n_e else set()
    labels = make_label_set(LabelSpace(n, n_e), ExpertSet(tuple(avail)))
    assert len(labels) == n + len(avail)
    assert all(a < b for a, b in zip(labels, labels[1:]))


def test_augmented_input_rows_are_zero_based():
    inp = AugmentedInput(FeatureVector.full([1.0, 0.0]), ExpertSet((2,)), 1, LabelSpace(2, 2))
    assert inp.labels == (1, 2, 4)
    assert inp.m == 3
    assert inp.rows().tolist() == [0, 1, 3]


def test_feature_vector_validation_and_immutability():
    fv = FeatureVector(np.array([0, 3]), np.array([0.5, 0.25]), 5)
    assert fv.to_dense().tolist() == [0.5, 0, 0, 0.25, 0]
    with pytest.raises(ValueError):
        fv.values[0] = 1.0
    with pytest.raises(DataError):
        FeatureVector(np.array([3, 0]), np.array([1.0, 1.0]), 5)
    with pytest.raises(DataError):
        FeatureVector(np.array([5]), np.array([1.0]), 5)


def test_from_dense_drops_zeros():
    fv = FeatureVector.from_dense([0.0, 2.0, 0.0, -1.0])
    assert fv.indices.tolist() == [1, 3]
    assert fv.norm == pytest.approx(np.sqrt(5.0))


def test_bound_features_rescale_reject_and_warn(caplog):
    big = FeatureVector.full([3.0, 4.0])
    assert bound_features(big, 2.0).norm == pytest.approx(2.0)
    with pytest.raises(DataError):
        bound_features(big, 2.0, on_excess="reject")
    ok = FeatureVector.full([0.6, 0.8])
    assert bound_features(ok, 2.0) is ok
    import onlinedefer.core as core

    core._small_norm_warned = False
    with caplog.at_level(logging.WARNING, logger="onlinedefer.core"):
        small = FeatureVector.full([0.1, 0.0])
        assert bound_features(small, 2.0) is small
    assert "below 1" in caplog.text


def test_normalize_costs_reference_costs():
    nc = normalize_costs([ExpertCost(1.0, 0.1)] * 3)
    assert nc.Q == pytest.approx(1.1)
    c = nc.costs[0]
    assert c.lower == pytest.approx(0.1 / 1.1)
    assert c.upper == pytest.approx(1.0)
    assert c.realized(True) == pytest.approx(0.0909090909)
    assert nc.classifier_cost == pytest.approx(1 / 1.1)


def test_normalize_costs_zero_query_cost_is_identity():
    nc = normalize_costs([ExpertCost(1.0, 0.0), ExpertCost(1.0, 0.0)])
    assert nc.Q == 1.0
    assert [(c.alpha, c.beta) for c in nc.costs] == [(1.0, 0.0), (1.0, 0.0)]


def test_normalize_costs_rejects_negative_and_excess():
    with pytest.raises(ConfigurationError):
        ExpertCost(-1.0, 0.1)
    with pytest.raises(ConfigurationError):
        normalize_costs([ExpertCost(2.0, 0.1)])


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 2)), min_size=1, max_size=5))
def test_normalize_costs_idempotent_and_order_preserving(params):
    raw = [ExpertCost(a, b) for a, b in params]
    once = normalize_costs(raw)
    twice = normalize_costs(once.costs)
    assert twice.Q == 1.0
    for a, b in zip(once.costs, twice.costs):
        assert abs(a.alpha - b.alpha) <= 1e-12 and abs(a.beta - b.beta) <= 1e-12
    for c in once.costs:
        assert 0.0 <= c.lower <= c.upper <= 1.0 + 1e-12
    uppers = [a + b for a, b in params]
    normed = [c.upper for c in once.costs]
    assert np.argsort(uppers, kind="stable").tolist() == np.argsort(normed, kind="stable").tolist()
