import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from onlinedefer.core import DomainError, ExpertSet, LabelSpace
from onlinedefer.hypothesis import (
    WeightMatrix,
    label_scores,
    load_weights_csv,
    predict,
    project_ball,
    project_zero_sum,
    save_weights_csv,
    score,
)

from conftest import make_input, zero_weights


def test_zero_hypothesis_scores_zero_and_predicts_first_label():
    W = zero_weights(2, 1, 3)
    inp = make_input(2, 1, [1.0, 2.0, 3.0], avail=(1,))
    assert label_scores(W, inp).tolist() == [0.0, 0.0, 0.0]
    assert predict(W, inp) == 1


def test_score_by_hand():
    W = zero_weights(2, 0, 2)
    W.data[1] = [1.0, 0.0, 0.5]
    inp = make_input(2, 0, [2.0, 0.0])
    assert score(W, inp, 2) == 2.5
    W.data[0] = [0.0, 0.0, -1.0]
    assert score(W, inp, 1) == -1.0


def test_score_outside_label_set_is_domain_error():
    W = zero_weights(2, 2, 1)
    with pytest.raises(DomainError):
        score(W, make_input(2, 2, [1.0], avail=(1,)), 4)


def test_predict_unique_max_and_respects_availability():
    W = zero_weights(3, 2, 1)
    W.data[:, 1] = [0.1, 0.9, 0.3, 0.0, 5.0]  # bias only
    assert predict(W, make_input(3, 2, [1.0], avail=(1,))) == 2
    assert predict(W, make_input(3, 2, [1.0], avail=(1, 2))) == 5


def test_project_zero_sum_hand_example():
    sp = LabelSpace(2, 1)
    W = WeightMatrix(sp, 0, np.array([[1.0], [3.0], [5.0]]))
    P = project_zero_sum(W, ExpertSet(()))
    assert P.data[:, 0].tolist() == [-1.0, 1.0, 5.0]
    # cross-check with least squares onto the zero-column-sum subspace of rows {1, 2}
    A = np.array([[1.0, 1.0]])
    v = W.data[:2, 0]
    proj = v - A.T @ np.linalg.solve(A @ A.T, A @ v)
    assert np.allclose(P.data[:2, 0], proj)


def test_project_zero_sum_fixed_points():
    W = zero_weights(3, 2, 2)
    assert np.array_equal(project_zero_sum(W, ExpertSet((1,))).data, W.data)
    W.data[:] = np.random.default_rng(0).standard_normal(W.data.shape)
    P = project_zero_sum(W, ExpertSet((2,)))
    assert np.abs(project_zero_sum(P, ExpertSet((2,))).data - P.data).max() <= 1e-12


weights = arrays(np.float64, (5, 4), elements=st.floats(-10, 10))


@settings(max_examples=200)
@given(W=weights, avail=st.sets(st.integers(1, 2)), x=arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_projection_properties(W, avail, x):
    sp = LabelSpace(3, 2)
    Wm = WeightMatrix(sp, 3, W)
    experts = ExpertSet(tuple(avail))
    P = project_zero_sum(Wm, experts)
    rows = [0, 1, 2] + [2 + j for j in sorted(avail)]
    others = [i for i in range(5) if i not in rows]
    assert np.abs(P.data[rows].sum(axis=0)).max() <= 1e-10
    assert np.array_equal(P.data[others], W[others])
    assert P.frobenius <= Wm.frobenius + 1e-9
    inp = make_input(3, 2, x, avail=tuple(avail))
    raw = np.sort(label_scores(Wm, inp))
    assume(raw[-1] - raw[-2] > 1e-9)  # exact ties are broken by rounding, not by the projection
    assert predict(P, inp) == predict(Wm, inp)


def test_project_ball_examples():
    W = zero_weights(2, 1, 1, bound=4.0)
    assert np.array_equal(project_ball(W).data, W.data)
    W.data[0, 0] = 2.0
    assert np.array_equal(project_ball(W).data, W.data)
    W.data[0, 0] = 8.0
    Pb = project_ball(W)
    assert Pb.frobenius == pytest.approx(4.0)
    assert Pb.data[0, 0] == pytest.approx(4.0)


def test_default_bound_is_N():
    assert zero_weights(6, 3, 2).bound == 9.0


def test_weights_csv_round_trip(tmp_path):
    W = WeightMatrix(LabelSpace(3, 1), 2, np.random.default_rng(1).standard_normal((4, 3)), bound=7.5)
    save_weights_csv(W, tmp_path / "w.csv")
    back = load_weights_csv(tmp_path / "w.csv")
    assert np.array_equal(back.data, W.data)
    assert back.bound == 7.5 and back.space == W.space
