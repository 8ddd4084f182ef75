import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog, minimize

from onlinedefer.analysis import (
    RunTrace,
    calibration_gaps,
    conditional_deferral_risk,
    conditional_surrogate_risk,
    exploration_penalty_constant,
    loglog_slope,
    min_conditional_deferral_risk,
    min_surrogate_risk,
    min_surrogate_risk_hinge,
    minimizability_gap,
    regret_report,
    score_profile,
    window_columns,
    windowed_metrics,
)
from onlinedefer.core import DomainError
from onlinedefer.losses import LOGISTIC


def example_profile():
    # n = 2, one expert with expected cost 0.1
    return score_profile([0.8, 0.2], [0.1], (1,))


def test_profile_example():
    prof = example_profile()
    assert prof.labels == (1, 2, 3)
    assert np.allclose(prof.s, [0.8, 0.2, 0.9])
    assert prof.S == pytest.approx(1.9) and prof.y_max == 3


def test_profile_from_cost_table_and_empty_experts():
    prof = score_profile([0.5, 0.5], [[0.0, 1.0], [1.0, 1.0]], (2, 1))
    assert prof.labels == (1, 2, 3, 4)
    assert np.allclose(prof.s, [0.5, 0.5, 0.0, 0.5])
    assert score_profile([0.3, 0.7], [], ()).labels == (1, 2)
    with pytest.raises(DomainError):
        score_profile([0.5, 0.6], [], ())


def test_conditional_risks_example():
    prof = example_profile()
    assert conditional_deferral_risk(3, prof) == pytest.approx(0.1)
    assert conditional_deferral_risk(1, prof) == pytest.approx(0.2)
    assert min_conditional_deferral_risk(prof) == pytest.approx(0.1)
    assert conditional_deferral_risk(np.full(3, 1 / 3), prof) == pytest.approx(1 - 1.9 / 3)
    assert conditional_surrogate_risk(np.zeros(3), prof) == pytest.approx(3.8)
    value, scores = min_surrogate_risk_hinge(prof)
    assert value == pytest.approx(3.0) and scores.tolist() == [-1.0, -1.0, 2.0]
    assert conditional_surrogate_risk(scores, prof) == pytest.approx(3.0)


def test_calibration_example():
    prof = example_profile()
    dl, dphi = calibration_gaps(1, np.zeros(3), prof)
    assert dl == pytest.approx(0.1) and dphi == pytest.approx(0.8)
    assert dl <= dphi


def _lp_hinge_minimum(s):
    """Independent oracle: minimize sum_l (S - s_l) max(0, 1 + h_l) over sum h = 0 as an LP."""
    m = s.size
    S = s.sum()
    c = np.concatenate([np.zeros(m), S - s])
    A_ub = np.hstack([np.eye(m), -np.eye(m)])
    b_ub = -np.ones(m)
    A_eq = np.concatenate([np.ones(m), np.zeros(m)])[None, :]
    bounds = [(None, None)] * m + [(0, None)] * m
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[0.0], bounds=bounds, method="highs")
    return res.fun


def _random_profile(rng):
    n, k = int(rng.integers(2, 6)), int(rng.integers(0, 4))
    p = rng.dirichlet(np.ones(n))
    return score_profile(p, rng.random(k), tuple(range(1, k + 1)))


@pytest.mark.parametrize("seed", range(40))
def test_hinge_minimum_matches_linear_program(seed):
    prof = _random_profile(np.random.default_rng(seed))
    value, scores = min_surrogate_risk_hinge(prof)
    assert value == pytest.approx(_lp_hinge_minimum(prof.s), abs=1e-7)
    assert abs(scores.sum()) <= 1e-12


@pytest.mark.parametrize("seed", range(15))
def test_logistic_minimum_matches_numerical_optimum(seed):
    prof = _random_profile(np.random.default_rng(100 + seed))
    f = lambda h: conditional_surrogate_risk(h, prof, LOGISTIC)
    best = minimize(f, np.zeros(prof.m), method="BFGS").fun
    assert min_surrogate_risk(prof, LOGISTIC) == pytest.approx(best, abs=1e-5)
    assert min_surrogate_risk(prof, LOGISTIC) <= best + 1e-9


@settings(max_examples=300)
@given(seed=st.integers(0, 2**32 - 1))
def test_hinge_deterministic_calibration(seed):
    rng = np.random.default_rng(seed)
    prof = _random_profile(rng)
    h = rng.standard_normal(prof.m) * rng.uniform(0.1, 5)
    choice = prof.labels[int(np.argmax(h - h.mean()))]
    dl, dphi = calibration_gaps(choice, h, prof)
    assert dl <= dphi + 1e-9


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), gamma=st.floats(0.0, 1.0))
def test_exploration_penalty(seed, gamma):
    rng = np.random.default_rng(seed)
    prof = _random_profile(rng)
    greedy = int(rng.integers(prof.m))
    q = np.full(prof.m, gamma / prof.m)
    q[greedy] += 1 - gamma
    cmax = max([1 - v for v in prof.s[prof.n:]], default=0.0)
    gap_q = conditional_deferral_risk(q, prof) - min_conditional_deferral_risk(prof)
    gap_h = conditional_deferral_risk(prof.labels[greedy], prof) - min_conditional_deferral_risk(prof)
    assert gap_q <= gap_h + exploration_penalty_constant(cmax) * gamma + 1e-12


def test_minimizability_gap_is_difference_of_sums():
    assert minimizability_gap(10.0, [1.0, 2.0, 3.0]) == 4.0


def _toy_trace(T=40, n=2, n_e=2, seed=0):
    rng = np.random.default_rng(seed)
    tr = RunTrace.allocate(T, n, n_e)
    tr.t[:] = np.arange(1, T + 1)
    tr.action[:] = rng.integers(1, n + n_e + 1, T)
    tr.greedy[:] = tr.action
    tr.correct[:] = rng.random(T) < 0.7
    tr.loss[:] = rng.random(T)
    tr.expected_loss[:] = tr.loss + 0.1
    tr.optimal_loss[:] = tr.loss
    tr.surrogate_loss[:] = rng.random(T) * 3
    tr.estimated_loss[:] = rng.random(T) * 3
    tr.gamma[:] = 0.5 / np.sqrt(tr.t)
    tr.eta[:] = 0.1
    tr.grad_norm[:] = rng.random(T)
    tr.weight_norm[:] = rng.random(T)
    tr.y[:] = rng.integers(1, n + 1, T)
    tr.available[:] = rng.random((T, n_e)) < 0.5
    tr.costs[:] = np.where(tr.available, rng.random((T, n_e)), np.nan)
    return tr


def test_trace_csv_round_trip(tmp_path):
    tr = _toy_trace()
    tr.write_csv(tmp_path / "rounds.csv")
    back = RunTrace.read_csv(tmp_path / "rounds.csv")
    for name in ("t", "action", "correct", "loss", "gamma", "y", "available"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))
    assert np.array_equal(np.isnan(back.costs), np.isnan(tr.costs))
    assert np.array_equal(np.nan_to_num(back.costs), np.nan_to_num(tr.costs))


def test_windows_ratios_and_regret():
    tr = _toy_trace()
    rows = windowed_metrics(tr, 10)
    assert len(rows) == 4 and set(window_columns(2)) <= set(rows[0])
    for r in rows:
        assert r["self_ratio"] + r["defer_ratio_1"] + r["defer_ratio_2"] == pytest.approx(1.0)
        assert r["conditional_regret"] == pytest.approx(0.1)
    short = windowed_metrics(tr, 15)
    assert [r["t_end"] for r in short] == [15, 30, 40]
    rep = regret_report(tr, 10, comparator_losses=tr.loss.copy())
    assert rep.comparator_regret == 0.0
    assert rep.conditional_regret == pytest.approx(0.1 * 40)
    assert sum(rep.defer_ratio) + float(np.mean(tr.action <= 2)) == pytest.approx(1.0)


def test_loglog_slope_recovers_power():
    T = [1e3, 1e4, 1e5]
    assert loglog_slope(T, [t ** (2 / 3) for t in T]) == pytest.approx(2 / 3)
