"""Conditional risks, calibration and minimizability gaps, and run reports.

A score profile summarizes one augmented input: ``s(y) = p(y)`` for classes
and ``s(n + j) = 1 - E_y[c_j]`` for available experts.  The conditional
deferral risk of picking label ``l`` is ``1 - s(l)``, and the conditional
risk of the composed surrogate is ``sum_l s(l) Phi_01(h, l)``.

Assumption: every label of the round is reachable by some ball-bounded
linear hypothesis with bias, so the pointwise minima below are taken over
the whole label set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ConfigurationError, DomainError
from .losses import HINGE, SurrogateKind, surrogate_vector


@dataclass(frozen=True)
class ScoreProfile:
    labels: tuple[int, ...]
    s: np.ndarray
    n: int

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def S(self) -> float:
        return float(self.s.sum())

    @property
    def normalized(self) -> np.ndarray:
        return self.s / self.S

    @property
    def max_pos(self) -> int:
        return int(np.argmax(self.s))

    @property
    def y_max(self) -> int:
        return self.labels[self.max_pos]

    def value(self, label: int) -> float:
        return float(self.s[self.labels.index(label)])


def score_profile(p, costs, experts, n: int | None = None) -> ScoreProfile:
    """Profile from a class distribution ``p`` and expert costs.

    ``costs`` has one entry per available expert (expected cost) or one row
    per available expert over the ``n`` classes (``c_j(x, y)``), in which case
    the expectation under ``p`` is taken here.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0] if n is None else n
    if p.shape != (n,) or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("p must be a probability vector over the n classes")
    experts = tuple(experts)
    costs = np.asarray(costs, dtype=np.float64)
    if not experts:
        expected = np.zeros(0)
    elif costs.shape == (len(experts),):
        expected = costs
    elif costs.shape == (len(experts), n):
        expected = costs @ p
    else:
        raise DomainError(f"cost table shape {costs.shape} does not match {len(experts)} experts x {n} classes")
    labels = tuple(range(1, n + 1)) + tuple(n + j for j in sorted(experts))
    order = np.argsort(experts, kind="stable")
    s = np.concatenate([p, 1.0 - expected[order]])
    return ScoreProfile(labels, s, n)


def _choice_weights(choice, profile: ScoreProfile) -> np.ndarray:
    """A deterministic label or a distribution over the profile's labels."""
    if np.isscalar(choice):
        w = np.zeros(profile.m)
        w[profile.labels.index(int(choice))] = 1.0
        return w
    q = np.asarray(getattr(choice, "probs", choice), dtype=np.float64)
    if q.shape != (profile.m,):
        raise DomainError(f"distribution over {q.shape} labels, profile has {profile.m}")
    return q


def conditional_deferral_risk(choice, profile: ScoreProfile) -> float:
    """``1 - s(h)`` for a label, ``sum_l q(l) (1 - s(l))`` for a distribution."""
    q = _choice_weights(choice, profile)
    return float(q.sum() - q @ profile.s)


def min_conditional_deferral_risk(profile: ScoreProfile) -> float:
    return float(1.0 - profile.s.max())


def conditional_surrogate_risk(scores, profile: ScoreProfile, kind=HINGE) -> float:
    """``sum_l s(l) Phi_01(h, l)`` for scores aligned with ``profile.labels``.

    Hinge scores are projected onto the zero-sum set first, which is how the
    learner evaluates hypotheses.
    """
    kind = SurrogateKind.parse(kind)
    h = np.asarray(scores, dtype=np.float64)
    if kind is HINGE:
        h = h - h.mean()
    return float(profile.s @ surrogate_vector(h, kind))


def min_surrogate_risk_hinge(profile: ScoreProfile) -> tuple[float, np.ndarray]:
    """Closed-form minimum ``m (S - s_max)`` and an achieving zero-sum score vector."""
    m = profile.m
    if m < 2:
        raise DomainError("need at least two labels")
    scores = np.full(m, -1.0)
    scores[profile.max_pos] = m - 1.0
    return float(m * (profile.S - profile.s.max())), scores


def min_surrogate_risk_logistic(profile: ScoreProfile) -> float:
    """Infimum ``S * entropy(s / S)``, approached by ``softmax(h) = s / S``."""
    sbar = profile.normalized
    nz = sbar > 0
    return float(-profile.S * np.sum(sbar[nz] * np.log(sbar[nz])))


def min_surrogate_risk(profile: ScoreProfile, kind=HINGE) -> float:
    kind = SurrogateKind.parse(kind)
    if kind is HINGE:
        return min_surrogate_risk_hinge(profile)[0]
    return min_surrogate_risk_logistic(profile)


def calibration_gaps(choice, scores, profile: ScoreProfile, kind=HINGE) -> tuple[float, float]:
    """``(deferral-risk gap of choice, surrogate-risk gap of scores)``.

    ``choice`` is a label or a distribution; ``scores`` are the hypothesis
    scores the choice was derived from.
    """
    dl = conditional_deferral_risk(choice, profile) - min_conditional_deferral_risk(profile)
    dphi = conditional_surrogate_risk(scores, profile, kind) - min_surrogate_risk(profile, kind)
    return float(max(dl, 0.0)), float(max(dphi, 0.0))


def exploration_penalty_constant(max_expert_cost: float) -> float:
    """Constant ``c`` in ``gap(q) <= gap(h) + c * gamma`` for the mixed policy.

    Profile entries lie in [0, 1], so a uniformly explored action can lose at
    most 1; the maximal expert cost alone is not enough when class scores
    dominate.
    """
    return max(1.0, float(max_expert_cost))


def minimizability_gap(best_in_class_risk: float, per_round_minima: Sequence[float]) -> float:
    """Best hypothesis's cumulative surrogate risk minus the per-round minima."""
    return float(best_in_class_risk - float(np.sum(per_round_minima)))


# run traces ---------------------------------------------------------------------

TRACE_COLUMNS = (
    "t",
    "action",
    "greedy",
    "correct",
    "loss",
    "expected_loss",
    "optimal_loss",
    "surrogate_loss",
    "estimated_loss",
    "gamma",
    "eta",
    "grad_norm",
    "weight_norm",
    "y",
)


@dataclass
class RunTrace:
    """Per-round log of a run as parallel arrays.

    ``expected_loss`` is the conditional deferral risk of the round's action
    distribution, ``optimal_loss`` the minimal conditional risk (nan when the
    profile is unknown), ``available[t, j]`` the availability bit of expert
    ``j + 1`` and ``costs[t, j]`` its realized cost (nan when unavailable).
    """

    n: int
    n_e: int
    t: np.ndarray
    action: np.ndarray
    greedy: np.ndarray
    correct: np.ndarray
    loss: np.ndarray
    expected_loss: np.ndarray
    optimal_loss: np.ndarray
    surrogate_loss: np.ndarray
    estimated_loss: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    grad_norm: np.ndarray
    weight_norm: np.ndarray
    y: np.ndarray
    available: np.ndarray
    costs: np.ndarray

    @property
    def T(self) -> int:
        return int(self.t.shape[0])

    @classmethod
    def allocate(cls, T: int, n: int, n_e: int) -> "RunTrace":
        f = lambda: np.full(T, np.nan)
        i = lambda: np.zeros(T, dtype=np.int64)
        return cls(
            n, n_e, i(), i(), i(), np.zeros(T, dtype=bool), f(), f(), f(), f(), f(), f(), f(), f(), f(), i(),
            np.zeros((T, n_e), dtype=bool), np.full((T, n_e), np.nan),
        )

    def truncated(self, T: int) -> "RunTrace":
        kw = {name: getattr(self, name)[:T] for name in TRACE_COLUMNS}
        return RunTrace(self.n, self.n_e, available=self.available[:T], costs=self.costs[:T], **kw)

    def write_csv(self, path) -> None:
        header = list(TRACE_COLUMNS)
        header += [f"avail_{j}" for j in range(1, self.n_e + 1)]
        header += [f"cost_{j}" for j in range(1, self.n_e + 1)]
        with open(path, "w", newline="") as fh:
            fh.write(f"# n={self.n} n_e={self.n_e}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            cols = [getattr(self, name) for name in TRACE_COLUMNS]
            for k in range(self.T):
                row = [_fmt(c[k]) for c in cols]
                row += [str(int(b)) for b in self.available[k]]
                row += [_fmt(c) for c in self.costs[k]]
                w.writerow(row)

    @classmethod
    def read_csv(cls, path) -> "RunTrace":
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith("#"):
                raise ConfigurationError(f"{path}: missing trace header line")
            meta = dict(tok.split("=", 1) for tok in first[1:].split())
            n, n_e = int(meta["n"]), int(meta["n_e"])
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        T = len(rows)
        tr = cls.allocate(T, n, n_e)
        data = np.array(rows, dtype=object).reshape(T, len(header))
        col = {name: k for k, name in enumerate(header)}
        for name in TRACE_COLUMNS:
            arr = getattr(tr, name)
            raw = data[:, col[name]] if T else np.zeros(0)
            if arr.dtype == bool:
                arr[:] = [v in ("1", "True") for v in raw]
            else:
                arr[:] = np.array(raw, dtype=np.float64).astype(arr.dtype)
        for j in range(1, n_e + 1):
            tr.available[:, j - 1] = [v == "1" for v in data[:, col[f"avail_{j}"]]] if T else []
            tr.costs[:, j - 1] = np.array(data[:, col[f"cost_{j}"]], dtype=np.float64) if T else []
        return tr


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


WINDOW_COLUMNS = (
    "window",
    "t_start",
    "t_end",
    "deferral_loss",
    "expected_loss",
    "surrogate_loss",
    "estimated_loss",
    "accuracy",
    "self_ratio",
    "conditional_regret",
    "comparator_regret",
    "gamma",
    "eta",
    "grad_norm",
    "weight_norm",
)


def _nanmean(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or np.all(np.isnan(x)):
        return float("nan")
    return float(np.nanmean(x))


def windowed_metrics(trace: RunTrace, window: int, comparator_losses: Optional[np.ndarray] = None) -> list[dict]:
    """One row per window of ``window`` rounds (the last may be shorter)."""
    if window < 1:
        raise ConfigurationError(f"window must be >= 1, got {window}")
    n, n_e = trace.n, trace.n_e
    rows = []
    for k, start in enumerate(range(0, trace.T, window)):
        sl = slice(start, min(start + window, trace.T))
        act = trace.action[sl]
        row = {
            "window": k,
            "t_start": int(trace.t[sl][0]),
            "t_end": int(trace.t[sl][-1]),
            "deferral_loss": _nanmean(trace.loss[sl]),
            "expected_loss": _nanmean(trace.expected_loss[sl]),
            "surrogate_loss": _nanmean(trace.surrogate_loss[sl]),
            "estimated_loss": _nanmean(trace.estimated_loss[sl]),
            "accuracy": _nanmean(trace.correct[sl]),
            "self_ratio": float(np.mean(act <= n)),
            "conditional_regret": _nanmean(trace.expected_loss[sl] - trace.optimal_loss[sl]),
            "comparator_regret": float("nan")
            if comparator_losses is None
            else _nanmean(trace.loss[sl] - comparator_losses[sl]),
            "gamma": _nanmean(trace.gamma[sl]),
            "eta": _nanmean(trace.eta[sl]),
            "grad_norm": _nanmean(trace.grad_norm[sl]),
            "weight_norm": _nanmean(trace.weight_norm[sl]),
        }
        for j in range(1, n_e + 1):
            chosen = act == n + j
            row[f"defer_ratio_{j}"] = float(np.mean(chosen))
            row[f"queried_acc_{j}"] = _nanmean(trace.correct[sl][chosen]) if chosen.any() else float("nan")
            row[f"availability_{j}"] = float(np.mean(trace.available[sl, j - 1]))
        rows.append(row)
    return rows


def window_columns(n_e: int) -> list[str]:
    cols = list(WINDOW_COLUMNS)
    for j in range(1, n_e + 1):
        cols += [f"defer_ratio_{j}", f"queried_acc_{j}", f"availability_{j}"]
    return cols


def write_rows_csv(path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


@dataclass
class RegretReport:
    T: int
    cumulative_loss: float
    cumulative_expected_loss: float
    cumulative_surrogate: float
    conditional_regret: float
    comparator_regret: float
    accuracy: float
    defer_ratio: list
    queried_accuracy: list
    windows: list = field(default_factory=list)

    def summary(self) -> dict:
        T = max(self.T, 1)
        return {
            "T": self.T,
            "cumulative_loss": self.cumulative_loss,
            "average_loss": self.cumulative_loss / T,
            "cumulative_expected_loss": self.cumulative_expected_loss,
            "cumulative_surrogate": self.cumulative_surrogate,
            "conditional_regret": self.conditional_regret,
            "average_conditional_regret": self.conditional_regret / T,
            "comparator_regret": self.comparator_regret,
            "accuracy": self.accuracy,
            "defer_ratio": self.defer_ratio,
            "queried_accuracy": self.queried_accuracy,
        }


def regret_report(trace: RunTrace, window: int | None = None, comparator_losses=None) -> RegretReport:
    """Cumulative and windowed metrics.

    ``conditional_regret`` sums ``E_q[loss] - min loss`` using the hidden
    profiles; ``comparator_regret`` compares realized losses with those of a
    fixed comparator (e.g. the best hypothesis in hindsight).
    """
    T = trace.T
    window = window or max(1, T // 200)
    n, n_e = trace.n, trace.n_e
    comp = float("nan") if comparator_losses is None else float(np.sum(trace.loss - comparator_losses))
    qa = []
    for j in range(1, n_e + 1):
        chosen = trace.action == n + j
        qa.append(float(trace.correct[chosen].mean()) if chosen.any() else float("nan"))
    return RegretReport(
        T=T,
        cumulative_loss=float(np.sum(trace.loss)),
        cumulative_expected_loss=float(np.nansum(trace.expected_loss)),
        cumulative_surrogate=float(np.nansum(trace.surrogate_loss)),
        conditional_regret=float(np.nansum(trace.expected_loss - trace.optimal_loss)),
        comparator_regret=comp,
        accuracy=float(np.mean(trace.correct)) if T else float("nan"),
        defer_ratio=[float(np.mean(trace.action == n + j)) for j in range(1, n_e + 1)],
        queried_accuracy=qa,
        windows=windowed_metrics(trace, window, comparator_losses),
    )


def loglog_slope(T: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(values)`` against ``log(T)``."""
    x = np.log(np.asarray(T, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])
