"""Exploration, action sampling and importance-weighted loss estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import AugmentedInput, ExpertSet, LabelSpace, ProtocolError, make_label_set
from .hypothesis import WeightMatrix, argmax_label, label_scores
from .losses import HINGE, SurrogateKind, rank_one_gradient, surrogate_coefficients, surrogate_vector


@dataclass(frozen=True)
class ActionDistribution:
    """``q = (1 - gamma) e_greedy + gamma / m`` over the round's label set."""

    labels: tuple[int, ...]
    probs: np.ndarray
    gamma: float
    greedy: int

    def prob(self, label: int) -> float:
        return float(self.probs[self.labels.index(label)])

    def as_dict(self) -> dict[int, float]:
        return {lab: float(p) for lab, p in zip(self.labels, self.probs)}


def mixed_probabilities(m: int, greedy_pos: int, gamma: float) -> np.ndarray:
    probs = np.full(m, gamma / m)
    probs[greedy_pos] += 1.0 - gamma
    return probs


def action_distribution(W: WeightMatrix, inp: AugmentedInput, gamma: float) -> ActionDistribution:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"exploration rate must lie in [0, 1], got {gamma}")
    pos = argmax_label(label_scores(W, inp))
    return ActionDistribution(inp.labels, mixed_probabilities(inp.m, pos, gamma), gamma, inp.labels[pos])


def sample_position(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over positions in label order; one uniform per call."""
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(k, probs.shape[0] - 1)


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> int:
    return dist.labels[sample_position(dist.probs, rng)]


@dataclass(frozen=True)
class Feedback:
    """What the learner observes about its chosen action, and nothing else.

    ``correct`` is ``1{action == y}`` for a class action and
    ``1{g_j(x) == y}`` for a deferral, in which case ``cost`` is ``c_j(x, y)``.
    """

    action: int
    correct: bool
    cost: Optional[float] = None


@dataclass(frozen=True)
class EstimateWeights:
    v0: float
    v: dict[int, float] = field(default_factory=dict)

    def nonzero(self) -> int:
        return int(self.v0 != 0) + sum(1 for w in self.v.values() if w != 0)


def estimate_weights(feedback: Feedback, dist: ActionDistribution, space: LabelSpace) -> EstimateWeights:
    a = feedback.action
    q = dist.prob(a)
    experts = [lab - space.n for lab in dist.labels if lab > space.n]
    v = {j: 0.0 for j in experts}
    if a > space.n:
        v[a - space.n] = 1.0 / q
        return EstimateWeights(0.0, v)
    return EstimateWeights((1.0 / q) if feedback.correct else 0.0, v)


def check_feedback(feedback: Feedback, dist: ActionDistribution, space: LabelSpace) -> None:
    if feedback.action not in dist.labels:
        raise ProtocolError(f"feedback for action {feedback.action} outside support {dist.labels}")
    if feedback.action > space.n and feedback.cost is None:
        raise ProtocolError(f"deferral to expert {feedback.action - space.n} reported no cost")


def estimate_position_weights(feedback: Feedback, dist: ActionDistribution, space: LabelSpace) -> np.ndarray:
    """Weights ``omega`` with ``Phi_hat = sum_k omega[k] Phi_01(labels[k])``.

    At most one entry is nonzero.
    """
    check_feedback(feedback, dist, space)
    pos = dist.labels.index(feedback.action)
    omega = np.zeros(len(dist.labels))
    if feedback.action > space.n:
        omega[pos] = (1.0 - feedback.cost) / dist.probs[pos]
    elif feedback.correct:
        omega[pos] = 1.0 / dist.probs[pos]
    return omega


def estimated_loss(W: WeightMatrix, inp: AugmentedInput, feedback: Feedback, dist: ActionDistribution, kind=HINGE) -> float:
    kind = SurrogateKind.parse(kind)
    omega = estimate_position_weights(feedback, dist, inp.space)
    if not omega.any():
        return 0.0
    return float(omega @ surrogate_vector(label_scores(W, inp), kind))


def estimated_subgradient(
    W: WeightMatrix, inp: AugmentedInput, feedback: Feedback, dist: ActionDistribution, kind=HINGE
) -> np.ndarray:
    """Gradient of the estimated loss; rows outside the label set are zero."""
    kind = SurrogateKind.parse(kind)
    omega = estimate_position_weights(feedback, dist, inp.space)
    coef = surrogate_coefficients(label_scores(W, inp), omega, kind) if omega.any() else np.zeros(inp.m)
    return rank_one_gradient(inp, coef, W.space.N)


def project_gradient(grad: np.ndarray, experts: ExpertSet, space: LabelSpace) -> np.ndarray:
    """Zero-sum projection of a gradient matrix over the round's label rows."""
    rows = np.asarray(make_label_set(space, experts)) - 1
    out = np.array(grad, dtype=np.float64, copy=True)
    out[rows] = grad[rows] - grad[rows].mean(axis=0)
    return out
