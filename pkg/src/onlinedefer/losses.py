"""True deferral loss, varying multiclass surrogates and their composition.

Most helpers work on a score vector aligned with ``inp.labels`` (the round's
label set), so unavailable rows are never read.  Gradients of every surrogate
here are rank one: ``coef[i] * x_tilde`` for row ``labels[i]``, where
``x_tilde`` is ``x`` with a trailing 1 for the bias.
"""

from __future__ import annotations

import enum
from typing import Mapping

import numpy as np

from .core import AugmentedInput, DomainError
from .hypothesis import WeightMatrix, label_scores, predict


class SurrogateKind(enum.Enum):
    CONSTRAINED_HINGE = "constrained_hinge"
    LOGISTIC = "logistic"

    @property
    def zero_sum(self) -> bool:
        """Whether the surrogate is defined under the zero-sum score constraint."""
        return self is SurrogateKind.CONSTRAINED_HINGE

    @classmethod
    def parse(cls, value) -> "SurrogateKind":
        return value if isinstance(value, cls) else cls(str(value))


HINGE = SurrogateKind.CONSTRAINED_HINGE
LOGISTIC = SurrogateKind.LOGISTIC


def _logsumexp(s: np.ndarray) -> float:
    top = s.max()
    return float(top + np.log(np.exp(s - top).sum()))


def surrogate_vector(scores: np.ndarray, kind: SurrogateKind) -> np.ndarray:
    """``Phi_01(h, x, labels[k])`` for every position ``k`` of the label set."""
    if kind is HINGE:
        terms = np.maximum(0.0, 1.0 + scores)
        return terms.sum() - terms
    if kind is LOGISTIC:
        return _logsumexp(scores) - scores
    raise ValueError(f"unsupported surrogate {kind}")


def surrogate_coefficients(scores: np.ndarray, weights: np.ndarray, kind: SurrogateKind) -> np.ndarray:
    """Score-space gradient of ``sum_k weights[k] * Phi_01(labels[k])``.

    For the hinge this is a subgradient that takes 0 at the kink ``1 + h = 0``.
    """
    total = weights.sum()
    if kind is HINGE:
        active = (1.0 + scores > 0.0).astype(np.float64)
        return active * (total - weights)
    if kind is LOGISTIC:
        z = np.exp(scores - scores.max())
        return total * z / z.sum() - weights
    raise ValueError(f"unsupported surrogate {kind}")


def x_tilde(inp: AugmentedInput) -> np.ndarray:
    """Dense ``(x, 1)``."""
    return np.append(inp.x.to_dense(), 1.0)


def rank_one_gradient(inp: AugmentedInput, coef: np.ndarray, N: int) -> np.ndarray:
    """Expand label-set coefficients into a full ``(N, d + 1)`` gradient matrix."""
    grad = np.zeros((N, inp.x.dim + 1))
    grad[inp.rows()] = np.outer(coef, x_tilde(inp))
    return grad


def cost_vector(inp: AugmentedInput, costs: Mapping[int, float]) -> np.ndarray:
    """Realized costs ``c_j`` for the available experts, in label-set order."""
    try:
        return np.array([float(costs[j]) for j in inp.experts.available])
    except KeyError as exc:
        raise DomainError(f"missing cost for available expert {exc.args[0]}") from None


def deferral_weights(inp: AugmentedInput, y: int, costs: Mapping[int, float]) -> np.ndarray:
    """Per-position weights of the composed surrogate: 1 on ``y``, ``1 - c_j`` on ``n + j``."""
    n = inp.space.n
    if not 1 <= y <= n:
        raise DomainError(f"true label {y} must be a class in 1..{n}")
    w = np.zeros(inp.m)
    w[y - 1] = 1.0
    w[n:] = 1.0 - cost_vector(inp, costs)
    return w


def true_deferral_loss(W: WeightMatrix, inp: AugmentedInput, y: int, costs: Mapping[int, float]) -> float:
    pred = predict(W, inp)
    return deferral_loss_of_action(inp, pred, y, costs)


def deferral_loss_of_action(inp: AugmentedInput, action: int, y: int, costs: Mapping[int, float]) -> float:
    n = inp.space.n
    if action <= n:
        return float(action != y)
    return float(costs[action - n])


def _as_probabilities(q, inp: AugmentedInput) -> np.ndarray:
    probs = np.asarray(getattr(q, "probs", q), dtype=np.float64)
    if probs.shape != (inp.m,):
        raise ValueError(f"distribution has {probs.shape} entries, label set has {inp.m}")
    if np.any(probs < -1e-12) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("q is not a probability distribution over the label set")
    return probs


def loss_vector(inp: AugmentedInput, y: int, costs: Mapping[int, float]) -> np.ndarray:
    """True deferral loss of each action in the label set."""
    n = inp.space.n
    out = np.ones(inp.m)
    out[y - 1] = 0.0
    out[n:] = cost_vector(inp, costs)
    return out


def expected_deferral_loss(q, inp: AugmentedInput, y: int, costs: Mapping[int, float]) -> float:
    """Deferral loss averaged over actions drawn from ``q``."""
    probs = _as_probabilities(q, inp)
    return float(probs @ loss_vector(inp, y, costs))


def varying_surrogate(W: WeightMatrix, inp: AugmentedInput, label: int, kind=HINGE) -> float:
    """Multiclass surrogate restricted to the round's label set; 0 for unavailable labels."""
    kind = SurrogateKind.parse(kind)
    if label not in inp.labels:
        return 0.0
    pos = inp.labels.index(label)
    return float(surrogate_vector(label_scores(W, inp), kind)[pos])


def surrogate_deferral_loss(W: WeightMatrix, inp: AugmentedInput, y: int, costs: Mapping[int, float], kind=HINGE) -> float:
    kind = SurrogateKind.parse(kind)
    weights = deferral_weights(inp, y, costs)
    return float(weights @ surrogate_vector(label_scores(W, inp), kind))


def surrogate_deferral_subgradient(
    W: WeightMatrix, inp: AugmentedInput, y: int, costs: Mapping[int, float], kind=HINGE
) -> np.ndarray:
    """Full-information (sub)gradient of the composed surrogate w.r.t. ``W``."""
    kind = SurrogateKind.parse(kind)
    weights = deferral_weights(inp, y, costs)
    coef = surrogate_coefficients(label_scores(W, inp), weights, kind)
    return rank_one_gradient(inp, coef, W.space.N)
