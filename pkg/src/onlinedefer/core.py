"""Domain types shared by every other module.

Labels are 1-based at the API boundary: classes are ``1..n`` and deferral to
expert ``j`` is label ``n + j``.  Arrays indexed by label use row
``label - 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Invalid construction parameters (label spaces, costs, configs)."""


class DomainError(ValueError):
    """A label or input outside the domain an operation is defined on."""


class ProtocolError(RuntimeError):
    """Violation of the bandit interaction protocol."""


class DataError(ValueError):
    """Malformed or out-of-range dataset content."""


@dataclass(frozen=True)
class LabelSpace:
    """Augmented label space with ``n`` classes and ``n_e`` experts."""

    n: int
    n_e: int

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError(f"need at least 2 classes, got n={self.n}")
        if self.n_e < 0:
            raise ConfigurationError(f"n_e must be >= 0, got {self.n_e}")

    @property
    def N(self) -> int:
        return self.n + self.n_e

    def is_class(self, label: int) -> bool:
        return 1 <= label <= self.n

    def expert_of(self, label: int) -> int:
        """Expert index ``j`` for deferral label ``n + j``."""
        if not self.n < label <= self.N:
            raise DomainError(f"label {label} is not a deferral label")
        return label - self.n


@dataclass(frozen=True)
class FeatureVector:
    """Sparse feature vector: sorted indices into ``range(dim)`` and values."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise DataError("indices and values must be 1-d arrays of equal length")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0)):
            raise DataError("feature indices must be strictly increasing within [0, dim)")
        idx.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dense(cls, x: Sequence[float]) -> "FeatureVector":
        x = np.asarray(x, dtype=np.float64)
        idx = np.flatnonzero(x)
        return cls(idx, x[idx], x.shape[0])

    @classmethod
    def full(cls, x: Sequence[float]) -> "FeatureVector":
        """Dense storage: every coordinate kept, zeros included."""
        x = np.asarray(x, dtype=np.float64)
        return cls(np.arange(x.shape[0]), x, x.shape[0])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @property
    def norm(self) -> float:
        return float(math.sqrt(np.dot(self.values, self.values)))

    def scaled(self, factor: float) -> "FeatureVector":
        return FeatureVector(self.indices, self.values * factor, self.dim)


_small_norm_warned = False


def bound_features(
    x: FeatureVector, R: float, on_excess: str = "rescale"
) -> FeatureVector:
    """Enforce ``||x|| <= R``; ``on_excess`` is ``"rescale"`` or ``"reject"``.

    Inputs with norm below 1 are passed through with a warning.
    """
    norm = x.norm
    if norm > R:
        if on_excess == "reject":
            raise DataError(f"feature norm {norm:.6g} exceeds bound R={R}")
        if on_excess != "rescale":
            raise ConfigurationError(f"unknown on_excess policy {on_excess!r}")
        x = x.scaled(R / norm)
    elif norm < 1.0 - 1e-9:
        global _small_norm_warned
        if not _small_norm_warned:
            logger.warning("feature norm %.4g is below 1 (further cases logged at debug level)", norm)
            _small_norm_warned = True
        else:
            logger.debug("feature norm %.4g is below 1", norm)
    return x


@dataclass(frozen=True)
class ExpertSet:
    """Experts available in one round, as sorted 1-based indices."""

    available: tuple[int, ...] = ()

    def __post_init__(self):
        avail = tuple(int(j) for j in self.available)
        if len(set(avail)) != len(avail):
            raise ConfigurationError(f"duplicate expert index in {avail}")
        object.__setattr__(self, "available", tuple(sorted(avail)))

    def __len__(self) -> int:
        return len(self.available)

    def __iter__(self):
        return iter(self.available)

    def __contains__(self, j) -> bool:
        return j in self.available


@dataclass(frozen=True)
class AugmentedInput:
    """Feature vector paired with the round's expert set."""

    x: FeatureVector
    experts: ExpertSet
    round: int
    space: LabelSpace
    labels: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(make_label_set(self.space, self.experts)))

    @property
    def m(self) -> int:
        return len(self.labels)

    def rows(self) -> np.ndarray:
        """0-based weight-matrix rows of the round's label set."""
        return np.asarray(self.labels, dtype=np.int64) - 1


def make_label_set(space: LabelSpace, experts: ExpertSet | Iterable[int]) -> list[int]:
    """Classes ``1..n`` followed by ``n + j`` for each available expert ``j``."""
    avail = experts.available if isinstance(experts, ExpertSet) else tuple(experts)
    if len(set(avail)) != len(avail):
        raise ConfigurationError(f"duplicate expert index in {avail}")
    for j in avail:
        if not 1 <= j <= space.n_e:
            raise ConfigurationError(f"expert index {j} outside 1..{space.n_e}")
    return list(range(1, space.n + 1)) + [space.n + j for j in sorted(avail)]


@dataclass(frozen=True)
class ExpertCost:
    """Cost model ``alpha * 1{wrong} + beta``, optionally already normalized.

    ``normalized`` records that the ``Q`` divisor has been folded into
    ``alpha`` and ``beta``.
    """

    alpha: float
    beta: float
    normalized: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError(
                f"expert cost parameters must be >= 0 (alpha={self.alpha}, beta={self.beta})"
            )

    def realized(self, correct: bool) -> float:
        return (0.0 if correct else self.alpha) + self.beta

    @property
    def lower(self) -> float:
        return self.beta

    @property
    def upper(self) -> float:
        return self.alpha + self.beta


@dataclass(frozen=True)
class NormalizedCosts:
    costs: tuple[ExpertCost, ...]
    Q: float

    @property
    def classifier_cost(self) -> float:
        """A classifier mistake's cost on the normalized scale (``1 / Q``)."""
        return 1.0 / self.Q

    @property
    def max_upper(self) -> float:
        return max((c.upper for c in self.costs), default=0.0)


def normalize_costs(raw: Sequence[ExpertCost]) -> NormalizedCosts:
    """Divide every cost by ``Q = 1 + max_j beta_j``.

    Already-normalized inputs are a fixed point (``Q = 1``).  Mixing
    normalized and raw costs is an error.
    """
    raw = tuple(raw)
    flags = {c.normalized for c in raw}
    if len(flags) > 1:
        raise ConfigurationError("cannot mix normalized and raw expert costs")
    if flags == {True}:
        return NormalizedCosts(raw, 1.0)
    Q = 1.0 + max((c.beta for c in raw), default=0.0)
    scaled = tuple(ExpertCost(c.alpha / Q, c.beta / Q, normalized=True) for c in raw)
    for c in scaled:
        if c.upper > 1.0 + 1e-12:
            raise ConfigurationError(
                f"normalized expert cost upper bound {c.upper:.6g} exceeds 1; need alpha_j <= 1"
            )
    return NormalizedCosts(scaled, Q)
