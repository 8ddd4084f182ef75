"""Linear hypotheses over the augmented label space and their projections."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import AugmentedInput, ConfigurationError, DomainError, ExpertSet, LabelSpace, make_label_set


class WeightMatrix:
    """Stacked rows ``(w_i, b_i)`` of shape ``(N, d + 1)``; bias is the last column.

    ``bound`` is the Frobenius radius ``B`` (defaults to ``N``).
    """

    def __init__(self, space: LabelSpace, d: int, data=None, bound: float | None = None):
        self.space = space
        self.d = d
        self.bound = float(space.N if bound is None else bound)
        if self.bound <= 0:
            raise ConfigurationError(f"Frobenius bound must be positive, got {self.bound}")
        if data is None:
            data = np.zeros((space.N, d + 1))
        data = np.array(data, dtype=np.float64)
        if data.shape != (space.N, d + 1):
            raise ConfigurationError(f"weight shape {data.shape} != {(space.N, d + 1)}")
        self.data = data

    def copy(self) -> "WeightMatrix":
        return WeightMatrix(self.space, self.d, self.data.copy(), self.bound)

    def with_data(self, data: np.ndarray) -> "WeightMatrix":
        return WeightMatrix(self.space, self.d, data, self.bound)

    @property
    def frobenius(self) -> float:
        flat = self.data.ravel()
        return math.sqrt(float(np.dot(flat, flat)))

    def __repr__(self):
        return f"WeightMatrix(N={self.space.N}, d={self.d}, |W|_F={self.frobenius:.4g}, B={self.bound:g})"


def label_scores(W: WeightMatrix, inp: AugmentedInput) -> np.ndarray:
    """Scores ``<w_y, x> + b_y`` for every label of ``inp.labels``, in order."""
    rows = inp.rows()
    x = inp.x
    sub = W.data[rows]
    return sub[:, x.indices] @ x.values + sub[:, W.d]


def score(W: WeightMatrix, inp: AugmentedInput, label: int) -> float:
    if label not in inp.labels:
        raise DomainError(f"label {label} not in the round's label set {inp.labels}")
    row = W.data[label - 1]
    return float(row[inp.x.indices] @ inp.x.values + row[W.d])


def argmax_label(scores: np.ndarray) -> int:
    """Position of the maximum; ties go to the first (lowest label)."""
    return int(np.argmax(scores))


def predict(W: WeightMatrix, inp: AugmentedInput) -> int:
    return inp.labels[argmax_label(label_scores(W, inp))]


def project_zero_sum(W: WeightMatrix, experts: ExpertSet) -> WeightMatrix:
    """Orthogonal projection onto matrices whose active rows sum to zero.

    Rows of the round's label set have their mean subtracted; other rows are
    returned untouched.
    """
    rows = np.asarray(make_label_set(W.space, experts)) - 1
    data = W.data.copy()
    data[rows] = W.data[rows] - W.data[rows].mean(axis=0)
    return W.with_data(data)


def project_ball(W: WeightMatrix, B: float | None = None) -> WeightMatrix:
    """Radial projection onto ``||W||_F <= B``."""
    B = W.bound if B is None else B
    if B <= 0:
        raise ConfigurationError(f"ball radius must be positive, got {B}")
    norm = W.frobenius
    if norm <= B:
        return W.copy()
    return W.with_data(W.data * (B / norm))


def save_weights_csv(W: WeightMatrix, path) -> None:
    """Row-major CSV: a ``#`` header with n, n_e, d, B, then one row per label."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# n={W.space.n} n_e={W.space.n_e} d={W.d} B={W.bound!r}\n")
        for row in W.data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_weights_csv(path) -> WeightMatrix:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ConfigurationError(f"{path}: missing weight header line")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    space = LabelSpace(int(meta["n"]), int(meta["n_e"]))
    return WeightMatrix(space, int(meta["d"]), np.array(rows), float(meta["B"]))
