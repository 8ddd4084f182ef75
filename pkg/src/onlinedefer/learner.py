"""Online gradient descent with zero-sum projected gradients.

The learner keeps the unprojected iterate ``W_t``.  Each round it scores the
input with ``W_t`` projected onto the round's zero-sum subspace (which only
shifts the available scores by their mean), samples an action from the
exploration-mixed distribution, builds the importance-weighted surrogate from
the single piece of feedback, and steps along the projected gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy import sparse

from .bandit import ActionDistribution, Feedback, estimate_position_weights, mixed_probabilities, sample_position
from .core import AugmentedInput, ConfigurationError, LabelSpace, ProtocolError
from .hypothesis import WeightMatrix
from .losses import (
    HINGE,
    SurrogateKind,
    deferral_weights,
    surrogate_coefficients,
    surrogate_vector,
)

REGIMES = ("general", "near_realizable", "experimental_adagrad", "custom")


@dataclass
class Schedule:
    """Learning-rate and exploration schedule.

    ``R`` is the input norm bound; the schedules use ``R' = sqrt(R^2 + 1)``
    to account for the bias coordinate.  ``eta0``/``eta_power`` and
    ``gamma0``/``gamma_power`` only matter for the ``custom`` regime (and
    ``gamma0`` for ``experimental_adagrad``).
    """

    regime: str
    N: int
    B: float
    R: float
    base_lr: float = 0.1
    eps: float = 1e-8
    eta0: float = 0.07
    eta_power: float = 0.5
    gamma0: float = 10.0
    gamma_power: float = 0.5
    gamma_cap: float = 0.5

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigurationError(f"unknown schedule regime {self.regime!r}; choose from {REGIMES}")
        if self.B <= 0 or self.R <= 0 or self.N < 2:
            raise ConfigurationError("schedule needs B > 0, R > 0 and N >= 2")

    @property
    def R_eff(self) -> float:
        return math.sqrt(self.R * self.R + 1.0)

    @property
    def near_realizable_gamma(self) -> float:
        N, R = self.N, self.R_eff
        return self.B * math.sqrt(R * N**2.5 * (N + 4))

    def eta(self, t: int) -> float:
        N, B, R = self.N, self.B, self.R_eff
        if self.regime == "general":
            return B / (math.sqrt(N) * R * t ** (2.0 / 3.0))
        if self.regime == "near_realizable":
            return B / math.sqrt(4.0 * R * math.sqrt(N) * (N + 4) * t)
        if self.regime == "experimental_adagrad":
            return self.base_lr
        return self.eta0 / t**self.eta_power

    def gamma(self, t: int) -> float:
        if self.regime == "general":
            return min(0.5, t ** (-1.0 / 3.0))
        if self.regime == "near_realizable":
            return min(0.5, self.near_realizable_gamma / math.sqrt(t))
        if self.regime == "experimental_adagrad":
            return min(0.5, self.gamma0 / math.sqrt(t))
        return min(self.gamma_cap, self.gamma0 / t**self.gamma_power)


class RoundOracle(Protocol):
    def query(self, action: int) -> Feedback: ...

    def reveal(self) -> tuple[int, dict[int, float]]: ...


@dataclass(frozen=True)
class DeferralOutcome:
    action: int
    correct: bool
    loss: float


@dataclass
class RoundRecord:
    t: int
    labels: tuple[int, ...]
    probs: np.ndarray
    scores: np.ndarray  # projected scores over ``labels``
    greedy: int
    action: int
    correct: bool
    cost: float  # nan for class actions
    loss: float
    estimated_loss: float
    grad_norm: float
    weight_norm: float
    eta: float
    gamma: float


@dataclass
class LearnerState:
    W: WeightMatrix
    t: int
    schedule: Schedule
    rng: np.random.Generator
    accum: Optional[np.ndarray] = None


class OnlineDeferralLearner:
    """Learner over ``N = n + n_e`` augmented labels and ``d`` features.

    ``feedback="full"`` runs the full-information variant: no exploration and
    the whole composed surrogate is differentiated each round (the oracle must
    then support ``reveal``).
    """

    def __init__(
        self,
        space: LabelSpace,
        d: int,
        schedule: Schedule,
        rng: np.random.Generator,
        kind=HINGE,
        feedback: str = "bandit",
        bound: float | None = None,
        project_ball: bool = True,
    ):
        if feedback not in ("bandit", "full"):
            raise ConfigurationError(f"feedback must be 'bandit' or 'full', got {feedback!r}")
        self.space = space
        self.d = d
        self.kind = SurrogateKind.parse(kind)
        self.feedback = feedback
        self.use_ball = project_ball
        W = WeightMatrix(space, d, bound=bound)
        accum = np.zeros_like(W.data) if schedule.regime == "experimental_adagrad" else None
        self.state = LearnerState(W, 1, schedule, rng, accum)

    @property
    def W(self) -> WeightMatrix:
        return self.state.W

    @property
    def t(self) -> int:
        return self.state.t

    def _scores(self, inp: AugmentedInput):
        rows = inp.rows()
        cols = np.append(inp.x.indices, self.d)
        xt = np.append(inp.x.values, 1.0)
        block = self.state.W.data[np.ix_(rows, cols)]
        raw = block @ xt
        return rows, cols, xt, block, raw - raw.mean()

    def projected_scores(self, inp: AugmentedInput) -> np.ndarray:
        return self._scores(inp)[-1]

    def step(self, inp: AugmentedInput, oracle: RoundOracle) -> tuple[DeferralOutcome, RoundRecord]:
        st = self.state
        if inp.round != st.t:
            raise ProtocolError(f"input for round {inp.round} presented at round {st.t}")
        sched = st.schedule
        eta = sched.eta(st.t)
        gamma = 0.0 if self.feedback == "full" else sched.gamma(st.t)

        rows, cols, xt, block, proj = self._scores(inp)
        greedy_pos = int(np.argmax(proj))
        probs = mixed_probabilities(inp.m, greedy_pos, gamma)
        pos = sample_position(probs, st.rng)
        action = inp.labels[pos]

        fb = oracle.query(action)
        if fb.action != action:
            raise ProtocolError(f"oracle answered for action {fb.action}, learner chose {action}")
        n = self.space.n
        if action > n:
            if fb.cost is None:
                raise ProtocolError(f"deferral to expert {action - n} reported no cost")
            loss = float(fb.cost)
        else:
            loss = 0.0 if fb.correct else 1.0

        if self.feedback == "full":
            y, costs = oracle.reveal()
            omega = deferral_weights(inp, y, costs)
        else:
            dist = ActionDistribution(inp.labels, probs, gamma, inp.labels[greedy_pos])
            omega = estimate_position_weights(fb, dist, self.space)

        est = 0.0
        grad_norm = 0.0
        if omega.any():
            est = float(omega @ surrogate_vector(proj, self.kind))
            coef = surrogate_coefficients(proj, omega, self.kind)
            coef = coef - coef.mean()
            grad_norm = float(np.linalg.norm(coef) * np.linalg.norm(xt))
            if grad_norm > 0.0:
                self._update(rows, cols, block, np.outer(coef, xt), eta)

        record = RoundRecord(
            t=st.t,
            labels=inp.labels,
            probs=probs,
            scores=proj,
            greedy=inp.labels[greedy_pos],
            action=action,
            correct=bool(fb.correct),
            cost=float(fb.cost) if action > n else float("nan"),
            loss=loss,
            estimated_loss=est,
            grad_norm=grad_norm,
            weight_norm=st.W.frobenius,
            eta=eta,
            gamma=gamma,
        )
        st.t += 1
        return DeferralOutcome(action, bool(fb.correct), loss), record

    def _update(self, rows, cols, block, grad, eta):
        st = self.state
        data = st.W.data
        if st.accum is not None:
            ix = np.ix_(rows, cols)
            acc = st.accum[ix] + grad * grad
            st.accum[ix] = acc
            data[ix] = block - st.schedule.base_lr * grad / np.sqrt(acc + st.schedule.eps)
        else:
            data[np.ix_(rows, cols)] = block - eta * grad
        if self.use_ball:
            flat = data.ravel()
            norm = math.sqrt(float(np.dot(flat, flat)))
            if norm > st.W.bound:
                data *= st.W.bound / norm

    # checkpointing -------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        """Weights, round counter, RNG state and accumulators in one ``.npz``."""
        st = self.state
        meta = {
            "t": st.t,
            "n": self.space.n,
            "n_e": self.space.n_e,
            "d": self.d,
            "bound": st.W.bound,
            "kind": self.kind.value,
            "feedback": self.feedback,
            "project_ball": self.use_ball,
            "schedule": asdict(st.schedule),
            "rng": st.rng.bit_generator.state,
        }
        arrays = {"W": st.W.data}
        if st.accum is not None:
            arrays["accum"] = st.accum
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load_checkpoint(cls, path) -> "OnlineDeferralLearner":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            W = z["W"].copy()
            accum = z["accum"].copy() if "accum" in z.files else None
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = meta["rng"]
        learner = cls(
            LabelSpace(meta["n"], meta["n_e"]),
            meta["d"],
            Schedule(**meta["schedule"]),
            rng,
            kind=meta["kind"],
            feedback=meta["feedback"],
            bound=meta["bound"],
            project_ball=meta["project_ball"],
        )
        learner.state.W.data[...] = W
        learner.state.t = meta["t"]
        if accum is not None:
            learner.state.accum[...] = accum
        return learner


# hindsight comparator -------------------------------------------------------


@dataclass
class RoundLog:
    """Full-information log of a run, for analysis only.

    ``X`` is ``(T, d)`` (dense or CSR), ``mask[t, i]`` marks row ``i`` as
    available, ``y`` holds 1-based classes and ``costs[t, j - 1]`` the
    realized cost of expert ``j`` (nan when unavailable).
    """

    space: LabelSpace
    X: object
    mask: np.ndarray
    y: np.ndarray
    costs: np.ndarray

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def weights(self) -> np.ndarray:
        """Composed-surrogate weights per (round, row)."""
        n = self.space.n
        omega = np.zeros(self.mask.shape)
        omega[np.arange(self.T), self.y - 1] = 1.0
        omega[:, n:] = np.where(self.mask[:, n:], 1.0 - np.nan_to_num(self.costs, nan=1.0), 0.0)
        return omega

    def scores(self, Wdata: np.ndarray) -> np.ndarray:
        d = self.d
        S = np.asarray(self.X @ Wdata[:, :d].T) + Wdata[:, d]
        return S

    def projected_scores(self, Wdata: np.ndarray) -> np.ndarray:
        S = self.scores(Wdata)
        mean = (S * self.mask).sum(axis=1) / self.mask.sum(axis=1)
        return np.where(self.mask, S - mean[:, None], -np.inf)

    def predictions(self, Wdata: np.ndarray) -> np.ndarray:
        """1-based argmax labels (lowest label on ties)."""
        return np.argmax(self.projected_scores(Wdata), axis=1) + 1

    def deferral_losses(self, Wdata: np.ndarray) -> np.ndarray:
        pred = self.predictions(Wdata)
        n = self.space.n
        out = (pred != self.y).astype(np.float64)
        deferred = pred > n
        rows = np.flatnonzero(deferred)
        out[rows] = self.costs[rows, pred[rows] - n - 1]
        return out


def _log_objective_and_grad(Wdata: np.ndarray, log: RoundLog, kind: SurrogateKind, omega: np.ndarray):
    P = log.projected_scores(Wdata)
    mask = log.mask
    total = omega.sum(axis=1, keepdims=True)
    if kind is HINGE:
        H = np.where(mask, np.maximum(0.0, 1.0 + P), 0.0)
        phi = H.sum(axis=1, keepdims=True) - H
        C = np.where(mask & (1.0 + P > 0.0), total - omega, 0.0)
    else:
        top = P.max(axis=1, keepdims=True)
        Z = np.where(mask, np.exp(P - top), 0.0)
        lse = top + np.log(Z.sum(axis=1, keepdims=True))
        phi = np.where(mask, lse - P, 0.0)
        C = np.where(mask, total * Z / Z.sum(axis=1, keepdims=True) - omega, 0.0)
    obj = float((omega * phi).sum())
    cbar = C.sum(axis=1, keepdims=True) / mask.sum(axis=1, keepdims=True)
    C = np.where(mask, C - cbar, 0.0)
    d = log.d
    grad = np.empty_like(Wdata)
    grad[:, :d] = np.asarray(log.X.T @ C).T if sparse.issparse(log.X) else C.T @ log.X
    grad[:, d] = C.sum(axis=0)
    return obj, grad


def log_surrogate_objective(Wdata: np.ndarray, log: RoundLog, kind=HINGE) -> float:
    """Cumulative composed surrogate of ``W`` projected round by round."""
    kind = SurrogateKind.parse(kind)
    return _log_objective_and_grad(Wdata, log, kind, log.weights())[0]


@dataclass
class ComparatorResult:
    W: WeightMatrix
    objective: float
    history: list = field(default_factory=list)


def hindsight_comparator(
    log: RoundLog,
    bound: float | None = None,
    kind=HINGE,
    epochs: int = 300,
    init: np.ndarray | None = None,
) -> ComparatorResult:
    """Approximate best fixed hypothesis in hindsight on a full-information log.

    Projected subgradient descent over the Frobenius ball with normalized,
    decaying steps; the best iterate seen is returned together with its
    objective, which upper-bounds the exact infimum.
    """
    kind = SurrogateKind.parse(kind)
    space = log.space
    B = float(space.N if bound is None else bound)
    omega = log.weights()
    shape = (space.N, log.d + 1)
    W = np.zeros(shape) if init is None else np.array(init, dtype=np.float64)
    norm = np.linalg.norm(W)
    if norm > B:
        W *= B / norm
    best_W, best_obj = W.copy(), math.inf
    history = []
    for k in range(epochs):
        obj, grad = _log_objective_and_grad(W, log, kind, omega)
        history.append(obj)
        if obj < best_obj:
            best_obj, best_W = obj, W.copy()
        gnorm = np.linalg.norm(grad)
        if gnorm == 0.0:
            break
        W = W - (0.5 * B / math.sqrt(k + 1.0)) * grad / gnorm
        norm = np.linalg.norm(W)
        if norm > B:
            W *= B / norm
    obj, _ = _log_objective_and_grad(W, log, kind, omega)
    if obj < best_obj:
        best_obj, best_W = obj, W
    return ComparatorResult(WeightMatrix(space, log.d, best_W, B), best_obj, history)
