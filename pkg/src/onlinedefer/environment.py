"""Data streams, simulated experts and the bandit oracle.

Synthetic inputs come from ``n`` clusters.  The mean of cluster ``c`` is a
one-hot block: coordinates ``[c*k, (c+1)*k)`` with ``k = d // n`` are set
to ``cluster_scale / sqrt(k)``.  Each coordinate then gets independent
uniform noise in ``[-cluster_noise, cluster_noise]``.  With the defaults the
block-sum classifier separates the clusters before label noise is applied.
The emitted label is the cluster index, flipped to a uniform other class
with a per-class probability that follows a clamped Gaussian random walk.

An expert's competence on region ``r`` is a probability ``rho`` of reporting
the (post-noise) label.  Otherwise it answers uniformly over all ``n``
classes.  The region is the cluster for synthetic data and the label for
file data.  ``rho`` is 1 inside and 0 outside the configured regions.  When
expertise drifts, ``rho`` follows a pinned Brownian bridge from the start
profile to the end profile.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .bandit import Feedback
from .core import (
    AugmentedInput,
    ConfigurationError,
    DataError,
    ExpertCost,
    ExpertSet,
    FeatureVector,
    LabelSpace,
    NormalizedCosts,
    ProtocolError,
    bound_features,
    normalize_costs,
)
from .hypothesis import WeightMatrix

logger = logging.getLogger(__name__)

SETTINGS = ("fixed", "drifting_availability", "drifting_both")
SOURCES = ("synthetic", "sparse_file")


@dataclass
class EnvironmentConfig:
    setting: str = "fixed"
    source: str = "synthetic"
    path: Optional[str] = None
    index_base: int = 1
    max_rows: Optional[int] = None
    n: int = 6
    d: int = 120
    n_e: int = 3
    R: float = 2.0
    on_excess: str = "rescale"
    cluster_scale: float = 1.2
    cluster_noise: float = 0.05
    flip_init: list = field(default_factory=lambda: [0.3, 0.3, 0.3, 0.3, 0.0, 0.0])
    flip_sigma: float = 2e-3
    regions: list = field(default_factory=lambda: [[1, 2], [3, 4], []])
    end_regions: Optional[list] = None
    drift_horizon: Optional[int] = None
    bridge_sigma: float = 0.02
    availability_init: float = 0.7
    availability_sigma: float = 2e-3
    alpha: float = 1.0
    beta: float = 0.1

    def validate(self) -> list[str]:
        """Return field-level problems (empty when valid)."""
        errs = []
        if self.setting not in SETTINGS:
            errs.append(f"setting: must be one of {SETTINGS}, got {self.setting!r}")
        if self.source not in SOURCES:
            errs.append(f"source: must be one of {SOURCES}, got {self.source!r}")
        if self.source == "sparse_file" and not self.path:
            errs.append("path: required when source is 'sparse_file'")
        if self.source == "synthetic":
            if self.n < 2:
                errs.append(f"n: need at least 2 classes, got {self.n}")
            if self.d < self.n:
                errs.append(f"d: need d >= n for block clusters, got d={self.d}, n={self.n}")
            if len(self.flip_init) != self.n:
                errs.append(f"flip_init: expected {self.n} entries, got {len(self.flip_init)}")
            elif any(not 0.0 <= p <= 1.0 for p in self.flip_init):
                errs.append("flip_init: probabilities must lie in [0, 1]")
        if self.n_e < 0:
            errs.append(f"n_e: must be >= 0, got {self.n_e}")
        if len(self.regions) != self.n_e:
            errs.append(f"regions: expected {self.n_e} expert region lists, got {len(self.regions)}")
        if self.setting == "drifting_both":
            if self.end_regions is None or len(self.end_regions) != self.n_e:
                errs.append(f"end_regions: drifting_both needs {self.n_e} end region lists")
        if self.R <= 0:
            errs.append(f"R: must be positive, got {self.R}")
        if self.on_excess not in ("rescale", "reject"):
            errs.append(f"on_excess: must be 'rescale' or 'reject', got {self.on_excess!r}")
        for name in ("flip_sigma", "bridge_sigma", "availability_sigma"):
            if getattr(self, name) < 0:
                errs.append(f"{name}: must be >= 0")
        for name in ("alpha", "beta"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim > 1 or (v.ndim == 1 and v.shape[0] != self.n_e):
                errs.append(f"{name}: expected a number or {self.n_e} per-expert values")
            elif np.any(v < 0):
                errs.append(f"{name}: must be >= 0")
        for name in ("drift_horizon", "max_rows"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                errs.append(f"{name}: must be a positive integer when given")
        if not 0.0 <= self.availability_init <= 1.0:
            errs.append("availability_init: must lie in [0, 1]")
        return errs

    @classmethod
    def from_dict(cls, raw: dict) -> "EnvironmentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigurationError(f"environment: unknown keys {unknown}")
        return cls(**raw)


# random processes ----------------------------------------------------------


class ClampedWalk:
    """Gaussian random walk clamped to [0, 1] after every step."""

    def __init__(self, init, sigma: float, rng: np.random.Generator):
        self.value = np.clip(np.array(init, dtype=np.float64), 0.0, 1.0)
        self.sigma = sigma
        self.rng = rng

    def step(self) -> np.ndarray:
        if self.sigma > 0:
            self.value = np.clip(self.value + self.sigma * self.rng.standard_normal(self.value.shape), 0.0, 1.0)
        return self.value


class BrownianBridge:
    """Linear interpolation from ``start`` to ``end`` plus a pinned bridge.

    Sampled sequentially: ``value(k)`` for ``k = 0, 1, ..., horizon``.  The
    noise is ``sigma`` times a standard Brownian bridge on [0, 1], so it is
    exactly zero at both ends.  Values are clamped to [0, 1].  Past the
    horizon the end profile is held.
    """

    def __init__(self, start, end, horizon: int, sigma: float, rng: np.random.Generator):
        if horizon < 1:
            raise ConfigurationError("bridge horizon must be >= 1")
        self.start = np.array(start, dtype=np.float64)
        self.end = np.array(end, dtype=np.float64)
        self.horizon = horizon
        self.sigma = sigma
        self.rng = rng
        self.k = 0
        self.noise = np.zeros_like(self.start)

    def value(self) -> np.ndarray:
        u = min(self.k, self.horizon) / self.horizon
        return np.clip(self.start + (self.end - self.start) * u + self.sigma * self.noise, 0.0, 1.0)

    def advance(self) -> np.ndarray:
        if self.k < self.horizon:
            H = self.horizon
            u0, u1 = self.k / H, (self.k + 1) / H
            shrink = (1.0 - u1) / (1.0 - u0)
            var = (u1 - u0) * shrink
            draw = self.rng.standard_normal(self.noise.shape)
            self.noise = self.noise * shrink + math.sqrt(var) * draw
            if self.k + 1 == H:
                self.noise = np.zeros_like(self.noise)
        self.k += 1
        return self.value()


def region_profile(regions: list[list[int]], n: int) -> np.ndarray:
    """``(n_e, n)`` matrix of knowledge probabilities, 1 on listed regions."""
    prof = np.zeros((len(regions), n))
    for j, regs in enumerate(regions):
        for r in regs:
            if not 1 <= r <= n:
                raise ConfigurationError(f"region {r} of expert {j + 1} outside 1..{n}")
            prof[j, r - 1] = 1.0
    return prof


class SimulatedExperts:
    """All experts of a run: competence per region, possibly drifting."""

    def __init__(self, n: int, start, end=None, horizon: int = 1, sigma: float = 0.0, rng=None):
        self.n = n
        self.rng = rng if rng is not None else np.random.default_rng(0)
        start = np.asarray(start, dtype=np.float64)
        self.n_e = start.shape[0]
        if end is None:
            self.bridge = None
            self.knowledge = start
        else:
            self.bridge = BrownianBridge(start, end, horizon, sigma, self.rng)
            self.knowledge = self.bridge.value()

    def advance(self) -> np.ndarray:
        if self.bridge is not None:
            self.knowledge = self.bridge.advance()
        return self.knowledge

    def accuracy(self, region: int) -> np.ndarray:
        """Per-expert probability of a correct answer on 0-based ``region``."""
        rho = self.knowledge[:, region]
        return rho + (1.0 - rho) / self.n

    def predict(self, region: int, y: int) -> np.ndarray:
        """1-based predictions of every expert; consumes ``2 * n_e`` uniforms."""
        u = self.rng.random(self.n_e)
        guess = self.rng.integers(1, self.n + 1, size=self.n_e)
        return np.where(u < self.knowledge[:, region], y, guess)


class Availability:
    def __init__(self, n_e: int, init: float, sigma: float, always: bool, rng):
        self.always = always
        self.walk = ClampedWalk(np.full(n_e, init), sigma, rng)
        self.rng = rng
        self.n_e = n_e

    def sample(self) -> tuple[ExpertSet, np.ndarray]:
        if self.always:
            return ExpertSet(tuple(range(1, self.n_e + 1))), np.ones(self.n_e)
        p = self.walk.step()
        bits = self.rng.random(self.n_e) < p
        return ExpertSet(tuple(int(j) + 1 for j in np.flatnonzero(bits))), p.copy()


# oracle ----------------------------------------------------------------------


class BanditOracle:
    """Answers exactly one query for one round.

    ``reveal`` exposes the label and costs and is only permitted in
    full-information mode.
    """

    def __init__(self, n, y, expert_preds, costs, available, full_information=False, counter=None):
        self.n = n
        self._y = y
        self._preds = expert_preds
        self._costs = costs
        self._available = available
        self.full_information = full_information
        self.answered = False
        self._counter = counter

    def query(self, action: int) -> Feedback:
        if self.answered:
            raise ProtocolError("second oracle query in one round")
        self.answered = True
        if self._counter is not None:
            self._counter[0] += 1
        if action <= self.n:
            return Feedback(action, bool(action == self._y))
        j = action - self.n
        if j not in self._available:
            raise ProtocolError(f"queried unavailable expert {j}")
        return Feedback(action, bool(self._preds[j - 1] == self._y), float(self._costs[j]))

    def reveal(self) -> tuple[int, dict[int, float]]:
        if not self.full_information:
            raise ProtocolError("label revealed under bandit feedback")
        return self._y, {j: self._costs[j] for j in self._available}


@dataclass
class Round:
    """One round: the public input plus hidden, analysis-only quantities."""

    input: AugmentedInput
    y: int
    costs: dict[int, float]
    oracle: BanditOracle
    region: int  # 1-based cluster (synthetic) or label (file data)
    expert_preds: np.ndarray
    class_probs: np.ndarray  # p(x, .) over classes
    expert_expected_costs: np.ndarray  # E[c_j | x] for every expert
    availability_probs: np.ndarray


# data sources ----------------------------------------------------------------


class SyntheticClusters:
    def __init__(self, cfg: EnvironmentConfig, rng):
        self.n, self.d = cfg.n, cfg.d
        self.rng = rng
        self.R = cfg.R
        self.on_excess = cfg.on_excess
        k = cfg.d // cfg.n
        self.means = np.zeros((cfg.n, cfg.d))
        for c in range(cfg.n):
            self.means[c, c * k:(c + 1) * k] = cfg.cluster_scale / math.sqrt(k)
        self.noise = cfg.cluster_noise

    def __iter__(self):
        while True:
            c = int(self.rng.integers(self.n))
            x = self.means[c] + self.rng.uniform(-self.noise, self.noise, self.d)
            yield bound_features(FeatureVector.full(x), self.R, self.on_excess), c + 1


@dataclass
class SparseDataset:
    rows: list
    d: int
    n: int

    @property
    def count(self) -> int:
        return len(self.rows)

    def to_csr(self):
        from scipy import sparse

        indptr = np.cumsum([0] + [x.indices.size for x, _ in self.rows])
        idx = np.concatenate([x.indices for x, _ in self.rows]) if self.rows else np.zeros(0, int)
        val = np.concatenate([x.values for x, _ in self.rows]) if self.rows else np.zeros(0)
        return sparse.csr_matrix((val, idx, indptr), shape=(self.count, self.d))


_HEADER = re.compile(r"(\w+)=(\S+)")


def iter_sparse_file(path, index_base: int = 1) -> Iterator[tuple[int, int, np.ndarray, np.ndarray, dict]]:
    """Stream ``(line_no, label, indices, values, header)`` from a sparse text file.

    Format: ``label idx:val idx:val ...`` per line, indices strictly
    increasing and ``index_base``-based; ``#`` lines are comments, and
    ``key=value`` tokens in comments before the first example are header
    metadata (``d``, ``n``, ``count``).
    """
    header: dict = {}
    seen_row = False
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if not seen_row:
                    header.update(_HEADER.findall(line))
                continue
            seen_row = True
            parts = line.split()
            try:
                label = int(parts[0])
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad label {parts[0]!r}") from None
            idx = np.empty(len(parts) - 1, dtype=np.int64)
            val = np.empty(len(parts) - 1)
            for k, tok in enumerate(parts[1:]):
                i, sep, v = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    idx[k] = int(i) - index_base
                    val[k] = float(v)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: malformed feature {tok!r}") from None
            if idx.size and idx[0] < 0:
                raise DataError(f"{path}:{line_no}: feature index below base {index_base}")
            if np.any(np.diff(idx) <= 0):
                raise DataError(f"{path}:{line_no}: feature indices not strictly increasing")
            yield line_no, label, idx, val, header


def load_sparse_dataset(
    path,
    n: int | None = None,
    d: int | None = None,
    index_base: int = 1,
    R: float | None = None,
    on_excess: str = "rescale",
    max_rows: int | None = None,
) -> SparseDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = []
    header: dict = {}
    max_idx = -1
    for line_no, label, idx, val, header in iter_sparse_file(path, index_base):
        if max_rows is not None and len(raw) >= max_rows:
            break
        n_lim = n if n is not None else (int(header["n"]) if "n" in header else None)
        if label < 1 or (n_lim is not None and label > n_lim):
            raise DataError(f"{path}:{line_no}: label {label} outside 1..{n_lim if n_lim else 'n'}")
        d_lim = d if d is not None else (int(header["d"]) if "d" in header else None)
        if idx.size and d_lim is not None and idx[-1] >= d_lim:
            raise DataError(f"{path}:{line_no}: feature index {idx[-1] + index_base} exceeds d={d_lim}")
        if idx.size:
            max_idx = max(max_idx, int(idx[-1]))
        raw.append((label, idx, val))
    n_final = n if n is not None else int(header.get("n", max((r[0] for r in raw), default=2)))
    d_final = d if d is not None else int(header.get("d", max_idx + 1))
    rows = []
    for label, idx, val in raw:
        x = FeatureVector(idx, val, d_final)
        if R is not None:
            x = bound_features(x, R, on_excess)
        rows.append((x, label))
    return SparseDataset(rows, d_final, n_final)


def write_sparse_dataset(path, rows, d: int, n: int, index_base: int = 1) -> None:
    with open(path, "w") as fh:
        fh.write(f"# d={d} n={n} count={len(rows)}\n")
        for x, label in rows:
            feats = " ".join(f"{int(i) + index_base}:{float(v)!r}" for i, v in zip(x.indices, x.values))
            fh.write(f"{label} {feats}".rstrip() + "\n")


def make_text_like_dataset(
    count: int, n: int = 4, d: int = 47236, seed: int = 0, words: int = 60, topic_vocab: int = 400
) -> SparseDataset:
    """Bag-of-words rows with class-specific vocabularies, L2-normalized.

    A stand-in for topic-labelled newswire: each document mixes words from a
    shared vocabulary with words from its class's vocabulary, weighted by
    ``log(1 + count)``.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d)
    topics = [perm[c * topic_vocab:(c + 1) * topic_vocab] for c in range(n)]
    common = perm[n * topic_vocab:]
    zipf_c = 1.0 / np.arange(1, common.size + 1)
    zipf_c /= zipf_c.sum()
    zipf_t = 1.0 / np.arange(1, topic_vocab + 1)
    zipf_t /= zipf_t.sum()
    rows = []
    for _ in range(count):
        label = int(rng.integers(1, n + 1))
        k_topic = rng.binomial(words, 0.35)
        toks = np.concatenate(
            [
                rng.choice(topics[label - 1], size=k_topic, p=zipf_t),
                rng.choice(common, size=words - k_topic, p=zipf_c),
            ]
        )
        idx, cnt = np.unique(toks, return_counts=True)
        val = np.log1p(cnt.astype(np.float64))
        val /= np.linalg.norm(val)
        rows.append((FeatureVector(idx, val, d), label))
    return SparseDataset(rows, d, n)


class FileStream:
    def __init__(self, dataset: SparseDataset):
        self.dataset = dataset

    def __iter__(self):
        for x, label in self.dataset.rows:
            yield x, label


# environment -------------------------------------------------------------------


class Environment:
    """Produces rounds for one seed; single consumer.

    Components draw from independent child streams of ``seed`` so the data
    sequence does not depend on, e.g., the availability process.
    """

    def __init__(self, cfg: EnvironmentConfig, seed, horizon: int, full_information: bool = False,
                 dataset: SparseDataset | None = None):
        errs = cfg.validate()
        if errs:
            raise ConfigurationError("; ".join(errs))
        self.cfg = cfg
        self.horizon = horizon
        self.full_information = full_information
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        data_rng, noise_rng, expert_rng, avail_rng = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(4))
        if cfg.source == "synthetic":
            self.n, self.d = cfg.n, cfg.d
            self.source = SyntheticClusters(cfg, data_rng)
            self.flip = ClampedWalk(cfg.flip_init, cfg.flip_sigma, noise_rng)
        else:
            if dataset is None:
                dataset = load_sparse_dataset(
                    cfg.path, index_base=cfg.index_base, R=cfg.R, on_excess=cfg.on_excess, max_rows=cfg.max_rows
                )
            self.n, self.d = dataset.n, dataset.d
            self.source = FileStream(dataset)
            self.flip = None
        self.noise_rng = noise_rng
        self.space = LabelSpace(self.n, cfg.n_e)
        start = region_profile(cfg.regions, self.n)
        end = region_profile(cfg.end_regions, self.n) if cfg.setting == "drifting_both" else None
        self.experts = SimulatedExperts(
            self.n, start, end, cfg.drift_horizon or horizon, cfg.bridge_sigma, expert_rng
        )
        self.availability = Availability(
            cfg.n_e, cfg.availability_init, cfg.availability_sigma, cfg.setting == "fixed", avail_rng
        )
        alphas = np.broadcast_to(np.asarray(cfg.alpha, dtype=float), (cfg.n_e,))
        betas = np.broadcast_to(np.asarray(cfg.beta, dtype=float), (cfg.n_e,))
        self.costs: NormalizedCosts = normalize_costs([ExpertCost(a, b) for a, b in zip(alphas, betas)])
        self._alpha = np.array([c.alpha for c in self.costs.costs])
        self._beta = np.array([c.beta for c in self.costs.costs])
        self._iter = iter(self.source)
        self.t = 0
        self.queries = [0]

    @property
    def cost_upper(self) -> float:
        return self.costs.max_upper

    def __iter__(self):
        return self

    def __next__(self) -> Round:
        if self.t >= self.horizon:
            raise StopIteration
        x, region = next(self._iter)
        return self._make_round(x, region)

    def next_round(self) -> Round:
        return next(self)

    def _make_round(self, x: FeatureVector, region: int) -> Round:
        self.t += 1
        n = self.n
        if self.flip is not None:
            p = self.flip.step()
            p_flip = float(p[region - 1])
            y = region
            if self.noise_rng.random() < p_flip:
                y = int(self.noise_rng.integers(1, n))
                y += y >= region
            class_probs = np.full(n, p_flip / (n - 1))
            class_probs[region - 1] = 1.0 - p_flip
        else:
            y = region
            class_probs = np.zeros(n)
            class_probs[region - 1] = 1.0
        self.experts.advance()
        preds = self.experts.predict(region - 1, y)
        wrong = (preds != y).astype(np.float64)
        realized = self._alpha * wrong + self._beta
        acc = self.experts.accuracy(region - 1)
        expected = self._alpha * (1.0 - acc) + self._beta
        experts, avail_p = self.availability.sample()
        costs = {j: float(realized[j - 1]) for j in experts}
        inp = AugmentedInput(x, experts, self.t, self.space)
        all_costs = {j + 1: float(c) for j, c in enumerate(realized)}
        oracle = BanditOracle(n, y, preds, all_costs, experts, self.full_information, self.queries)
        return Round(inp, y, costs, oracle, region, preds, class_probs, expected, avail_p)


# baseline ------------------------------------------------------------------------


def class_confidence(W: WeightMatrix, inp: AugmentedInput) -> tuple[int, float]:
    """Argmax class and its softmax probability over the class scores only."""
    n = W.space.n
    x = inp.x
    sub = W.data[:n]
    s = sub[:, x.indices] @ x.values + sub[:, W.d]
    z = np.exp(s - s.max())
    k = int(np.argmax(s))
    return k + 1, float(z[k] / z.sum())


def baseline_confidence_threshold(W: WeightMatrix, inp: AugmentedInput, threshold: float, rng) -> int:
    """Predict the argmax class unless its softmax confidence is below
    ``threshold``; then defer to an available expert chosen uniformly."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError(f"threshold must lie in [0, 1], got {threshold}")
    label, conf = class_confidence(W, inp)
    avail = inp.experts.available
    if conf >= threshold or not avail:
        return label
    return inp.space.n + avail[int(rng.integers(len(avail)))]
