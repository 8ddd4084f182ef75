"""Randomized property suites with independent oracles.

Each suite draws its instances from ``default_rng(seed + case)`` so any
failure can be reproduced from the reported case seed.  Oracles are written
as plain loops over labels, deliberately apart from the vectorized code
under test.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import analysis, bandit, hypothesis as hyp, losses
from .core import AugmentedInput, ExpertSet, FeatureVector, LabelSpace, make_label_set
from .bandit import Feedback
from .environment import BanditOracle, BrownianBridge
from .learner import OnlineDeferralLearner, Schedule


@dataclass
class Failure:
    prop: str
    seed: int
    detail: str


@dataclass
class SuiteResult:
    name: str
    cases: int
    checks: int = 0
    failures: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def fail(self, prop: str, seed: int, detail: str) -> None:
        if len(self.failures) < 20:
            self.failures.append(Failure(prop, seed, detail))

    def check(self, ok: bool, prop: str, seed: int, detail: str = "") -> None:
        self.checks += 1
        if not ok:
            self.fail(prop, seed, detail)


# random instances -----------------------------------------------------------


def random_instance(rng, n_max=6, ne_max=4, d_max=10, R=None, dense=True):
    n = int(rng.integers(2, n_max + 1))
    n_e = int(rng.integers(0, ne_max + 1))
    d = int(rng.integers(1, d_max + 1))
    space = LabelSpace(n, n_e)
    avail = tuple(int(j) + 1 for j in np.flatnonzero(rng.random(n_e) < 0.6))
    x = rng.standard_normal(d)
    if R is not None:
        x *= rng.uniform(0.0, R) / max(np.linalg.norm(x), 1e-300)
    fv = FeatureVector.full(x) if dense else FeatureVector.from_dense(x)
    inp = AugmentedInput(fv, ExpertSet(avail), 1, space)
    W = hyp.WeightMatrix(space, d, rng.standard_normal((space.N, d + 1)) * rng.uniform(0.1, 3.0))
    return space, inp, W


def random_costs(rng, inp) -> dict[int, float]:
    return {j: float(rng.random()) for j in inp.experts.available}


def _loop_scores(W, inp):
    out = []
    xd = inp.x.to_dense()
    for lab in inp.labels:
        row = W.data[lab - 1]
        out.append(sum(row[i] * xd[i] for i in range(W.d)) + row[W.d])
    return np.array(out)


def _loop_hinge_phi(h, pos):
    return sum(max(0.0, 1.0 + h[k]) for k in range(len(h)) if k != pos)


def _loop_logistic_phi(h, pos):
    top = max(h)
    return top + math.log(sum(math.exp(v - top) for v in h)) - h[pos]


def _loop_phi(h, pos, kind):
    return _loop_hinge_phi(h, pos) if kind is losses.HINGE else _loop_logistic_phi(h, pos)


def _loop_def_surrogate(h, labels, n, y, costs, kind):
    total = _loop_phi(h, labels.index(y), kind)
    for k, lab in enumerate(labels):
        if lab > n:
            total += (1.0 - costs[lab - n]) * _loop_phi(h, k, kind)
    return total


# suites ----------------------------------------------------------------------


def suite_projection(cases=10_000, seed=0) -> SuiteResult:
    res = SuiteResult("projection", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        space, inp, W = random_instance(rng)
        P = hyp.project_zero_sum(W, inp.experts)
        rows = np.asarray(make_label_set(space, inp.experts)) - 1
        others = np.setdiff1d(np.arange(space.N), rows)
        colsum = np.abs(P.data[rows].sum(axis=0)).max()
        res.check(colsum <= 1e-10, "zero_column_sums", seed + c, f"max |column sum| {colsum:.3g}")
        PP = hyp.project_zero_sum(P, inp.experts)
        res.check(np.abs(PP.data - P.data).max() <= 1e-12, "idempotence", seed + c)
        raw, proj = _loop_scores(W, inp), _loop_scores(P, inp)
        res.check(int(np.argmax(raw)) == int(np.argmax(proj)), "argmax_preserved", seed + c)
        res.check(np.array_equal(P.data[others], W.data[others]), "untouched_rows", seed + c)
        V = hyp.WeightMatrix(space, W.d, rng.standard_normal(W.data.shape))
        PV = hyp.project_zero_sum(V, inp.experts)
        dist_p = np.linalg.norm(P.data - PV.data)
        dist = np.linalg.norm(W.data - V.data)
        res.check(dist_p <= dist + 1e-12, "non_expansive", seed + c, f"{dist_p} > {dist}")
    return res


def suite_unbiasedness(cases=10_000, seed=100_000) -> SuiteResult:
    res = SuiteResult("estimator_unbiasedness", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        space, inp, W = random_instance(rng, n_max=5, ne_max=3, d_max=6)
        kind = losses.HINGE if rng.random() < 0.5 else losses.LOGISTIC
        y = int(rng.integers(1, space.n + 1))
        costs = random_costs(rng, inp)
        preds = {j: (y if rng.random() < 0.5 else 0) for j in inp.experts.available}
        dist = bandit.action_distribution(W, inp, float(rng.uniform(0.01, 1.0)))
        exp_loss, exp_grad = 0.0, np.zeros_like(W.data)
        for a, q in zip(dist.labels, dist.probs):
            if a > space.n:
                fb = Feedback(a, preds[a - space.n] == y, costs[a - space.n])
            else:
                fb = Feedback(a, a == y)
            exp_loss += q * bandit.estimated_loss(W, inp, fb, dist, kind)
            exp_grad += q * bandit.estimated_subgradient(W, inp, fb, dist, kind)
        h = _loop_scores(W, inp)
        target = _loop_def_surrogate(list(h), inp.labels, space.n, y, costs, kind)
        res.check(abs(exp_loss - target) <= 1e-9 * max(1.0, abs(target)), "loss_unbiased", seed + c,
                  f"{exp_loss} vs {target}")
        full = losses.surrogate_deferral_subgradient(W, inp, y, costs, kind)
        err = np.abs(exp_grad - full).max()
        res.check(err <= 1e-9 * max(1.0, np.abs(full).max()), "gradient_unbiased", seed + c, f"max err {err:.3g}")
    return res


def suite_gradient_norm(cases=10_000, seed=200_000) -> SuiteResult:
    res = SuiteResult("gradient_norm", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        R = float(rng.uniform(0.5, 5.0))
        space, inp, W = random_instance(rng, R=R)
        pos = int(rng.integers(inp.m))
        weights = np.zeros(inp.m)
        weights[pos] = 1.0
        h = hyp.label_scores(W, inp)
        coef = losses.surrogate_coefficients(h, weights, losses.HINGE)
        G = bandit.project_gradient(losses.rank_one_gradient(inp, coef, space.N), inp.experts, space)
        norm = np.linalg.norm(G)
        bound = math.sqrt(space.N) * math.sqrt(R * R + 1.0)
        res.check(norm <= bound + 1e-12, "norm_bound", seed + c, f"{norm} > {bound}")
        s = sum(1 for k in range(inp.m) if k != pos and 1.0 + h[k] > 0.0)
        xt = math.sqrt(inp.x.norm ** 2 + 1.0)
        ident = math.sqrt(s * (1.0 - s / inp.m)) * xt
        res.check(abs(norm - ident) <= 1e-10, "norm_identity", seed + c, f"{norm} vs {ident}")
    return res


def _random_profile_instance(rng):
    n = int(rng.integers(2, 6))
    n_e = int(rng.integers(0, 4))
    p = rng.dirichlet(np.full(n, rng.uniform(0.2, 2.0)))
    avail = tuple(int(j) + 1 for j in np.flatnonzero(rng.random(n_e) < 0.7))
    table = rng.random((len(avail), n))
    return n, n_e, p, avail, table


def suite_risk_oracles(cases=1_000, seed=300_000) -> SuiteResult:
    res = SuiteResult("risk_oracles", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        n, n_e, p, avail, table = _random_profile_instance(rng)
        space = LabelSpace(n, n_e)
        d = int(rng.integers(1, 6))
        inp = AugmentedInput(FeatureVector.full(rng.standard_normal(d)), ExpertSet(avail), 1, space)
        W = hyp.project_zero_sum(hyp.WeightMatrix(space, d, rng.standard_normal((space.N, d + 1))), inp.experts)
        prof = analysis.score_profile(p, table, avail, n)
        h = _loop_scores(W, inp)
        for kind in (losses.HINGE, losses.LOGISTIC):
            brute = 0.0
            for y in range(1, n + 1):
                costs = {j: table[k, y - 1] for k, j in enumerate(avail)}
                brute += p[y - 1] * _loop_def_surrogate(list(h), inp.labels, n, y, costs, kind)
            closed = analysis.conditional_surrogate_risk(h, prof, kind)
            res.check(abs(closed - brute) <= 1e-12 * max(1.0, abs(brute)) + 1e-12, f"surrogate_risk_{kind.value}",
                      seed + c, f"{closed} vs {brute}")
        for lab in inp.labels:
            brute = 0.0
            for y in range(1, n + 1):
                if lab <= n:
                    brute += p[y - 1] * (lab != y)
                else:
                    brute += p[y - 1] * table[avail.index(lab - n), y - 1]
            closed = analysis.conditional_deferral_risk(lab, prof)
            res.check(abs(closed - brute) <= 1e-12, "deferral_risk", seed + c, f"label {lab}: {closed} vs {brute}")
    return res


def suite_minimizability(profiles=100, samples=100_000, seed=400_000) -> SuiteResult:
    res = SuiteResult("minimizability", profiles)
    for c in range(profiles):
        rng = np.random.default_rng(seed + c)
        n, n_e, p, avail, table = _random_profile_instance(rng)
        prof = analysis.score_profile(p, table, avail, n)
        m = prof.m
        value, h_star = analysis.min_surrogate_risk_hinge(prof)
        at_star = sum(prof.s[k] * _loop_hinge_phi(h_star, k) for k in range(m))
        res.check(abs(at_star - value) <= 1e-12, "construction_attains_minimum", seed + c, f"{at_star} vs {value}")
        res.check(abs(h_star.sum()) <= 1e-12, "construction_zero_sum", seed + c)
        scale = rng.uniform(0.0, 2.0 * m, size=(samples, 1))
        H = rng.standard_normal((samples, m))
        H = H - H.mean(axis=1, keepdims=True)
        H *= scale / np.maximum(np.linalg.norm(H, axis=1, keepdims=True), 1e-300)
        # local refinement around the best random point
        best = _hinge_risks(H, prof.s).argmin()
        local = H[best] + 0.05 * rng.standard_normal((samples // 10, m))
        local -= local.mean(axis=1, keepdims=True)
        risks = np.concatenate([_hinge_risks(H, prof.s), _hinge_risks(local, prof.s)])
        worst = float(risks.min() - value)
        res.check(worst >= -1e-6, "lower_bound", seed + c, f"search beat closed form by {-worst:.3g}")
    return res


def _hinge_risks(H: np.ndarray, s: np.ndarray) -> np.ndarray:
    A = np.maximum(0.0, 1.0 + H)
    return (A.sum(axis=1, keepdims=True) - A) @ s


def suite_majorization(cases=10_000, seed=500_000) -> SuiteResult:
    res = SuiteResult("majorization", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        space, inp, W = random_instance(rng)
        W = hyp.project_zero_sum(W, inp.experts)
        y = int(rng.integers(1, space.n + 1))
        costs = random_costs(rng, inp)
        phi = losses.surrogate_deferral_loss(W, inp, y, costs)
        ell = losses.true_deferral_loss(W, inp, y, costs)
        res.check(phi >= ell - 1e-12, "surrogate_majorizes", seed + c, f"{phi} < {ell}")
    return res


def _reference_ogd(space, d, rounds, sched, B):
    """Straight-line projected OGD on the composed hinge surrogate."""
    W = [[0.0] * (d + 1) for _ in range(space.N)]
    for t, (xd, avail, y, costs) in enumerate(rounds, 1):
        labels = list(range(1, space.n + 1)) + [space.n + j for j in avail]
        xt = list(xd) + [1.0]
        raw = [sum(W[l - 1][i] * xt[i] for i in range(d + 1)) for l in labels]
        mean = sum(raw) / len(raw)
        h = [r - mean for r in raw]
        omega = [1.0 if l == y else (1.0 - costs[l - space.n] if l > space.n else 0.0) for l in labels]
        total = sum(omega)
        coef = [(total - omega[k]) if 1.0 + h[k] > 0.0 else 0.0 for k in range(len(labels))]
        cbar = sum(coef) / len(coef)
        eta = sched.eta(t)
        for k, l in enumerate(labels):
            for i in range(d + 1):
                W[l - 1][i] -= eta * (coef[k] - cbar) * xt[i]
        norm = math.sqrt(sum(v * v for row in W for v in row))
        if norm > B:
            W = [[v * B / norm for v in row] for row in W]
    return np.array(W)


def suite_full_information(cases=5, rounds=100, seed=600_000) -> SuiteResult:
    res = SuiteResult("full_information_equivalence", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        n, n_e, d = int(rng.integers(2, 5)), int(rng.integers(0, 4)), int(rng.integers(1, 6))
        space = LabelSpace(n, n_e)
        data = []
        for _ in range(rounds):
            x = rng.standard_normal(d)
            avail = tuple(int(j) + 1 for j in np.flatnonzero(rng.random(n_e) < 0.6))
            data.append((x, avail, int(rng.integers(1, n + 1)), {j: float(rng.random()) for j in avail}))
        sched = Schedule("general", space.N, float(space.N), 3.0)
        learner = OnlineDeferralLearner(space, d, sched, np.random.default_rng(0), feedback="full")
        for t, (x, avail, y, costs) in enumerate(data, 1):
            inp = AugmentedInput(FeatureVector.full(x), ExpertSet(avail), t, space)
            preds = np.array([y if j in avail and costs[j] < 0.5 else 0 for j in range(1, n_e + 1)])
            all_costs = {j: costs.get(j, 1.0) for j in range(1, n_e + 1)}
            learner.step(inp, BanditOracle(n, y, preds, all_costs, ExpertSet(avail), full_information=True))
        ref = _reference_ogd(space, d, data, sched, float(space.N))
        err = float(np.abs(learner.W.data - ref).max())
        res.check(err <= 1e-9, "iterates_match_reference", seed + c, f"max entry error {err:.3g}")
    return res


def suite_calibration(cases=10_000, seed=700_000) -> SuiteResult:
    res = SuiteResult("hinge_calibration", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        n, n_e, p, avail, table = _random_profile_instance(rng)
        prof = analysis.score_profile(p, table, avail, n)
        h = rng.standard_normal(prof.m) * rng.uniform(0.1, 3.0)
        h -= h.mean()
        gamma = float(rng.random())
        q = bandit.mixed_probabilities(prof.m, int(np.argmax(h)), gamma)
        det_gap, phi_gap = analysis.calibration_gaps(prof.labels[int(np.argmax(h))], h, prof)
        mix_gap, _ = analysis.calibration_gaps(q, h, prof)
        c_pen = analysis.exploration_penalty_constant(float(table.max()) if table.size else 0.0)
        res.check(det_gap <= phi_gap + 1e-12, "deterministic_gap_bound", seed + c, f"{det_gap} > {phi_gap}")
        res.check(mix_gap <= phi_gap + c_pen * gamma + 1e-12, "randomized_gap_bound", seed + c,
                  f"{mix_gap} > {phi_gap} + {c_pen}*{gamma}")
    return res


def suite_bridge(cases=200, seed=800_000) -> SuiteResult:
    res = SuiteResult("bridge_pinning", cases)
    for c in range(cases):
        rng = np.random.default_rng(seed + c)
        k = int(rng.integers(1, 5))
        start, end = rng.random(k), rng.random(k)
        H = int(rng.integers(1, 200))
        br = BrownianBridge(start, end, H, float(rng.uniform(0, 0.5)), rng)
        res.check(np.array_equal(br.value(), np.clip(start, 0, 1)), "start_pinned", seed + c)
        vals = [br.advance() for _ in range(H)]
        res.check(np.allclose(vals[-1], end, atol=1e-12), "end_pinned", seed + c, f"{vals[-1]} vs {end}")
        res.check(all(np.all((v >= 0) & (v <= 1)) for v in vals), "clamped", seed + c)
    return res


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "projection": suite_projection,
    "estimator_unbiasedness": suite_unbiasedness,
    "gradient_norm": suite_gradient_norm,
    "risk_oracles": suite_risk_oracles,
    "minimizability": suite_minimizability,
    "majorization": suite_majorization,
    "full_information_equivalence": suite_full_information,
    "hinge_calibration": suite_calibration,
    "bridge_pinning": suite_bridge,
}

QUICK = {
    "projection": dict(cases=1000),
    "estimator_unbiasedness": dict(cases=1000),
    "gradient_norm": dict(cases=1000),
    "risk_oracles": dict(cases=300),
    "minimizability": dict(profiles=20, samples=20_000),
    "majorization": dict(cases=1000),
    "full_information_equivalence": dict(cases=2),
    "hinge_calibration": dict(cases=1000),
    "bridge_pinning": dict(cases=50),
}


def run_suites(names=None, quick: bool = False) -> list[SuiteResult]:
    out = []
    for name in names or SUITES:
        kwargs = QUICK[name] if quick else {}
        t0 = time.perf_counter()
        r = SUITES[name](**kwargs)
        r.seconds = time.perf_counter() - t0
        out.append(r)
    return out


def report_dict(results: list[SuiteResult]) -> dict:
    return {
        "passed": all(r.passed for r in results),
        "suites": [
            {
                "name": r.name,
                "passed": r.passed,
                "cases": r.cases,
                "checks": r.checks,
                "seconds": round(r.seconds, 3),
                "failures": [asdict(f) for f in r.failures],
            }
            for r in results
        ],
    }


def report_json(results: list[SuiteResult]) -> str:
    return json.dumps(report_dict(results), indent=2)
