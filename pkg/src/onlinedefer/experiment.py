"""Seeded experiment runs and their on-disk outputs.

Layout of a run directory (``<output root>/<config name>/``)::

    config.resolved.yaml     the fully expanded config that produced the run
    aggregate.csv            windowed metrics, mean and std over seeds
    aggregate_summary.json   scalar summaries, mean and std over seeds
    seed_<s>/rounds.csv      one row per round (see analysis.RunTrace)
    seed_<s>/windows.csv     windowed metrics for the seed
    seed_<s>/summary.json    cumulative metrics for the seed
    seed_<s>/weights.csv     final weight matrix

Floats are written with ``repr`` so identical runs give identical bytes.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from .analysis import RegretReport, RunTrace, regret_report, window_columns, write_rows_csv
from .bandit import Feedback
from .config import ExperimentConfig, save_config
from .core import AugmentedInput, ExpertSet, LabelSpace
from .environment import (
    Environment,
    SparseDataset,
    baseline_confidence_threshold,
    class_confidence,
    load_sparse_dataset,
)
from .hypothesis import WeightMatrix, save_weights_csv
from .learner import OnlineDeferralLearner, RoundLog, Schedule, hindsight_comparator
from .losses import SurrogateKind, deferral_weights, surrogate_vector

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "ONLINEDEFER_OUTPUT_ROOT"


class _LabelOracle:
    """Full-information oracle for the baseline's own classifier."""

    def __init__(self, y: int):
        self.y = y

    def query(self, action: int) -> Feedback:
        return Feedback(action, action == self.y)

    def reveal(self):
        return self.y, {}


@dataclass
class SeedResult:
    seed: int
    trace: RunTrace
    W: WeightMatrix
    report: RegretReport
    summary: dict


def make_schedule(cfg: ExperimentConfig, space: LabelSpace) -> Schedule:
    sc = cfg.schedule
    B = cfg.learner.bound if cfg.learner.bound is not None else float(space.N)
    return Schedule(
        sc.regime, space.N, B, cfg.environment.R,
        base_lr=sc.base_lr, eps=sc.eps, eta0=sc.eta0, eta_power=sc.eta_power,
        gamma0=sc.gamma0, gamma_power=sc.gamma_power, gamma_cap=sc.gamma_cap,
    )


def load_dataset(cfg: ExperimentConfig) -> Optional[SparseDataset]:
    env = cfg.environment
    if env.source != "sparse_file":
        return None
    return load_sparse_dataset(env.path, index_base=env.index_base, R=env.R, on_excess=env.on_excess,
                               max_rows=env.max_rows)


def run_seed(cfg: ExperimentConfig, seed: int, dataset: SparseDataset | None = None) -> SeedResult:
    T = cfg.horizon
    env_ss, learner_ss, baseline_ss = np.random.SeedSequence(seed).spawn(3)
    baseline = cfg.policy == "confidence_baseline"
    full = cfg.learner.feedback == "full" or baseline
    if dataset is None:
        dataset = load_dataset(cfg)
    env = Environment(cfg.environment, env_ss, T, full_information=full, dataset=dataset)
    space, d = env.space, env.d
    n, n_e = space.n, space.n_e
    kind = SurrogateKind.parse(cfg.learner.surrogate)
    sched = make_schedule(cfg, space)
    rng = np.random.Generator(np.random.PCG64(learner_ss))
    if baseline:
        cspace = LabelSpace(n, 0)
        csched = Schedule(sched.regime, cspace.N, float(cspace.N), sched.R, **_schedule_extras(sched))
        model = OnlineDeferralLearner(cspace, d, csched, rng, kind=kind, feedback="full")
        brng = np.random.Generator(np.random.PCG64(baseline_ss))
        no_experts = ExpertSet(())
    else:
        model = OnlineDeferralLearner(space, d, sched, rng, kind=kind, feedback=cfg.learner.feedback,
                                      bound=cfg.learner.bound, project_ball=cfg.learner.project_ball)

    tr = RunTrace.allocate(T, n, n_e)
    keep_x = cfg.comparator
    xs_idx, xs_val = [], []
    min_surrogate_sum = 0.0
    # the near-realizable schedule assumes s(x, y_max) >= 1 - 1/sqrt(T); only checkable with known profiles
    check_nr = sched.regime == "near_realizable" and cfg.environment.source == "synthetic"
    nr_floor, nr_violations = 1.0 - 1.0 / np.sqrt(T), 0
    k = -1
    for k, rd in enumerate(env):
        inp = rd.input
        avail = inp.experts.available
        if baseline:
            action = baseline_confidence_threshold(model.W, inp, cfg.baseline_threshold, brng)
            fb = rd.oracle.query(action)
            label, conf = class_confidence(model.W, inp)
            probs = np.zeros(inp.m)
            if conf >= cfg.baseline_threshold or not avail:
                probs[label - 1] = 1.0
            else:
                probs[n:] = 1.0 / len(avail)
            y, _ = rd.oracle.reveal()
            _, crec = model.step(AugmentedInput(inp.x, no_experts, inp.round, model.space), _LabelOracle(y))
            correct = fb.correct
            loss = float(fb.cost) if action > n else float(not correct)
            tr.greedy[k] = label
            tr.surrogate_loss[k] = np.nan
            tr.estimated_loss[k] = np.nan
            tr.gamma[k], tr.eta[k] = 0.0, crec.eta
            tr.grad_norm[k], tr.weight_norm[k] = crec.grad_norm, crec.weight_norm
        else:
            _, rec = model.step(inp, rd.oracle)
            action, correct, loss, probs = rec.action, rec.correct, rec.loss, rec.probs
            omega = deferral_weights(inp, rd.y, rd.costs)
            tr.greedy[k] = rec.greedy
            tr.surrogate_loss[k] = float(omega @ surrogate_vector(rec.scores, kind))
            tr.estimated_loss[k] = rec.estimated_loss
            tr.gamma[k], tr.eta[k] = rec.gamma, rec.eta
            tr.grad_norm[k], tr.weight_norm[k] = rec.grad_norm, rec.weight_norm
        s = np.concatenate([rd.class_probs, 1.0 - rd.expert_expected_costs[np.asarray(avail, dtype=int) - 1]])
        tr.t[k] = inp.round
        tr.action[k] = action
        tr.correct[k] = correct
        tr.loss[k] = loss
        tr.expected_loss[k] = 1.0 - float(probs @ s)
        tr.optimal_loss[k] = 1.0 - float(s.max())
        tr.y[k] = rd.y
        for j in avail:
            tr.available[k, j - 1] = True
            tr.costs[k, j - 1] = rd.costs[j]
        min_surrogate_sum += inp.m * (float(s.sum()) - float(s.max()))
        if check_nr and s.max() < nr_floor:
            nr_violations += 1
        if keep_x:
            xs_idx.append(inp.x.indices)
            xs_val.append(inp.x.values)
    done = k + 1
    truncated = done < T
    if truncated:
        logger.warning("data source exhausted after %d of %d rounds; run truncated", done, T)
        tr = tr.truncated(done)
    if env.queries[0] != done:
        raise RuntimeError(f"oracle answered {env.queries[0]} queries over {done} rounds")

    comp_losses = None
    extra = {}
    if check_nr:
        extra["near_realizable_violations"] = nr_violations
        if nr_violations:
            logger.warning("near-realizable precondition failed on %d of %d rounds", nr_violations, done)
    if keep_x and done and not baseline:
        indptr = np.cumsum([0] + [a.size for a in xs_idx])
        X = sparse.csr_matrix((np.concatenate(xs_val), np.concatenate(xs_idx), indptr), shape=(done, d))
        mask = np.concatenate([np.ones((done, n), dtype=bool), tr.available], axis=1)
        log = RoundLog(space, X, mask, tr.y.copy(), tr.costs.copy())
        comp = hindsight_comparator(log, bound=cfg.learner.bound, kind=kind, epochs=cfg.comparator_epochs)
        comp_losses = log.deferral_losses(comp.W.data)
        extra = {
            "comparator_objective": comp.objective,
            "comparator_loss": float(comp_losses.sum()),
            "minimizability_gap_estimate": comp.objective - min_surrogate_sum,
        }

    report = regret_report(tr, cfg.effective_window, comp_losses)
    summary = {"seed": seed, "policy": cfg.policy, "truncated": truncated, **report.summary(),
               "surrogate_minimum_sum": min_surrogate_sum, "final_weight_norm": model.W.frobenius, **extra}
    return SeedResult(seed, tr, model.W, report, summary)


def _schedule_extras(s: Schedule) -> dict:
    return dict(base_lr=s.base_lr, eps=s.eps, eta0=s.eta0, eta_power=s.eta_power,
                gamma0=s.gamma0, gamma_power=s.gamma_power, gamma_cap=s.gamma_cap)


def write_seed_outputs(res: SeedResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    res.trace.write_csv(out / "rounds.csv")
    write_rows_csv(out / "windows.csv", res.report.windows, window_columns(res.trace.n_e))
    (out / "summary.json").write_text(json.dumps(res.summary, indent=2, sort_keys=True) + "\n")
    save_weights_csv(res.W, out / "weights.csv")


def aggregate_windows(per_seed: list[list[dict]], columns: list[str]) -> list[dict]:
    """Mean and std (ddof=1 when there are several seeds) of each window metric."""
    count = min(len(w) for w in per_seed)
    rows = []
    metrics = [c for c in columns if c not in ("window", "t_start", "t_end")]
    for k in range(count):
        row = {"window": k, "t_start": per_seed[0][k]["t_start"], "t_end": per_seed[0][k]["t_end"]}
        for c in metrics:
            vals = np.array([w[k][c] for w in per_seed], dtype=np.float64)
            row[f"{c}_mean"], row[f"{c}_std"] = _mean_std(vals)
        rows.append(row)
    return rows


def aggregate_columns(columns: list[str]) -> list[str]:
    out = ["window", "t_start", "t_end"]
    for c in columns:
        if c not in out:
            out += [f"{c}_mean", f"{c}_std"]
    return out


def _mean_std(vals: np.ndarray) -> tuple[float, float]:
    ok = vals[~np.isnan(vals)]
    if ok.size == 0:
        return float("nan"), float("nan")
    return float(ok.mean()), float(ok.std(ddof=1)) if ok.size > 1 else 0.0


def aggregate_summaries(summaries: list[dict]) -> dict:
    out = {"seeds": [s["seed"] for s in summaries]}
    for key, v in summaries[0].items():
        if key == "seed":
            continue
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            out[key] = dict(zip(("mean", "std"), _mean_std(np.array([s[key] for s in summaries], dtype=float))))
        elif isinstance(v, list):
            arr = np.array([s[key] for s in summaries], dtype=float)
            stats = [_mean_std(arr[:, j]) for j in range(arr.shape[1])]
            out[key] = {"mean": [m for m, _ in stats], "std": [s for _, s in stats]}
    return out


def resolve_output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    """``override`` is used as the run directory as is; otherwise
    ``<output root>/<output_dir>/<name>``, where the output root comes from
    the environment variable (default: the working directory)."""
    if override:
        return Path(override)
    base = Path(cfg.output_dir)
    if not base.is_absolute():
        base = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / base
    return base / cfg.name


def _run_one(args):
    cfg, seed, dataset = args
    return run_seed(cfg, seed, dataset)


def run(cfg: ExperimentConfig, out_dir: Path | None = None) -> list[SeedResult]:
    """Run every seed and write the run directory."""
    dataset = load_dataset(cfg)
    jobs = [(cfg, s, dataset) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    if out_dir is not None:
        write_run_outputs(cfg, results, Path(out_dir))
    return results


def write_run_outputs(cfg: ExperimentConfig, results: list[SeedResult], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.resolved.yaml")
    for res in results:
        write_seed_outputs(res, out / f"seed_{res.seed}")
    cols = window_columns(results[0].trace.n_e)
    write_rows_csv(out / "aggregate.csv", aggregate_windows([r.report.windows for r in results], cols),
                   aggregate_columns(cols))
    agg = aggregate_summaries([r.summary for r in results])
    (out / "aggregate_summary.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
