"""Command line entry point.

Exit codes: 0 success, 1 verification failure, 2 invalid config,
3 missing or malformed data, 4 protocol violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .analysis import RunTrace, regret_report, window_columns, write_rows_csv
from .config import load_config
from .core import ConfigurationError, DataError, ProtocolError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_PROTOCOL = 0, 1, 2, 3, 4

log = logging.getLogger("onlinedefer")


def cmd_run(args) -> int:
    from .experiment import resolve_output_dir, run

    cfg = load_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    out = resolve_output_dir(cfg, args.output)
    results = run(cfg, out)
    for r in results:
        s = r.summary
        log.info("seed %d: average loss %.4f, accuracy %.4f", r.seed, s["average_loss"], s["accuracy"])
    print(out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suites, report_dict

    results = run_suites(args.suite or None, quick=args.quick)
    report = report_dict(results)
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    for r in results:
        for f in r.failures:
            print(f"FAIL {r.name}.{f.prop} (seed {f.seed}): {f.detail}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _seed_dirs(run_dir: Path) -> list[Path]:
    dirs = sorted(p for p in run_dir.glob("seed_*") if (p / "rounds.csv").exists())
    if not dirs:
        raise FileNotFoundError(f"no seed_*/rounds.csv under {run_dir}")
    return sorted(dirs, key=lambda p: int(p.name.split("_", 1)[1]))


def cmd_replay(args) -> int:
    from .experiment import aggregate_columns, aggregate_summaries, aggregate_windows

    run_dir = Path(args.run_dir)
    out = Path(args.output) if args.output else run_dir / "replay"
    out.mkdir(parents=True, exist_ok=True)
    windows, summaries, n_e = [], [], 0
    for sd in _seed_dirs(run_dir):
        tr = RunTrace.read_csv(sd / "rounds.csv")
        n_e = tr.n_e
        rep = regret_report(tr, args.window or max(1, tr.T // 200))
        seed = int(sd.name.split("_", 1)[1])
        (out / sd.name).mkdir(exist_ok=True)
        write_rows_csv(out / sd.name / "windows.csv", rep.windows, window_columns(n_e))
        summary = {"seed": seed, **rep.summary()}
        (out / sd.name / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        windows.append(rep.windows)
        summaries.append(summary)
    cols = window_columns(n_e)
    write_rows_csv(out / "aggregate.csv", aggregate_windows(windows, cols), aggregate_columns(cols))
    (out / "aggregate_summary.json").write_text(json.dumps(aggregate_summaries(summaries), indent=2, sort_keys=True) + "\n")
    print(out)
    return EXIT_OK


def cmd_export(args) -> int:
    """One long-format CSV per windowed metric: t_end, mean, std, then one column per seed."""
    from .experiment import _mean_std

    import numpy as np

    run_dir = Path(args.run_dir)
    out = Path(args.output) if args.output else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    per_seed = {}
    for sd in _seed_dirs(run_dir):
        path = sd / "windows.csv"
        if not path.exists():
            raise FileNotFoundError(path)
        with open(path, newline="") as fh:
            per_seed[sd.name] = list(csv.DictReader(fh))
    names = list(per_seed)
    count = min(len(v) for v in per_seed.values())
    metrics = [c for c in per_seed[names[0]][0] if c not in ("window", "t_start", "t_end")] if count else []
    for metric in metrics:
        with open(out / f"{metric}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_end", "mean", "std"] + names)
            for k in range(count):
                vals = [float(per_seed[s][k][metric]) for s in names]
                mean, std = _mean_std(np.array(vals))
                w.writerow([per_seed[names[0]][k]["t_end"], repr(mean), repr(std)] + [repr(v) for v in vals])
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onlinedefer", description="Online learning to defer under bandit feedback.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every seed of an experiment config")
    r.add_argument("config", help="YAML or JSON experiment config")
    r.add_argument("-o", "--output", help="run directory (default: <output root>/<output_dir>/<name>)")
    r.add_argument("-j", "--workers", type=int, help="override the number of worker processes")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the property and oracle suites")
    v.add_argument("--quick", action="store_true", help="fewer cases per suite")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    v.add_argument("--report", help="also write the JSON report here")
    v.set_defaults(func=cmd_verify)

    rp = sub.add_parser("replay", help="recompute metrics from saved per-round logs")
    rp.add_argument("run_dir")
    rp.add_argument("--window", type=int)
    rp.add_argument("-o", "--output")
    rp.set_defaults(func=cmd_replay)

    e = sub.add_parser("export-plots-data", help="write plot-ready CSVs from a run directory")
    e.add_argument("run_dir")
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
