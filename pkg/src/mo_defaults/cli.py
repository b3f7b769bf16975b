"""Command-line front end.

Exit codes: 0 on success, 1 when a computation fails, 2 for usage errors.
Every command writes its outputs plus a ``manifest.json`` into ``--out``
(default: ``$MO_DEFAULTS_OUTPUT_DIR/<command>`` or ``runs/<command>``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    improvement_by_task,
    ks_by_task,
    rank_correlation_matrix,
    rank_table,
)
from .eval_store import CorpusError, EvaluationCorpus, fit_standardizer, is_default_config, load_evaluations, write_corpus
from .forecast import (
    ActualSet,
    ForecastQuantileSet,
    InfeasibleBudget,
    average_quantile_ensemble,
    constrained_ensemble_select,
    ncrps,
    write_ensemble,
)
from .selector import METHODS, loocv, pareto_select, prefix_hv_errors
from .surrogate import TrainConfig, make_predictor, nonparametric_baseline, train_surrogate
from .synthetic import SyntheticSpec, make_synthetic_corpus

logger = logging.getLogger("mo_defaults")

OUTPUT_ENV = "MO_DEFAULTS_OUTPUT_DIR"


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ENV, "runs")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, corpus: EvaluationCorpus | None, outputs: list[str], extra=None) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    manifest = {
        "command": args.command,
        "config": config,
        "version": __version__,
        "corpus_fingerprint": corpus.fingerprint() if corpus is not None else None,
        "created": datetime.now(timezone.utc).isoformat(),
        "outputs": outputs,
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _load(args) -> EvaluationCorpus:
    path = Path(args.corpus)
    if not path.is_file():
        raise UsageError(f"corpus file not found: {path}")
    objectives = [o.strip() for o in args.objectives.split(",") if o.strip()]
    try:
        return load_evaluations(path, objectives, maximize=args.maximize or ())
    except CorpusError as exc:
        raise UsageError(str(exc)) from None


def _train_config(args, seed: int | None = None) -> TrainConfig:
    return TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs, weight_decay=args.weight_decay,
                       seed=args.seed if seed is None else seed, mode=args.mode)


def cmd_select(args) -> int:
    corpus = _load(args)
    if args.num_defaults <= 0:
        raise UsageError("--num-defaults must be positive")
    train = corpus
    if args.exclude_task:
        if args.exclude_task not in corpus.tasks:
            raise UsageError(f"unknown task {args.exclude_task!r}")
        if len(corpus.tasks) < 2:
            raise UsageError("cannot exclude the only task")
        train = corpus.drop_task(args.exclude_task)
    candidates = corpus.configs()
    result = pareto_select(train, candidates, args.num_defaults, _train_config(args))
    hv = None
    if args.exclude_task:
        hv = prefix_hv_errors(result.configs, *corpus.task_table(args.exclude_task))
    out = _out_dir(args)
    with (out / "defaults.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        header = ["rank", "id", "label", "model_name", *[f"pred_{o}" for o in corpus.objective_names]]
        w.writerow(header + (["hv_error"] if hv is not None else []))
        for i, (c, s) in enumerate(zip(result.configs, result.scores)):
            row = [i + 1, c.slug(), c.label(), c.model_name, *[repr(float(v)) for v in s]]
            w.writerow(row + ([repr(hv[i])] if hv is not None else []))
    _write_manifest(out, args, corpus, ["defaults.csv"])
    print(f"wrote {len(result.configs)} defaults to {out / 'defaults.csv'}")
    return 0


def cmd_loocv(args) -> int:
    corpus = _load(args)
    if len(corpus.tasks) < 2:
        raise UsageError("leave-one-out needs at least two tasks")
    seeds = list(range(args.seed, args.seed + args.seeds))
    result = loocv(corpus, args.method, args.num_defaults, seeds, _train_config(args))
    out = _out_dir(args)
    result.write(out)
    _write_manifest(out, args, corpus, ["curves.csv", "summary.json"])
    print(f"{args.method}: mean hv error at n={args.num_defaults}: {result.mean_curve[-1]:.4f}")
    return 0


def _budget(text: str) -> float | None:
    if text.lower() in ("none", "inf", ""):
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid budget {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("budget must be nonnegative")
    return value


def cmd_ensemble(args) -> int:
    corpus = _load(args)
    if "latency" not in corpus.objective_names or "ncrps" not in corpus.objective_names:
        raise UsageError("ensembles need 'ncrps' and 'latency' objectives")
    train = corpus
    if args.exclude_task:
        if args.exclude_task not in corpus.tasks:
            raise UsageError(f"unknown task {args.exclude_task!r}")
        train = corpus.drop_task(args.exclude_task)
    candidates = train.configs()
    k_err, k_lat = train.objective_index("ncrps"), train.objective_index("latency")
    if args.predictor == "mean":
        predicted = nonparametric_baseline(train, "mean-value")(candidates)[:, k_err]
    else:
        single = train.select_objectives(["ncrps"])
        std = fit_standardizer(single)
        predicted = make_predictor(train_surrogate(single, _train_config(args), std), single.schema, std)(candidates)[:, 0]
    latency_ms = nonparametric_baseline(train, "mean-value")(candidates)[:, k_lat] * 1000.0
    triples = list(zip(candidates, predicted.tolist(), latency_ms.tolist()))
    spec = constrained_ensemble_select(triples, args.budget_ms, args.max_members)
    extra = {"latency_unit": "ms", "predictor": args.predictor}
    if args.forecast_dir:
        fdir = Path(args.forecast_dir)
        members = []
        for c in spec.members:
            path = fdir / f"{c.slug()}.csv"
            if not path.is_file():
                raise FileNotFoundError(f"missing forecast file for {c.label()}: {path}")
            members.append(ForecastQuantileSet.from_csv(path))
        ens = average_quantile_ensemble(members)
        extra["rearranged_quantiles"] = sum(m.rearranged for m in members) + ens.rearranged
        if args.actuals:
            extra["ncrps"] = ncrps(ens, ActualSet.from_csv(args.actuals))
    out = _out_dir(args)
    write_ensemble(spec, out / "ensemble.json", extra)
    _write_manifest(out, args, corpus, ["ensemble.json"])
    print(f"ensemble with {len(spec.members)} members, total latency {spec.total_latency:.4g} ms")
    return 0


def cmd_analyze(args) -> int:
    corpus = _load(args)
    out = _out_dir(args)
    objective = args.objective
    if args.mode == "ks":
        records = ks_by_task(corpus, objective)
        (out / "ks.json").write_text(json.dumps(records, indent=2) + "\n")
        outputs = ["ks.json"]
    elif args.mode == "improvement":
        records = improvement_by_task(corpus, objective)
        with (out / "improvement.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "n_configs", "log10_n_configs", "relative_improvement"])
            for r in records:
                w.writerow([r["task"], r["n_configs"], repr(float(np.log10(r["n_configs"]))),
                            repr(r["relative_improvement"])])
        outputs = ["improvement.csv"]
    else:
        flt = is_default_config if args.configs == "default" else (lambda c: True)
        table = rank_table(corpus, objective, flt)
        if args.mode == "ranks":
            with (out / "ranks.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["task", *table.methods])
                for task, row in zip(table.tasks, table.ranks):
                    w.writerow([task, *map(repr, row.tolist())])
            with (out / "rank_summary.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["method", "mean_rank", "std_rank"])
                for i in np.argsort(table.mean, kind="stable"):
                    w.writerow([table.methods[i], repr(float(table.mean[i])), repr(float(table.std[i]))])
            outputs = ["ranks.csv", "rank_summary.csv"]
        else:
            corr = rank_correlation_matrix(table)
            with (out / "corr.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["task", *table.tasks])
                for task, row in zip(table.tasks, corr):
                    w.writerow([task, *("" if np.isnan(v) else repr(float(v)) for v in row)])
            outputs = ["corr.csv"]
    _write_manifest(out, args, corpus, outputs)
    print(f"wrote {', '.join(outputs)} to {out}")
    return 0


def _read_curves(path: Path) -> dict[tuple[str, int], dict[int, list[float]]]:
    # (method, seed) -> n -> per-fold errors
    acc: dict[tuple[str, int], dict[int, list[float]]] = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], int(row["seed"]))
            acc.setdefault(key, {}).setdefault(int(row["n"]), []).append(float(row["hv_error"]))
    return acc


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise UsageError(f"run directory not found: {run_dir}")
    manifests = sorted(run_dir.rglob("manifest.json"))
    runs, curves = [], {}
    for mpath in manifests:
        try:
            manifest = json.loads(mpath.read_text())
            command = manifest["command"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValueError(f"corrupt manifest {mpath}: {exc}") from None
        if command != "loocv":
            continue
        cpath = mpath.parent / "curves.csv"
        if not cpath.is_file():
            raise ValueError(f"manifest {mpath} references missing curves.csv")
        runs.append({"path": str(mpath.parent.relative_to(run_dir)), "config": manifest.get("config", {}),
                     "corpus_fingerprint": manifest.get("corpus_fingerprint")})
        for (method, seed), by_n in _read_curves(cpath).items():
            curves[(method, seed, len(runs))] = by_n
    if not runs:
        raise ValueError(f"no loocv manifests under {run_dir}")
    methods: dict[str, dict] = {}
    for method in sorted({m for m, _, _ in curves}):
        per_seed = [by_n for (m, _, _), by_n in curves.items() if m == method]
        ns = sorted(set.intersection(*(set(b) for b in per_seed)))
        mat = np.array([[np.mean(b[n]) for n in ns] for b in per_seed])
        methods[method] = {"n": ns, "mean": mat.mean(axis=0).tolist(), "std": mat.std(axis=0).tolist(),
                           "n_curves": len(per_seed)}
    report = {"runs": runs, "methods": methods}
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    with (out / "report.tsv").open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["method", "n", "mean_hv_error", "std_hv_error", "n_curves"])
        for method, entry in methods.items():
            for n, mu, sd in zip(entry["n"], entry["mean"], entry["std"]):
                w.writerow([method, n, repr(mu), repr(sd), entry["n_curves"]])
    print(f"merged {len(runs)} run(s) into {out / 'report.json'}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(n_tasks=args.tasks, n_configs=args.configs, n_seeds=args.seeds, seed=args.seed)
    corpus = make_synthetic_corpus(spec)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, path)
    print(f"wrote {len(corpus.records)} rows ({len(corpus.tasks)} tasks) to {path}")
    return 0


def _add_corpus_args(p: argparse.ArgumentParser, objectives: str = "ncrps,latency") -> None:
    p.add_argument("corpus", help="evaluation table (.csv or .jsonl)")
    p.add_argument("--objectives", default=objectives, help="comma-separated metric names, all minimized")
    p.add_argument("--maximize", action="append", help="metric to negate at load time (repeatable)")
    p.add_argument("--out", help="output directory")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    p.add_argument("--mode", choices=["listwise-discounted", "listwise-plain", "regression"],
                   default=TrainConfig.mode)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mo-defaults", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="propose multi-objective defaults")
    _add_corpus_args(p)
    _add_train_args(p)
    p.add_argument("--num-defaults", type=int, default=10)
    p.add_argument("--exclude-task", help="hold out this task and score the defaults on it")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("loocv", help="leave-one-task-out hypervolume-error curves")
    _add_corpus_args(p)
    _add_train_args(p)
    p.add_argument("--method", choices=[m for m in METHODS if m != "oracle"], default="pareto")
    p.add_argument("--num-defaults", type=int, default=10)
    p.add_argument("--seeds", type=int, default=5, help="number of repetitions, starting at --seed")
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("ensemble", help="latency-constrained ensemble")
    _add_corpus_args(p)
    _add_train_args(p)
    p.add_argument("--budget-ms", type=_budget, default=None, help="latency budget in ms, or 'none'")
    p.add_argument("--max-members", type=int, default=10)
    p.add_argument("--predictor", choices=["surrogate", "mean"], default="surrogate")
    p.add_argument("--exclude-task")
    p.add_argument("--forecast-dir", help="directory with <config id>.csv decile forecasts")
    p.add_argument("--actuals", help="actuals CSV used to score the ensemble")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("analyze", help="statistical comparisons")
    _add_corpus_args(p, objectives="ncrps")
    p.add_argument("--mode", choices=["ks", "improvement", "ranks", "corr"], required=True)
    p.add_argument("--objective", default="ncrps")
    p.add_argument("--configs", choices=["default", "all"], default="default",
                   help="rank default deep-learning configs only, or every config")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="merge loocv runs into one summary")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write the bundled synthetic corpus")
    p.add_argument("output")
    p.add_argument("--tasks", type=int, default=12)
    p.add_argument("--configs", type=int, default=60)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleBudget as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
