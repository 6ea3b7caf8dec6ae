"""Command-line front end.

Every command writes fixed file names into ``--out`` and prints a one-line JSON
summary. Options resolve as: command-line flag, then ``--config`` JSON field,
then the built-in default. Exit codes: 0 success, 2 validation error, 3 runtime
or numeric error; errors are reported as JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import Dataset, PairSamplePlan, atomic_write, median_pairwise_distance, sample_pairs, train_test_split
from .data import GeneratorSpec, generate, load_csv, save_csv
from .explain import EXPLAINERS, RiseConfig, explain_batch, load_attributions, save_attributions
from .predict import ARCHS, TrainConfig, TrainingDivergedError, load_model, save_model, train
from .report import Entry, write_report
from .robustness import (
    BoundSpec,
    default_grid,
    estimate_astuteness,
    estimate_plipschitz,
    load_curve,
    predict_bound,
    save_curve,
    verify_theorem,
)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# defaults live here rather than in argparse so --config can sit between them and the flags
DEFAULTS = {
    "seed": 0,
    "out": ".",
    "kind": "orange_skin",
    "n": 10_000,
    "dim": 10,
    "data": None,
    "test": None,
    "label_column": "label",
    "arch": "mlp2",
    "epochs": 20,
    "batch_size": 100,
    "learning_rate": 0.05,
    "momentum": 0.9,
    "cap": None,
    "hidden": None,
    "model": None,
    "explainer": "shap",
    "sampled": False,
    "permutations": 2000,
    "masks": 4000,
    "inclusion_prob": 0.5,
    "attr": None,
    "profile": None,
    "p": 2.0,
    "radius": None,
    "max_pairs": 200_000,
    "L_grid": "0.1:1.0:0.1",
    "lambda_grid": "0.1:1.1:0.1",
    "entry": None,
    "n_train": 10_000,
    "n_test": 1000,
    "archs": "mlp2,linear",
    "explainers": "shap,rise,remove_individual",
    "seeds": 5,
}


def _grid(text) -> np.ndarray:
    if isinstance(text, (list, tuple)):
        return np.asarray(text, dtype=float)
    text = str(text)
    if ":" in text:
        a, b, s = (float(v) for v in text.split(":"))
        return default_grid(a, b, s)
    return np.asarray([float(v) for v in text.split(",")])


def _names(text, allowed, what) -> list:
    items = list(text) if isinstance(text, (list, tuple)) else [s.strip() for s in str(text).split(",") if s.strip()]
    bad = [s for s in items if s not in allowed]
    if bad or not items:
        raise ValueError(f"unknown {what} {bad or items}; choose from {list(allowed)}")
    return items


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("ASTUTE_JOBS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ValueError(f"ASTUTE_JOBS must be an integer, got {env!r}") from None


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ValueError(f"--{n.replace('_', '-')} is required")


def _load_data(path, label_column) -> Dataset:
    data, _ = load_csv(path, label_column)
    return data


def _plan(args, data: Dataset) -> PairSamplePlan:
    r = args.radius if args.radius is not None else median_pairwise_distance(data, args.p, seed=args.seed)
    return PairSamplePlan(radius=float(r), max_pairs=args.max_pairs, seed=args.seed)


def _train_cfg(args, synthetic: bool) -> TrainConfig:
    # width 200 for generated data, 32 for other tabular data
    hidden = args.hidden if args.hidden is not None else (200 if synthetic else 32)
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.learning_rate,
                       momentum=args.momentum, lipschitz_cap=args.cap, seed=args.seed, hidden=hidden,
                       norm_order=args.p)


def _is_generated(csv_path) -> bool:
    side = Path(str(csv_path) + ".json")
    if not side.exists():
        return False
    try:
        return json.loads(side.read_text()).get("kind") in ("orange_skin", "nonlinear_additive", "switch")
    except (json.JSONDecodeError, AttributeError):
        return False


def _explain(args, model, X, explainer, seed, jobs):
    exact = not args.sampled
    rcfg = RiseConfig(inclusion_prob=args.inclusion_prob, n_masks=args.masks, exact=exact, seed=seed)
    return explain_batch(model, X, explainer, exact=exact, n_permutations=args.permutations, rise_cfg=rcfg,
                         jobs=jobs)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


# commands


def cmd_gen(args):
    spec = GeneratorSpec(args.kind, args.n, dim=args.dim, seed=args.seed)
    data = generate(spec)
    path = Path(args.out) / "data.csv"
    save_csv(data, path, spec=spec)
    _emit({"path": str(path), "n": data.n, "dim": data.dim, "label_balance": float(data.y.mean())})


def cmd_train(args):
    _require(args, "data")
    data = _load_data(args.data, args.label_column)
    test = _load_data(args.test, args.label_column) if args.test else None
    model = train(data, args.arch, _train_cfg(args, _is_generated(args.data)), test)
    path = Path(args.out) / "model.json"
    save_model(model, path)
    _emit({"path": str(path), "arch": args.arch, "train_accuracy": model.meta["train_accuracy"],
           "test_accuracy": model.meta.get("test_accuracy")})


def cmd_explain(args):
    _require(args, "model", "data")
    model, data = load_model(args.model), _load_data(args.data, args.label_column)
    attrs = _explain(args, model, data.X, args.explainer, args.seed, _jobs(args))
    path = Path(args.out) / f"attributions_{args.explainer}.csv"
    save_attributions(attrs, path)
    _emit({"path": str(path), "n": len(attrs), "explainer": args.explainer, **attrs.meta})


def cmd_lipschitz(args):
    _require(args, "model", "data")
    model, data = load_model(args.model), _load_data(args.data, args.label_column)
    curve = estimate_plipschitz(model, data, _plan(args, data), args.p, _grid(args.L_grid),
                                subject_id=model.meta.get("arch", ""))
    path = Path(args.out) / "lipschitz.csv"
    save_curve(curve, path)
    _emit({"path": str(path), "n_pairs": curve.n_pairs, "radius": curve.radius})


def cmd_astuteness(args):
    _require(args, "attr", "data")
    attrs, data = load_attributions(args.attr), _load_data(args.data, args.label_column)
    curve = estimate_astuteness(attrs, data, _plan(args, data), args.p, _grid(args.lambda_grid))
    path = Path(args.out) / f"astuteness_{attrs.explainer_id}.csv"
    save_curve(curve, path)
    _emit({"path": str(path), "n_pairs": curve.n_pairs, "radius": curve.radius})


def cmd_bound(args):
    _require(args, "profile")
    profile = load_curve(args.profile)
    if profile.kind != "lipschitzness":
        raise ValueError(f"{args.profile} is a {profile.kind} curve, not a Lipschitzness profile")
    curve = predict_bound(profile, BoundSpec.for_explainer(args.explainer, args.dim, args.p), _grid(args.lambda_grid))
    path = Path(args.out) / f"bound_{args.explainer}.csv"
    save_curve(curve, path)
    _emit({"path": str(path), "explainer": args.explainer})


def cmd_report(args):
    if not args.entry:
        raise ValueError("report needs at least one --entry DATASET MODEL EXPLAINER EMP_CSV BOUND_CSV")
    groups: dict = {}
    for ds, model, expl, emp, pred in args.entry:
        e = groups.setdefault((ds, model, expl), Entry(ds, model, expl, [], []))
        e.emp.append(load_curve(emp))
        e.pred.append(load_curve(pred))
    lam = _grid(args.lambda_grid)
    doc = write_report(list(groups.values()), args.out, (float(lam[0]), float(lam[-1])))
    _emit({"path": str(Path(args.out) / "report.json"), "rows": len(doc["rows"])})


def cmd_verify(args):
    _require(args, "model", "data")
    model, data = load_model(args.model), _load_data(args.data, args.label_column)
    rep = verify_theorem(args.explainer, model, data, _plan(args, data), args.p)
    path = Path(args.out) / f"verify_{args.explainer}.json"
    atomic_write(path, json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    _emit({"path": str(path), **rep.to_dict()})


def cmd_pipeline(args):
    """gen -> train -> explain -> lipschitz -> astuteness -> bound -> report for one dataset."""
    archs = _names(args.archs, ARCHS, "arch")
    explainers = _names(args.explainers, EXPLAINERS, "explainer")
    if args.sampled and args.seeds < 5:
        raise ValueError("sampled explainers need seeds >= 5 for error bars")
    out = Path(args.out)
    spec = GeneratorSpec(args.kind, args.n_train + args.n_test, dim=args.dim, seed=args.seed)
    tr, te = train_test_split(generate(spec), args.n_test, args.seed)
    save_csv(tr, out / "train.csv")
    save_csv(te, out / "test.csv")
    # radius from the training split; estimates on the held-out split
    radius = median_pairwise_distance(tr, args.p, seed=args.seed) if args.radius is None else args.radius
    plan = PairSamplePlan(radius=float(radius), max_pairs=args.max_pairs, seed=args.seed)
    pairs = sample_pairs(te, plan, args.p)
    L_grid, lam = _grid(args.L_grid), _grid(args.lambda_grid)
    seeds = list(range(args.seed, args.seed + args.seeds)) if args.sampled else [args.seed]
    jobs = _jobs(args)
    entries = []
    for arch in archs:
        model = train(tr, arch, _train_cfg(args, True), te)
        save_model(model, out / f"model_{arch}.json")
        prof = estimate_plipschitz(model, te, plan, args.p, L_grid, pairs=pairs, subject_id=arch)
        save_curve(prof, out / f"lipschitz_{arch}.csv")
        for expl in explainers:
            bound = predict_bound(prof, BoundSpec.for_explainer(expl, te.dim, args.p), lam)
            save_curve(bound, out / f"bound_{arch}_{expl}.csv")
            entry = Entry(args.kind, arch, expl, [], [])
            for s in seeds:
                attrs = _explain(args, model, te.X, expl, s, jobs)
                tag = f"{arch}_{expl}" + (f"_seed{s}" if args.sampled else "")
                save_attributions(attrs, out / f"attributions_{tag}.csv")
                emp = estimate_astuteness(attrs, te, plan, args.p, lam, pairs=pairs, subject_id=f"{arch}/{expl}")
                save_curve(emp, out / f"astuteness_{tag}.csv")
                entry.emp.append(emp)
                entry.pred.append(bound)
            entries.append(entry)
    doc = write_report(entries, out / "report", (float(lam[0]), float(lam[-1])))
    _emit({"path": str(out / "report" / "report.json"), "radius": float(radius), "n_pairs": len(pairs),
           "exhaustive": pairs.exhaustive, "matrix": doc["matrix"]})


COMMANDS = {
    "gen": (cmd_gen, ["kind", "n", "dim"]),
    "train": (cmd_train, ["data", "test", "label_column", "arch", "epochs", "batch_size", "learning_rate",
                          "momentum", "cap", "hidden", "p"]),
    "explain": (cmd_explain, ["model", "data", "label_column", "explainer", "sampled", "permutations", "masks",
                              "inclusion_prob"]),
    "lipschitz": (cmd_lipschitz, ["model", "data", "label_column", "p", "radius", "max_pairs", "L_grid"]),
    "astuteness": (cmd_astuteness, ["attr", "data", "label_column", "p", "radius", "max_pairs", "lambda_grid"]),
    "bound": (cmd_bound, ["profile", "explainer", "dim", "p", "lambda_grid"]),
    "report": (cmd_report, ["entry", "lambda_grid"]),
    "verify": (cmd_verify, ["model", "data", "label_column", "explainer", "p", "radius", "max_pairs"]),
    "pipeline": (cmd_pipeline, ["kind", "dim", "n_train", "n_test", "archs", "explainers", "sampled", "seeds",
                                "permutations", "masks", "inclusion_prob", "epochs", "batch_size", "learning_rate",
                                "momentum", "cap", "hidden", "p", "radius", "max_pairs", "L_grid", "lambda_grid"]),
}

_OPTION = {
    "kind": dict(choices=["orange_skin", "nonlinear_additive", "switch"]),
    "n": dict(type=int), "dim": dict(type=int), "n_train": dict(type=int), "n_test": dict(type=int),
    "seeds": dict(type=int, help="number of seeds for sampled explainers"),
    "arch": dict(choices=list(ARCHS)), "explainer": dict(choices=list(EXPLAINERS)),
    "epochs": dict(type=int), "batch_size": dict(type=int), "hidden": dict(type=int), "max_pairs": dict(type=int),
    "permutations": dict(type=int), "masks": dict(type=int),
    "learning_rate": dict(type=float), "momentum": dict(type=float), "cap": dict(type=float),
    "p": dict(type=float, help="norm order (inf allowed)"), "radius": dict(type=float),
    "inclusion_prob": dict(type=float),
    "sampled": dict(action="store_const", const=True, help="sampled explainers instead of exact enumeration"),
    "entry": dict(nargs=5, action="append", metavar=("DATASET", "MODEL", "EXPLAINER", "EMP_CSV", "BOUND_CSV")),
    "L_grid": dict(help="start:stop:step or comma list"), "lambda_grid": dict(help="start:stop:step or comma list"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="astute", description="Explainer astuteness experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (fn, opts) in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        sp.add_argument("--config", help="JSON file of option values; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, help="worker threads (default: $ASTUTE_JOBS or 1)")
        for o in opts:
            sp.add_argument("--" + o.replace("_", "-"), dest=o, default=None, **_OPTION.get(o, {}))
        sp.set_defaults(_fn=fn, _opts=opts)
    return parser


def _resolve(args) -> argparse.Namespace:
    allowed = set(args._opts) | {"seed", "out", "jobs"}
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise ValueError(f"{args.config}: invalid JSON ({e})") from None
        if not isinstance(cfg, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise ValueError(f"unknown config keys for {args.command}: {unknown}")
    for key in allowed:
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, DEFAULTS.get(key)))
    return args


def main(argv=None) -> int:
    try:
        args = _resolve(build_parser().parse_args(argv))
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with np.errstate(over="ignore", under="ignore"):
            args._fn(args)
        return 0
    except (TrainingDivergedError, FloatingPointError, ArithmeticError, MemoryError, RuntimeError) as e:
        code = 3
        err = e
    except (ValueError, KeyError, TypeError, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        code = 2
        err = e
    msg = err.args[0] if isinstance(err, KeyError) and err.args else str(err)
    sys.stderr.write(json.dumps({"error": type(err).__name__, "message": msg, "exit_code": code}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
