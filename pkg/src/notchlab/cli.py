"""Command-line entry point.

Every subcommand prints its resolved seed and configuration, writes CSV
reports (plus PNG figures) into ``--out-dir`` and exits 0 on success, 1 on
data errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, analysis, modelio, plotting, synth
from ._parallel import ENV_THREADS, n_threads
from .data import DataError, default_schema, grouped_kfold, read_csv, stratified_kfold, write_csv
from .evaluate import PANELS, FoldError, cross_validate, render_csv, render_table
from .models import KINDS, make_spec

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2
PANEL_CHOICES = {"both": (True, False), "with": (True,), "without": (False,)}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing

def _parse_params(items) -> dict:
    """``key=value`` pairs; values are parsed as JSON where possible."""
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def _common(p, data=True, model=True, folds=True):
    if data:
        p.add_argument("--data", required=True, help="portfolio CSV")
        p.add_argument("--industries", type=int, default=24, help="industry levels in the schema")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".", help="directory for reports and figures")
    p.add_argument("--threads", type=int, default=None, help=f"worker cap (default ${ENV_THREADS} or all cores)")
    if model:
        p.add_argument("--model", choices=KINDS, default="forest")
        p.add_argument("--param", action="append", metavar="KEY=VALUE",
                       help="model hyperparameter override, repeatable (e.g. n_trees=100 or forest.n_trees=100)")
    if folds:
        p.add_argument("--k", type=int, default=5, help="number of folds")
        p.add_argument("--group-by-customer", action="store_true",
                       help="keep every customer's records in one fold")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="notchlab", description="Predict a loan manager's final risk rating.")
    ap.add_argument("--version", action="version", version=f"notchlab {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic portfolio and its ground truth")
    p.add_argument("--n", type=int, default=37449)
    p.add_argument("--out", required=True, help="portfolio CSV path")
    p.add_argument("--managers", type=int, default=328)
    p.add_argument("--industries", type=int, default=24)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="generator setting override")
    _common(p, data=False, model=False, folds=False)

    p = sub.add_parser("cv", help="k-fold CV on both panels; writes report.csv")
    _common(p)
    p.add_argument("--models", default=None, help="comma list of models instead of --model")

    p = sub.add_parser("confusion", help="pooled CV confusion matrices")
    _common(p)
    p.add_argument("--panel", choices=PANEL_CHOICES, default="both")

    p = sub.add_parser("importance", help="forest Gini importance ranking")
    _common(p, model=False, folds=False)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="forest setting override")
    p.add_argument("--panel", choices=PANEL_CHOICES, default="both")

    p = sub.add_parser("increment", help="accuracy gained by each variable group")
    _common(p, model=False)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="forest setting override")
    p.add_argument("--panel", choices=PANEL_CHOICES, default="both")

    p = sub.add_parser("heterogeneity", help="regress CV absolute errors on group dummies")
    _common(p)
    p.add_argument("--by", choices=("manager", "industry", "year"), required=True)
    p.add_argument("--panel", choices=("with", "without"), default="with")

    p = sub.add_parser("per-year", help="separate k-fold CV inside each year")
    _common(p)
    p.add_argument("--panel", choices=PANEL_CHOICES, default="with")

    p = sub.add_parser("fit", help="fit one model on all records and save it")
    _common(p, folds=False)
    p.add_argument("--panel", choices=("with", "without"), default="with")
    p.add_argument("--out", required=True, help="model file path")

    p = sub.add_parser("predict", help="predict ratings with a saved model")
    _common(p, model=False, folds=False)
    p.add_argument("--model-file", required=True)
    p.add_argument("--out", default=None, help="predictions CSV (default OUT_DIR/predictions.csv)")
    return ap


# ----------------------------------------------------------------- helpers

def _announce(args, extra=None):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    if extra:
        cfg.update(extra)
    cfg["threads_resolved"] = n_threads(args.threads)
    print(f"seed={args.seed}")
    print("config=" + json.dumps(cfg, sort_keys=True, default=str))


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    if d.exists() and not d.is_dir():
        raise DataError(f"--out-dir {d} is not a directory")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _check_input(path, what="--data"):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what}: no such file {p}")
    return p


def _load(args):
    path = _check_input(args.data)
    return read_csv(path, default_schema(args.industries))


def _folds(args, ds):
    if args.k < 2:
        raise UsageError("--k must be >= 2")
    return grouped_kfold(ds, args.k, args.seed) if args.group_by_customer else stratified_kfold(ds, args.k, args.seed)


def _spec(kind, params):
    """``params`` keys are either plain or prefixed ``kind.key``; prefixed keys
    only reach the named model."""
    own = {}
    for key, v in params.items():
        head, dot, tail = key.partition(".")
        if not dot:
            own[key] = v
        elif head == kind:
            own[tail] = v
        elif head not in KINDS:
            raise UsageError(f"--param {key}: unknown model prefix {head!r}")
    try:
        return make_spec(kind, **own)
    except TypeError as exc:
        raise UsageError(f"bad --param for {kind}: {exc}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write(path: Path, text: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {path}")


def _spec_config(spec) -> dict:
    if dataclasses.is_dataclass(spec):
        return {k: (dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v)
                for k, v in ((f.name, getattr(spec, f.name)) for f in dataclasses.fields(spec))
                if k != "selected"}
    return {}


# ---------------------------------------------------------------- commands

def cmd_generate(args):
    params = _parse_params(args.param)
    try:
        cfg = synth.GeneratorConfig(n=args.n, seed=args.seed, n_managers=args.managers,
                                    n_industries=args.industries, **params)
    except TypeError as exc:
        raise UsageError(f"bad --param: {exc}") from None
    _announce(args, {"generator": dataclasses.asdict(cfg)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds, truth = synth.generate(cfg, default_schema(args.industries))
    write_csv(ds, out)
    print(f"wrote {out}")
    rec = out.with_name("ground_truth.csv")
    mgr = out.with_name("ground_truth_managers.csv")
    synth.write_ground_truth(truth, rec, mgr)
    print(f"wrote {rec}\nwrote {mgr}")
    l1s, l1m = truth.calibration
    print(f"calibration L1: scorecard={l1s:.6f} manager={l1m:.6f}")


def cmd_cv(args):
    ds = _load(args)
    kinds = [k.strip() for k in args.models.split(",")] if args.models else [args.model]
    for k in kinds:
        if k not in KINDS:
            raise UsageError(f"unknown model {k!r}; expected one of {', '.join(KINDS)}")
    params = _parse_params(args.param)
    specs = [_spec(k, params) for k in kinds]
    _announce(args, {"models": {s.name: _spec_config(s) for s in specs}})
    folds = _folds(args, ds)
    out = _out_dir(args)
    reports = []
    for spec in specs:
        for inc in (True, False):
            reports.append(cross_validate(ds, spec, folds, inc, args.seed, args.threads))
    _write(out / "report.csv", render_csv(reports))
    _write(out / "report.txt", render_table(reports))
    plotting.accuracy_bars(reports, out / "report.png")
    print(f"wrote {out / 'report.png'}")
    print(render_table(reports), end="")


def cmd_confusion(args):
    ds = _load(args)
    spec = _spec(args.model, _parse_params(args.param))
    _announce(args, {"model_config": _spec_config(spec)})
    folds = _folds(args, ds)
    out = _out_dir(args)
    for inc in PANEL_CHOICES[args.panel]:
        rep = cross_validate(ds, spec, folds, inc, args.seed, args.threads)
        stem = f"confusion_{args.model}_{PANELS[inc]}"
        _write(out / f"{stem}.csv", rep.confusion.to_csv())
        _write(out / f"{stem}.txt", rep.confusion.render())
        plotting.confusion_heatmap(rep.confusion, out / f"{stem}.png", f"{args.model}, {PANELS[inc]}")
        print(f"wrote {out / (stem + '.png')}")


def cmd_importance(args):
    ds = _load(args)
    spec = _spec("forest", _parse_params(args.param))
    _announce(args, {"model_config": _spec_config(spec)})
    out = _out_dir(args)
    reports, parts = {}, []
    for inc in PANEL_CHOICES[args.panel]:
        fitted = spec.fit(ds, ds.schema.predictors(include_scorecard=inc), args.seed, args.threads)
        rep = analysis.importance_report(fitted.model, ds.schema)
        reports[PANELS[inc]] = rep
        parts.append(rep.to_csv(PANELS[inc]))
    text = parts[0] + "".join(p.split("\n", 1)[1] for p in parts[1:])
    _write(out / "importance.csv", text)
    plotting.importance_bars(reports, out / "importance.png")
    print(f"wrote {out / 'importance.png'}")


def cmd_increment(args):
    ds = _load(args)
    spec = _spec("forest", _parse_params(args.param))
    _announce(args, {"model_config": _spec_config(spec)})
    folds = _folds(args, ds)
    out = _out_dir(args)
    rows = analysis.group_increment(ds, spec, folds, PANEL_CHOICES[args.panel], args.seed, args.threads)
    _write(out / "group_increment.csv", analysis.increments_csv(rows))
    plotting.increment_bars(rows, out / "group_increment.png")
    print(f"wrote {out / 'group_increment.png'}")


def cmd_heterogeneity(args):
    ds = _load(args)
    spec = _spec(args.model, _parse_params(args.param))
    _announce(args, {"model_config": _spec_config(spec)})
    folds = _folds(args, ds)
    out = _out_dir(args)
    rep = cross_validate(ds, spec, folds, args.panel == "with", args.seed, args.threads)
    if args.by == "manager":
        groups, labels = ds.manager_id, None
    elif args.by == "industry":
        col = ds.schema.column("industry")
        groups, labels = np.array(col.levels)[ds["industry"]], list(col.levels)
    else:
        groups, labels = ds.year, None
    try:
        res = analysis.heterogeneity(rep.per_record_abs_error, groups, labels)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _write(out / f"heterogeneity_{args.by}.csv", res.to_csv())
    _write(out / f"heterogeneity_{args.by}_summary.csv", res.summary_csv())
    plotting.heterogeneity_plot(res, out / f"heterogeneity_{args.by}.png", args.by)
    print(f"wrote {out / f'heterogeneity_{args.by}.png'}")
    s = res.summary()
    print(f"{res.n_groups} {args.by} groups; significant at 5%: {s['significant_5pct']} "
          f"(+{s['positive_5pct']} / -{s['negative_5pct']})")


def cmd_per_year(args):
    ds = _load(args)
    spec = _spec(args.model, _parse_params(args.param))
    _announce(args, {"model_config": _spec_config(spec)})
    if args.k < 2:
        raise UsageError("--k must be >= 2")
    out = _out_dir(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = analysis.per_year_eval(ds, spec, args.k, args.seed, PANEL_CHOICES[args.panel],
                                      args.threads, args.group_by_customer)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not rows:
        raise DataError(f"no year has at least k={args.k} records")
    _write(out / "per_year.csv", analysis.per_year_csv(rows))
    plotting.per_year_plot(rows, out / "per_year.png")
    print(f"wrote {out / 'per_year.png'}")


def cmd_fit(args):
    ds = _load(args)
    spec = _spec(args.model, _parse_params(args.param))
    _announce(args, {"model_config": _spec_config(spec)})
    fitted = spec.fit(ds, ds.schema.predictors(include_scorecard=args.panel == "with"), args.seed, args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    modelio.save(fitted, out)
    print(f"wrote {out}")


def cmd_predict(args):
    _check_input(args.model_file, "--model-file")
    ds = _load(args)
    _announce(args)
    fitted = modelio.load(args.model_file, ds.schema.fingerprint())
    pred = fitted.predict(ds)
    out = Path(args.out) if args.out else _out_dir(args) / "predictions.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["record,manager_id,customer_id,year,predicted_rating"]
    lines += [f"{i + 1},{ds.manager_id[i]},{ds.customer_id[i]},{ds.year[i]},{int(p)}" for i, p in enumerate(pred)]
    _write(out, "\n".join(lines) + "\n")


COMMANDS = {
    "generate": cmd_generate, "cv": cmd_cv, "confusion": cmd_confusion, "importance": cmd_importance,
    "increment": cmd_increment, "heterogeneity": cmd_heterogeneity, "per-year": cmd_per_year,
    "fit": cmd_fit, "predict": cmd_predict,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        parser.print_usage(sys.stderr)
        print("notchlab: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.threads is None and os.environ.get(ENV_THREADS):
        try:
            int(os.environ[ENV_THREADS])
        except ValueError:
            print(f"notchlab: error: {ENV_THREADS} must be an integer", file=sys.stderr)
            return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"notchlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FoldError, synth.CalibrationError, OSError) as exc:
        print(f"notchlab: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))
