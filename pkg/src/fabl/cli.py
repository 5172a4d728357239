"""``fabl`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .data_io import (
    FeatureMatrix,
    atomic_write_text,
    load_dataset,
    load_features,
    load_manifest,
    load_model,
    save_features,
    save_model,
)
from .errors import FABLError
from .features import HistogramConfig, extract_matrix
from .solver import FitTrace, Hyperparams

REPORT_VERSION = 1
DEFAULT_SEED = 20170901
log = logging.getLogger("fabl")


class UsageError(Exception):
    pass


def _range_arg(text):
    if text in ("minmax", "train_minmax"):
        return None
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'minmax' or 'lo,hi'") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("range needs lo < hi")
    return (lo, hi)


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file of option defaults (flags override it)")
    p.add_argument("--output", type=Path, help="directory for reports")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="count", default=0)


def _hyper(p):
    d = Hyperparams()
    p.add_argument("--gamma1", type=float, default=d.gamma1, help="modality-group strength")
    p.add_argument("--gamma2", type=float, default=d.gamma2, help="joint-group strength")
    p.add_argument("--epsilon", type=float, default=d.epsilon)
    p.add_argument("--tol", type=float, default=d.tol)
    p.add_argument("--max-iter", type=int, default=d.max_iter)
    p.add_argument("--init-ridge", type=float, default=d.init_ridge)


def _hist(p):
    p.add_argument("--bins", type=int, default=16)
    p.add_argument("--range", dest="hist_range", type=_range_arg, default=None,
                   help="'minmax' (fit on the input set) or 'lo,hi'")
    p.add_argument("--no-normalize", action="store_true")


def _data_source(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--features", type=Path, help="feature matrix file")
    g.add_argument("--manifest", type=Path, help="dataset manifest (featurized with the model's ranges)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fabl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fabl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="featurize a dataset manifest")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="feature matrix file to write")
    _hist(p)
    p.add_argument("--ranges-from", type=Path, help="reuse histogram ranges from a feature or model file")

    p = sub.add_parser("train", help="fit a model on a feature matrix")
    _common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True, help="model file to write")
    _hyper(p)

    p = sub.add_parser("predict", help="score instances with a trained model")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    _data_source(p)
    p.add_argument("--top-k", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a model, or cross-validate with --cv")
    _common(p)
    p.add_argument("--model", type=Path)
    _data_source(p)
    p.add_argument("--cv", action="store_true", help="train and test per fold instead of using --model")
    p.add_argument("--split", default="subject_wise", help="subject_wise | kfold:K")
    p.add_argument("--ablation", action="store_true", help="with --cv: run all four regularizer settings")
    _hyper(p)

    p = sub.add_parser("bench", help="measure prediction throughput")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--random-model", metavar="D,C", help="benchmark a random model of this shape instead")
    p.add_argument("--n", type=int, default=100_000, dest="n_instances")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--manifest", type=Path, help="also time feature extraction on these sequences")

    p = sub.add_parser("inspect", help="rank joints and modalities by learned weight")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--top", type=int, default=5)
    return parser


def parse_args(argv=None):
    """Parse with precedence flags > --config file > built-in defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        if not isinstance(cfg, dict):
            parser.error(f"config {args.config} must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        known = {a.dest for a in sub._actions} - {"help", "config"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return parser, args


def _effective(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        out[k] = str(v) if isinstance(v, Path) else (list(v) if isinstance(v, tuple) else v)
    return out


def _report_path(args, name, default_dir=None) -> Path:
    base = args.output if args.output is not None else (default_dir or Path("."))
    return Path(base) / name


def _write_report(path: Path, doc: dict):
    doc = {"format_version": REPORT_VERSION, **doc}
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _hyperparams(args) -> Hyperparams:
    return Hyperparams(args.gamma1, args.gamma2, args.epsilon, args.tol, args.max_iter, args.init_ridge, args.threads)


def _existing(path, what):
    if path is None or not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _features_from_manifest(manifest_path, cfg, ranges) -> FeatureMatrix:
    manifest = load_manifest(manifest_path)
    data = load_dataset(manifest)
    X, layout, ranges = extract_matrix(data.sequences, cfg, ranges)
    return FeatureMatrix(X, data.labels, data.class_names, layout, tuple(data.subject_ids), tuple(data.ids),
                         cfg, ranges, data.body_model.name)


def _model_features(args, model) -> FeatureMatrix:
    if args.features is not None:
        return load_features(_existing(args.features, "feature file"))
    if model.hist_config is None or model.feature_ranges is None:
        raise FABLError("model has no histogram ranges; featurize with 'extract --ranges-from' first")
    fm = _features_from_manifest(_existing(args.manifest, "manifest"), model.hist_config, model.feature_ranges)
    return _align_classes(fm, model.class_names)


def _align_classes(fm: FeatureMatrix, class_names) -> FeatureMatrix:
    """Re-index labels onto the model's class list."""
    if tuple(fm.class_names) == tuple(class_names):
        return fm
    index = {n: i for i, n in enumerate(class_names)}
    missing = sorted(set(fm.class_names) - set(index))
    if missing:
        raise FABLError(f"classes {missing} are unknown to the model")
    labels = np.array([index[fm.class_names[l]] for l in fm.labels])
    return FeatureMatrix(fm.X, labels, tuple(class_names), fm.layout, fm.subject_ids, fm.ids,
                         fm.hist_config, fm.ranges, fm.body_model)


# -- subcommands --------------------------------------------------------------

def cmd_extract(args):
    cfg = HistogramConfig(args.bins, args.hist_range, not args.no_normalize)
    ranges = None
    if args.ranges_from is not None:
        src = _existing(args.ranges_from, "ranges file")
        head = src.read_bytes()[:8]
        if head == b"FABLMODL":
            m = load_model(src)
            ranges, cfg = m.feature_ranges, m.hist_config or cfg
        else:
            f = load_features(src)
            ranges, cfg = f.ranges, f.hist_config or cfg
    fm = _features_from_manifest(_existing(args.manifest, "manifest"), cfg, ranges)
    save_features(fm, args.out)
    print(f"wrote {args.out}: d={fm.layout.d} n={fm.n} classes={fm.c}")
    return 0


def cmd_train(args):
    from .evaluation import train_on

    fm = load_features(_existing(args.features, "feature file"))
    hp = _hyperparams(args)
    report_path = _report_path(args, "fit_report.json", Path(args.model).parent)
    last = {"trace": FitTrace()}

    def keep(t, W, trace):
        last["trace"] = trace

    report = {"command": "train", "config": _effective(args), "hyperparams": hp.to_dict(), "backend": kernels.BACKEND}
    if hp.unregularized:
        report["mode"] = "ridge-equivalent mode"
        print("note: gamma1 = gamma2 = 0, ridge-equivalent mode")
    try:
        model, trace = train_on(fm, hp, callback=keep)
    except FABLError as exc:
        report.update(error=f"{type(exc).__name__}: {exc}", trace=last["trace"].to_dict())
        _write_report(report_path, report)
        raise
    model = replace(model, metadata=dict(model.metadata, body_model=fm.body_model))
    save_model(model, args.model)
    report.update(
        iterations=trace.iterations,
        converged=trace.converged,
        final_objective=trace.final_objective,
        trace=trace.to_dict(),
    )
    _write_report(report_path, report)
    print(f"wrote {args.model}: iterations={trace.iterations} converged={trace.converged} "
          f"objective={trace.final_objective:.6g}")
    return 0


def cmd_predict(args):
    from .classifier import predict_batch

    model = load_model(_existing(args.model, "model file"))
    fm = _model_features(args, model)
    results = predict_batch(fm.X, model, fm.layout)
    out = []
    if args.top_k is None:
        out.append("#id\tpredicted\t" + "\t".join(model.class_names))
        for ident, sv in zip(fm.ids, results):
            out.append("\t".join([str(ident), model.class_names[sv.predicted]] + [repr(float(v)) for v in sv.scores]))
    else:
        k = max(1, min(args.top_k, model.c))
        out.append("#id\tpredicted\t" + "\t".join(f"rank{r + 1}" for r in range(k)))
        for ident, sv in zip(fm.ids, results):
            ranked = [f"{model.class_names[i]}={float(sv.scores[i])!r}" for i in sv.top_k(k)]
            out.append("\t".join([str(ident), model.class_names[sv.predicted]] + ranked))
    text = "\n".join(out) + "\n"
    if args.output is not None:
        atomic_write_text(Path(args.output) / "predictions.tsv", text)
    else:
        sys.stdout.write(text)
    return 0


def _parse_split(text, seed):
    from .evaluation import SplitSpec

    if text == "subject_wise":
        return SplitSpec("subject_wise", seed=seed)
    if text.startswith("kfold:"):
        return SplitSpec("k_fold", k=int(text.split(":", 1)[1]), seed=seed)
    raise UsageError(f"unknown --split {text!r}")


def cmd_eval(args):
    from .evaluation import ConfusionMatrix, cross_validate, evaluate, run_ablation, split

    if args.cv:
        if args.features is None:
            raise UsageError("--cv needs --features")
        fm = load_features(_existing(args.features, "feature file"))
        spec = _parse_split(args.split, args.seed)
        folds = split(fm, spec)
        hp = _hyperparams(args)
        if args.ablation:
            rep = run_ablation(fm, folds, hp, workers=args.threads)
            doc = {"command": "eval", "mode": "ablation", "config": _effective(args), **rep.to_dict()}
            summary = rep.format()
        else:
            results = cross_validate(fm, folds, hp, workers=args.threads)
            ok = [r for r in results if r.confusion is not None]
            total = ConfusionMatrix(sum(r.confusion.counts for r in ok), fm.class_names) if ok else None
            mean = float(np.mean([r.accuracy for r in ok])) if ok else None
            doc = {
                "command": "eval", "mode": "cross_validation", "config": _effective(args),
                "mean_accuracy": mean, "per_fold": [r.to_dict() for r in results],
                "pooled_confusion": None if total is None else total.to_dict(),
            }
            lines = [f"fold {r.fold}: " + ("failed " + r.error if r.error else f"{100 * r.accuracy:.2f}% "
                                           f"({r.test_size} test)") for r in results]
            lines.append("mean accuracy: " + ("n/a" if mean is None else f"{100 * mean:.2f}%"))
            if total is not None:
                lines += ["pooled confusion (rows true, cols predicted):", total.format()]
            summary = "\n".join(lines)
    else:
        if args.model is None:
            raise UsageError("eval needs --model (or --cv)")
        model = load_model(_existing(args.model, "model file"))
        fm = _align_classes(_model_features(args, model), model.class_names)
        acc, cm = evaluate(model, fm)
        doc = {"command": "eval", "mode": "model", "config": _effective(args), "accuracy": acc,
               "n": fm.n, "confusion": cm.to_dict()}
        summary = f"accuracy: {100 * acc:.2f}% on {fm.n} instances\n{cm.format()}"
    _write_report(_report_path(args, "eval_report.json"), doc)
    atomic_write_text(_report_path(args, "eval_summary.txt"), summary + "\n")
    print(summary)
    return 0


def cmd_bench(args):
    from .evaluation import benchmark_end_to_end, benchmark_throughput

    if args.model is not None:
        model = load_model(_existing(args.model, "model file"))
    elif args.random_model is not None:
        model = random_model(*(int(v) for v in args.random_model.split(",")), seed=args.seed)
    else:
        raise UsageError("bench needs --model or --random-model D,C")
    res = benchmark_throughput(model, args.n_instances, args.repeats, args.seed)
    doc = {"command": "bench", "config": _effective(args), "d": model.layout.d, "c": model.c,
           "classification": res.to_dict()}
    lines = [f"classification: {res.predictions_per_second:.4g} Hz, {res.seconds_per_observation:.3g} s/observation "
             f"(d={model.layout.d}, c={model.c}, n={res.n_instances}, backend={res.backend})"]
    if args.manifest is not None:
        data = load_dataset(load_manifest(_existing(args.manifest, "manifest")))
        e2e = benchmark_end_to_end(model, data.sequences, args.repeats)
        doc["end_to_end"] = e2e.to_dict()
        lines.append(f"end-to-end (with feature extraction): {e2e.predictions_per_second:.4g} Hz, "
                     f"{e2e.seconds_per_observation:.3g} s/observation")
    _write_report(_report_path(args, "bench_report.json"), doc)
    print("\n".join(lines))
    return 0


def random_model(d, c, seed=0, block=None):
    """A random model with a modality x joint layout of total size ``d``."""
    from .features import PartitionLayout
    from .solver import Standardizer, WeightModel

    if block is None:
        layout = PartitionLayout(((d,),))
    else:
        layout = PartitionLayout.uniform(*block)
    rng = np.random.default_rng(seed)
    return WeightModel(rng.standard_normal((layout.d, c)), rng.random(c), layout,
                       tuple(f"class{i}" for i in range(c)), Standardizer.identity(layout.d))


def cmd_inspect(args):
    from .importance import format_importance, importance_report

    model = load_model(_existing(args.model, "model file"))
    report = importance_report(model)
    _write_report(_report_path(args, "inspect_report.json", Path(args.model).parent),
                  {"command": "inspect", "config": _effective(args), **report})
    print(format_importance(report, args.top))
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    try:
        parser, args = parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 for --help/--version
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fabl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FABLError, OSError) as exc:
        print(f"fabl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
