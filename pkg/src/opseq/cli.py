"""Command-line entry point: ``opseq <subcommand> ...``.

Subcommands chain the library end to end::

    synth / ingest -> featurize -> train -> eval
    sweep-ngram, compare, gradcheck, pipeline (all stages into one run directory)

Errors print a single ``ERROR:<code>:<message>`` line on stderr and exit 1.
"""
import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .errors import OpseqError, UsageError
from .eval import (aggregate_runs, anova_oneway, build_report, confusion,
                   read_report, write_report)
from .features import (DEFAULT_MAX_TERMS, build_vocabulary, featurize,
                       fit_standardizer, read_features, read_vocabulary,
                       write_features, write_vocabulary)
from .ngram import DEFAULT_N
from .nn import ModelConfig, load_checkpoint, predict, save_checkpoint, train
from .seeding import derive_seed
from .trace_ingest import (generate_synthetic_corpus, load_dataset,
                           load_documents, load_manifest, save_dataset,
                           stratified_split, write_corpus)

FORMAT_VERSION = 1
DEFAULT_RUNS = 7
SMALL = {"runs": 3, "epochs": 20, "max_terms": 512, "conv_filters": (4, 8, 8), "lstm_hidden": 16}
# CLI flag dest -> ModelConfig field
MODEL_FLAGS = [("filters", "conv_filters"), ("kernel", "conv_kernel"), ("pool", "pool_kernel"),
               ("hidden", "lstm_hidden"), ("depth", "lstm_depth"), ("dropout", "dropout"),
               ("window", "window"), ("epochs", "epochs"), ("batch", "batch"), ("lr", "lr")]


# -- run configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything needed to reproduce a pipeline run."""
    subcommand: str = "pipeline"
    format_version: int = FORMAT_VERSION
    seed: int = 0
    n: int = DEFAULT_N
    max_terms: int = DEFAULT_MAX_TERMS
    test_fraction: float = 0.2
    runs: int = DEFAULT_RUNS
    model: dict = field(default_factory=lambda: ModelConfig().to_dict())
    paths: dict = field(default_factory=dict)

    def model_config(self, **overrides):
        return ModelConfig.from_dict({**self.model, **overrides})

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError:
            raise UsageError(f"config not readable: {path}") from None
        if d.get("format_version") != FORMAT_VERSION:
            raise UsageError(f"{path}: unsupported config format {d.get('format_version')}")
        return cls(**d)


def run_seed(root, i):
    return derive_seed(root, "run", i)


# -- shared experiment driver ---------------------------------------------------------

def prepare_features(train_docs, test_docs, n, max_terms):
    vocab = build_vocabulary(train_docs, n=n, max_terms=max_terms)
    fit_standardizer(vocab, train_docs)
    return vocab, featurize(train_docs, vocab), featurize(test_docs, vocab)


def train_runs(train_xy, test_xy, model_cfg, runs, root_seed, log_dir=None, ckpt_dir=None,
               resume_capable=False):
    """Train ``runs`` independent models; returns per-run ``(accuracy, preds, records)``."""
    results = []
    for i in range(runs):
        cfg = replace(model_cfg, seed=run_seed(root_seed, i))
        log_path = Path(log_dir) / f"train_log_run{i}.csv" if log_dir else None
        state, records = train(*train_xy, cfg, log_path=log_path)
        if ckpt_dir:
            save_checkpoint(Path(ckpt_dir) / f"run{i}.opsm", state, cfg, with_moments=resume_capable)
        preds = predict(state, cfg, test_xy[0])
        results.append((float((preds == test_xy[1]).mean()), preds, records))
    return results


# -- subcommands ------------------------------------------------------------------------

def cmd_ingest(args):
    docs = load_documents(load_manifest(args.manifest, seed=args.seed), threads=args.threads)
    save_dataset(docs, args.out)
    print(f"ingested {len(docs)} documents into {args.out}")


def cmd_synth(args):
    docs = generate_synthetic_corpus(args.families, args.docs, args.len, args.vocab, args.seed)
    manifest = write_corpus(docs, args.out_dir)
    save_dataset(docs, Path(args.out_dir) / "dataset.bin")
    print(f"wrote {len(docs)} documents; manifest {manifest}")


def cmd_featurize(args):
    docs = load_dataset(args.dataset)
    K = len({d.label for d in docs})
    if args.vocab:
        vocab = read_vocabulary(args.vocab)
        data, labels = featurize(docs, vocab)
        write_features(args.out, data, labels, K)
        print(f"featurized {len(docs)} documents with {args.vocab}")
        return
    if not args.vocab_out:
        raise UsageError("featurize needs --vocab-out (or --vocab to reuse one)")
    train_docs, test_docs = stratified_split(docs, args.test_fraction, args.seed)
    vocab, (xtr, ytr), (xte, yte) = prepare_features(train_docs, test_docs, args.n, args.max_terms)
    write_vocabulary(vocab, args.vocab_out)
    write_features(args.out, xtr, ytr, K)
    if args.test_out:
        write_features(args.test_out, xte, yte, K)
    print(f"V={vocab.V} grid={xtr.shape[-1]}x{xtr.shape[-1]} train={len(ytr)} test={len(yte)}")


def cmd_train(args):
    data, labels, K = read_features(args.features)
    cfg = replace(model_config_from_args(args), classes=K, seed=args.seed)
    state, records = train(data, labels, cfg, log_path=args.log)
    save_checkpoint(args.out, state, cfg, with_moments=args.resume_capable)
    last = records[-1] if records else None
    if last:
        print(f"epoch {last.epoch} loss {last.loss:.6f} train_acc {last.train_acc:.4f}")


def evaluate_checkpoint(model_path, features_path):
    state, cfg = load_checkpoint(model_path)
    data, labels, K = read_features(features_path)
    preds = predict(state, cfg, data)
    return confusion(preds, labels, K)


def cmd_eval(args):
    if args.run_dir:
        report = eval_run_dir(Path(args.run_dir))
        print(f"accuracy {report['accuracy']:.4f} (runs mean {report['runs']['mean']:.4f})")
        return
    if not (args.model and args.features and args.report):
        raise UsageError("eval needs --run-dir, or all of --model --features --report")
    cm = evaluate_checkpoint(args.model, args.features)
    report = build_report(cm)
    write_report(report, args.report)
    if args.figures:
        from .plotting import plot_confusion
        Path(args.figures).mkdir(parents=True, exist_ok=True)
        plot_confusion(cm.counts, [str(i) for i in range(cm.K)],
                       Path(args.figures) / "confusion.png")
    print(f"accuracy {report['accuracy']:.4f}")


def eval_run_dir(run_dir):
    """Recompute a run directory's metrics from its own artifacts."""
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    except OSError:
        raise UsageError(f"{run_dir} has no manifest.json") from None
    art = manifest["artifacts"]
    accs, cms = [], []
    for ckpt in art["checkpoints"]:
        cm = evaluate_checkpoint(run_dir / ckpt, run_dir / art["test_features"])
        cms.append(cm)
        accs.append(cm.tp().sum() / cm.total)
    report = build_report(cms[0], manifest["labels"], [float(a) for a in accs])
    write_report(report, run_dir / art["metrics"])
    return report


def sweep(docs, n_values, runs, root_seed, model_cfg, max_terms, test_fraction=0.2):
    """Rows ``(n, mean, max, min, values)``; one independent model per (n, run)."""
    train_docs, test_docs = stratified_split(docs, test_fraction, root_seed)
    rows = []
    for n in n_values:
        _, train_xy, test_xy = prepare_features(train_docs, test_docs, n, max_terms)
        accs = [r[0] for r in train_runs(train_xy, test_xy, model_cfg, runs, root_seed)]
        rows.append((n, *aggregate_runs(accs), accs))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "runs", "mean", "max", "min"])
        for n, mean, hi, lo, values in rows:
            w.writerow([n, len(values), repr(mean), repr(hi), repr(lo)])


def cmd_sweep(args):
    n_values = parse_int_list(args.n_values)
    if not n_values:
        raise UsageError("--n-values must list at least one n")
    docs = load_dataset(args.dataset)
    runs, max_terms, cfg = resolve_runs_terms_model(args, len({d.label for d in docs}))
    rows = sweep(docs, n_values, runs, args.seed, cfg, max_terms, args.test_fraction)
    write_sweep_csv(rows, args.out)
    from .plotting import plot_sweep
    plot_sweep([r[:4] for r in rows], Path(args.out).with_suffix(".png"))
    for n, mean, hi, lo, _ in rows:
        print(f"n={n} mean={mean:.4f} max={hi:.4f} min={lo:.4f}")


def cmd_compare(args):
    if len(args.reports) < 2:
        raise UsageError("compare needs at least two --reports")
    names = args.names or [Path(p).stem for p in args.reports]
    if len(names) != len(args.reports):
        raise UsageError("--names must match --reports one to one")
    groups = [read_report(p)["runs"]["values"] for p in args.reports]
    result = {"models": [{"name": nm, **dict(zip(("mean", "max", "min"), aggregate_runs(g)))}
                         for nm, g in zip(names, groups)]}
    if args.anova:
        result["anova"] = anova_oneway(groups).to_dict()
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        from .plotting import plot_run_comparison
        plot_run_comparison(names, groups, Path(args.out).with_suffix(".png"))
    sys.stdout.write(text)


def cmd_gradcheck(args):
    from .nn.gradcheck import run_all, worst_by_layer
    results = run_all(args.seed)
    worst = worst_by_layer(results)
    for layer, r in worst.items():
        status = "ok" if r.passed else "FAIL"
        print(f"{layer:24s} {r.tensor:22s} worst_rel_err={r.error:.3e} {status}")
    failed = [r for r in results if not r.passed]
    if failed:
        layers = sorted({r.layer for r in failed})
        print(f"gradient check FAILED in: {', '.join(layers)}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_pipeline(args):
    if args.config:
        rc = RunConfig.load(args.config)
        out_dir = Path(args.out_dir or rc.paths.get("out_dir", "."))
        rc.paths["out_dir"] = str(out_dir)
    else:
        if not (args.manifest or args.dataset) or not args.out_dir:
            raise UsageError("pipeline needs --manifest or --dataset, and --out-dir")
        runs, max_terms, cfg = resolve_runs_terms_model(args, classes=2)
        rc = RunConfig(seed=args.seed, n=args.n, max_terms=max_terms,
                       test_fraction=args.test_fraction, runs=runs,
                       model=cfg.to_dict(),
                       paths={"manifest": args.manifest, "dataset": args.dataset,
                              "out_dir": args.out_dir})
        out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed = out_dir / "FAILED"
    if failed.exists():
        failed.unlink()
    try:
        run_pipeline(rc, out_dir, args.threads, args.resume_capable)
    except BaseException as exc:
        failed.write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise


def run_pipeline(rc, out_dir, threads=1, resume_capable=False):
    t0 = time.perf_counter()
    if rc.paths.get("manifest"):
        docs = load_documents(load_manifest(rc.paths["manifest"], seed=rc.seed), threads=threads)
    else:
        docs = load_dataset(rc.paths["dataset"])
    labels = sorted({d.label for d in docs})
    rc.model["classes"] = len(labels)
    rc.save(out_dir / "config.json")
    train_docs, test_docs = stratified_split(docs, rc.test_fraction, rc.seed)
    vocab, train_xy, test_xy = prepare_features(train_docs, test_docs, rc.n, rc.max_terms)
    write_vocabulary(vocab, out_dir / "vocabulary.tsv")
    write_features(out_dir / "features_train.bin", *train_xy, len(labels))
    write_features(out_dir / "features_test.bin", *test_xy, len(labels))
    for sub in ("checkpoints", "logs", "figures"):
        (out_dir / sub).mkdir(exist_ok=True)
    results = train_runs(train_xy, test_xy, rc.model_config(), rc.runs, rc.seed,
                         log_dir=out_dir / "logs", ckpt_dir=out_dir / "checkpoints",
                         resume_capable=resume_capable)
    accs = [r[0] for r in results]
    names = [lb.name for lb in labels]
    cm = confusion(results[0][1], test_xy[1], len(labels))
    write_report(build_report(cm, names, accs), out_dir / "metrics.json")

    from .plotting import plot_confusion, plot_training_curve
    plot_training_curve(results[0][2], out_dir / "figures" / "training_curve.png")
    plot_confusion(cm.counts, names, out_dir / "figures" / "confusion.png")
    artifacts = {
        "config": "config.json",
        "vocabulary": "vocabulary.tsv",
        "vocabulary_stats": "vocabulary.musigma.npy",
        "train_features": "features_train.bin",
        "test_features": "features_test.bin",
        "checkpoints": [f"checkpoints/run{i}.opsm" for i in range(rc.runs)],
        "training_logs": [f"logs/train_log_run{i}.csv" for i in range(rc.runs)],
        "metrics": "metrics.json",
        "figures": ["figures/training_curve.png", "figures/confusion.png"],
    }
    manifest = {"format_version": FORMAT_VERSION, "labels": names, "artifacts": artifacts}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    mean, hi, lo = aggregate_runs(accs)
    print(f"{rc.runs} run(s): accuracy mean {mean:.4f} max {hi:.4f} min {lo:.4f} "
          f"({time.perf_counter() - t0:.1f}s) -> {out_dir}")


# -- argument handling --------------------------------------------------------------------

def parse_int_list(text):
    return [int(v) for v in text.replace(",", " ").split()] if text else []


def u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a u64, got {text}")
    return v


def model_config_from_args(args, classes=2):
    base = ModelConfig.small() if getattr(args, "small", False) else ModelConfig()
    over = {}
    for dest, fname in MODEL_FLAGS:
        v = getattr(args, dest, None)
        if v is not None:
            over[fname] = parse_int_list(v) if dest == "filters" else v
    if "pool_kernel" in over:
        over["pool_stride"] = over["pool_kernel"]
    try:
        return replace(base, classes=classes, **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def resolve_runs_terms_model(args, classes):
    small = getattr(args, "small", False)
    runs = args.runs if args.runs is not None else (SMALL["runs"] if small else DEFAULT_RUNS)
    max_terms = (args.max_terms if args.max_terms is not None
                 else (SMALL["max_terms"] if small else DEFAULT_MAX_TERMS))
    if runs < 1:
        raise UsageError("--runs must be >= 1")
    return runs, max_terms, model_config_from_args(args, classes)


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Every flag shows its default. Flags whose default depends on ``--small``
    spell it out in their help text; unset optional paths show ``none``."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default:" in text:
            return text
        if action.default is None:
            return text + " (default: none)"
        return super()._get_help_string(action)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_flags(p):
    d = ModelConfig()
    p.add_argument("--small", action="store_true",
                   help="desk-scale preset: 3 runs, 20 epochs, V=512, filters 4,8,8, hidden 16")
    g = p.add_argument_group("model (defaults: the 3-LSTM-layer reference configuration)")
    g.add_argument("--filters", help=f"conv filter counts (default: {','.join(map(str, d.conv_filters))})")
    g.add_argument("--kernel", type=int, help=f"conv kernel size (default: {d.conv_kernel})")
    g.add_argument("--pool", type=int, help=f"max-pool size and stride (default: {d.pool_kernel})")
    g.add_argument("--hidden", type=int, help=f"LSTM units per layer (default: {d.lstm_hidden})")
    g.add_argument("--depth", type=int, help=f"LSTM layers (default: {d.lstm_depth})")
    g.add_argument("--dropout", type=float, help=f"dropout between LSTM layers (default: {d.dropout})")
    g.add_argument("--window", type=int, help=f"max LSTM sequence length (default: {d.window})")
    g.add_argument("--epochs", type=int, help=f"training epochs (default: {d.epochs})")
    g.add_argument("--batch", type=int, help=f"mini-batch size (default: {d.batch})")
    g.add_argument("--lr", type=float, help=f"Adam learning rate (default: {d.lr})")


def _add_corpus_flags(p, seed_required=False):
    p.add_argument("--seed", type=u64, required=seed_required, default=None if seed_required else 0,
                   help="root u64 seed" + ("" if seed_required else " (default: 0)"))
    p.add_argument("--n", type=int, default=DEFAULT_N, help="n-gram order (default: %(default)s)")
    p.add_argument("--max-terms", type=int, default=None,
                   help=f"vocabulary cap (default: {DEFAULT_MAX_TERMS}; --small: {SMALL['max_terms']})")
    p.add_argument("--test-fraction", type=float, default=0.2,
                   help="held-out fraction per label (default: %(default)s)")


def build_parser():
    parser = _Parser(prog="opseq", description=__doc__.splitlines()[0],
                     formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; env OPSQ_THREADS overrides; 1 = deterministic")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    fmt = _Formatter

    p = sub.add_parser("ingest", help="parse a manifest of trace files into a dataset", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="CSV with header path,label")
    p.add_argument("--out", required=True, help="dataset binary to write")
    p.add_argument("--seed", type=u64, default=0, help="seed recorded with the manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus", formatter_class=fmt)
    p.add_argument("--families", type=int, default=8, help="number of families")
    p.add_argument("--docs", type=int, default=100, help="documents per family")
    p.add_argument("--len", type=int, default=200, help="tokens per document")
    p.add_argument("--vocab", type=int, default=400, help="token alphabet size")
    p.add_argument("--seed", type=u64, default=0, help="root u64 seed")
    p.add_argument("--out-dir", required=True, help="directory for traces, manifest.csv, dataset.bin")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="build the vocabulary and feature grids", formatter_class=fmt)
    p.add_argument("--dataset", required=True, help="dataset binary")
    p.add_argument("--n", type=int, default=DEFAULT_N, help="n-gram order")
    p.add_argument("--max-terms", type=int, default=DEFAULT_MAX_TERMS, help="vocabulary cap")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out fraction per label")
    p.add_argument("--seed", type=u64, default=0, help="root u64 seed (split)")
    p.add_argument("--vocab", help="reuse this vocabulary and featurize every document")
    p.add_argument("--vocab-out", help="vocabulary TSV to write")
    p.add_argument("--out", required=True, help="training (or all) feature binary")
    p.add_argument("--test-out", help="held-out feature binary")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one CNN-LSTM", formatter_class=fmt)
    p.add_argument("--features", required=True, help="training feature binary")
    p.add_argument("--seed", type=u64, required=True, help="root u64 seed")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--log", help="CSV training log (epoch,loss,train_acc)")
    p.add_argument("--resume-capable", action="store_true", help="also store Adam moments")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a run directory", formatter_class=fmt)
    p.add_argument("--run-dir", help="re-evaluate a pipeline run directory in place")
    p.add_argument("--model", help="checkpoint")
    p.add_argument("--features", help="held-out feature binary")
    p.add_argument("--report", help="metrics JSON to write")
    p.add_argument("--figures", help="directory for the confusion-matrix figure")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-ngram", help="accuracy across n-gram orders", formatter_class=fmt)
    p.add_argument("--dataset", required=True, help="dataset binary")
    p.add_argument("--n-values", required=True, help="comma-separated n values in [1, 10]")
    p.add_argument("--runs", type=int, default=None,
                   help=f"runs per n (default: {DEFAULT_RUNS}; --small: {SMALL['runs']})")
    p.add_argument("--seed", type=u64, required=True, help="root u64 seed")
    p.add_argument("--max-terms", type=int, default=None,
                   help=f"vocabulary cap (default: {DEFAULT_MAX_TERMS}; --small: {SMALL['max_terms']})")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out fraction per label")
    p.add_argument("--out", required=True, help="CSV table; a .png plot is written beside it")
    _add_model_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="compare models' per-run accuracies", formatter_class=fmt)
    p.add_argument("--reports", nargs="+", required=True, help="metrics JSON files")
    p.add_argument("--names", nargs="+", help="model names (default: report file stems)")
    p.add_argument("--anova", action="store_true", help="add a one-way ANOVA")
    p.add_argument("--out", help="JSON output; a .png plot is written beside it")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks", formatter_class=fmt)
    p.add_argument("--seed", type=u64, default=0, help="root u64 seed")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pipeline", help="ingest -> featurize -> train -> eval into a run directory",
                       formatter_class=fmt)
    p.add_argument("--manifest", help="CSV manifest of trace files")
    p.add_argument("--dataset", help="dataset binary (instead of --manifest)")
    p.add_argument("--config", help="re-run from a saved config.json")
    p.add_argument("--out-dir", help="run directory")
    p.add_argument("--runs", type=int, default=None,
                   help=f"independent training runs (default: {DEFAULT_RUNS}; --small: {SMALL['runs']})")
    p.add_argument("--resume-capable", action="store_true", help="store Adam moments in checkpoints")
    _add_corpus_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        env = os.environ.get("OPSQ_THREADS")
        if env:
            args.threads = int(env)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            code = args.func(args)
    except OpseqError as exc:
        print(f"ERROR:{exc.code}:{' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"ERROR:InvalidParams:{' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
