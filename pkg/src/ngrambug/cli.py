"""Command-line front end: ``ngrambug <subcommand> ...``.

Exit codes: 0 success, 1 data/model error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ngrambug import classify, corpus as corpus_mod, evaluation, features, topics
from ngrambug.errors import DataError, EmptyCorpus
from ngrambug.ngram import DEFAULT_NMAX, build_dictionary, read_dictionary, write_dictionary

logger = logging.getLogger("ngrambug")

DEFAULT_SEED = 42

# Defaults for options whose presence is checked for invalid combinations.
LATE_DEFAULTS = {"folds": 10, "train_fraction": 0.9, "k": features.DEFAULT_CHI2_K}


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"random seed for every stochastic step (default: {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; results do not depend on it (default: 1)")
    p.add_argument("--config", metavar="FILE",
                   help="key=value file; its values override command-line flags")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _add_corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--labels", action="append", required=True, metavar="CSV",
                   help="label CSV; repeat to merge projects into one corpus")
    p.add_argument("--cache-dir", required=True,
                   help="text cache laid out as <dir>/<project>/<report_id>.txt")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classifier", choices=["logistic", "forest"], default="logistic",
                   help="classifier (default: logistic)")
    p.add_argument("--lam", type=float, default=1e-4, help="L2 strength (default: 1e-4)")
    p.add_argument("--max-iter", type=int, default=1000,
                   help="logistic iterations (default: 1000)")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="relative loss change to stop at (default: 1e-8)")
    p.add_argument("--trees", type=int, default=100, help="forest size (default: 100)")
    p.add_argument("--mtry", type=int, default=None,
                   help="features tried per split (default: floor(sqrt(num_features)))")


def _add_select_args(p: argparse.ArgumentParser, default: str = "none") -> None:
    p.add_argument("--select", choices=["none", "chi2", "cfs"], default=default,
                   help=f"feature selection fitted on training data (default: {default})")
    p.add_argument("--k", type=int, default=None,
                   help=f"features kept by chi2 (default: {features.DEFAULT_CHI2_K})")
    p.add_argument("--select-on-all", action="store_true",
                   help="fit selection on all rows before splitting (leaky; for comparison)")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="ngrambug",
        description="Classify issue reports as BUG / NON-BUG with N-gram IDF key terms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("fetch", help="download report text into the cache")
    p.add_argument("--labels", action="append", required=True, metavar="CSV")
    p.add_argument("--base-url", required=True, help="tracker root, e.g. https://issues.apache.org/jira")
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--allow-missing", action="store_true",
                   help="exit 0 even if some reports return 404")
    subs["fetch"] = p

    p = sub.add_parser("extract", help="build the N-gram dictionary (TSV)")
    _add_corpus_args(p)
    p.add_argument("--nmax", type=int, default=DEFAULT_NMAX,
                   help=f"longest N-gram in tokens (default: {DEFAULT_NMAX})")
    p.add_argument("--prune", action=argparse.BooleanOptionalAction, default=True,
                   help="drop N-grams whose gtf/df equal a longer N-gram's")
    p.add_argument("--min-weight", type=float, default=None,
                   help="drop entries weighted below this (default: off)")
    p.add_argument("--out", required=True, help="dictionary TSV to write")
    subs["extract"] = p

    p = sub.add_parser("features", help="raw-frequency vectors over a dictionary")
    _add_corpus_args(p)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--out", required=True, help="feature file (.docids/.names written alongside)")
    subs["features"] = p

    p = sub.add_parser("topics", help="LDA topic-membership vectors (baseline features)")
    _add_corpus_args(p)
    p.add_argument("--topics", type=int, default=topics.DEFAULT_TOPICS,
                   help=f"number of topics (default: {topics.DEFAULT_TOPICS})")
    p.add_argument("--alpha", type=float, default=None, help="document prior (default: 50/topics)")
    p.add_argument("--beta", type=float, default=topics.DEFAULT_BETA,
                   help=f"word prior (default: {topics.DEFAULT_BETA})")
    p.add_argument("--iters", type=int, default=topics.DEFAULT_ITERS,
                   help=f"Gibbs sweeps (default: {topics.DEFAULT_ITERS})")
    p.add_argument("--out", required=True)
    subs["topics"] = p

    p = sub.add_parser("select", help="reduce a feature file with chi2 or CFS")
    p.add_argument("--features", required=True)
    p.add_argument("--select", choices=["chi2", "cfs"], default="chi2",
                   help="selection method (default: chi2)")
    p.add_argument("--k", type=int, default=None,
                   help=f"features kept by chi2 (default: {features.DEFAULT_CHI2_K})")
    p.add_argument("--out", required=True)
    subs["select"] = p

    p = sub.add_parser("train", help="train a classifier and save it as JSON")
    p.add_argument("--features", required=True)
    _add_model_args(p)
    p.add_argument("--out", required=True)
    subs["train"] = p

    p = sub.add_parser("eval", help="10-fold CV or chronological split evaluation")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", action="append", metavar="CSV",
                   help="label CSV(s) supplying timestamps (required for --split chrono)")
    p.add_argument("--split", choices=["cv", "chrono"], default="cv",
                   help="evaluation setup (default: cv)")
    p.add_argument("--folds", type=int, default=None, help="CV folds (default: 10)")
    p.add_argument("--train-fraction", type=float, default=None,
                   help="oldest fraction used for training (default: 0.9)")
    _add_select_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True, help="report JSON")
    subs["eval"] = p

    p = sub.add_parser("compare",
                       help="repeated forest runs: N-gram vs topic features, with U-test")
    p.add_argument("--ngram-features", required=True)
    p.add_argument("--topic-features", required=True)
    p.add_argument("--labels", action="append", required=True, metavar="CSV",
                   help="label CSV(s) supplying timestamps")
    p.add_argument("--train-fraction", type=float, default=None,
                   help="oldest fraction used for training (default: 0.9)")
    p.add_argument("--runs", type=int, default=1000, help="forest runs per model (default: 1000)")
    _add_select_args(p, default="chi2")
    p.add_argument("--trees", type=int, default=100, help="forest size (default: 100)")
    p.add_argument("--mtry", type=int, default=None,
                   help="features tried per split (default: floor(sqrt(num_features)))")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv-prefix", default=None,
                   help="write <prefix>.ngram.csv and <prefix>.topic.csv distributions")
    subs["compare"] = p

    for p in subs.values():
        _add_common(p)
    return parser, subs


# --- config files -----------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def apply_config(args: argparse.Namespace, subparser: argparse.ArgumentParser) -> None:
    actions = {a.dest: a for a in subparser._actions}
    with open(args.config, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{args.config}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            dest = key.lstrip("-").replace("-", "_")
            action = actions.get(dest)
            if action is None or dest in ("config", "help"):
                raise UsageError(f"{args.config}:{lineno}: unknown option {key!r}")
            if action.nargs == 0 or isinstance(action, argparse.BooleanOptionalAction):
                setattr(args, dest, _parse_bool(value))
            elif isinstance(action, argparse._AppendAction):
                setattr(args, dest, [v.strip() for v in value.split(",") if v.strip()])
            else:
                conv = action.type or str
                try:
                    val = conv(value)
                except (TypeError, ValueError):
                    raise UsageError(f"{args.config}:{lineno}: bad value for {key}") from None
                if action.choices is not None and val not in action.choices:
                    raise UsageError(f"{args.config}:{lineno}: {key} must be one of "
                                     f"{', '.join(map(str, action.choices))}")
                setattr(args, dest, val)


def check_combinations(args: argparse.Namespace) -> None:
    cmd = args.command
    if getattr(args, "k", None) is not None and getattr(args, "select", "chi2") != "chi2":
        raise UsageError("--k only applies to --select chi2")
    if cmd == "eval":
        if args.split == "chrono" and args.folds is not None:
            raise UsageError("--folds cannot be combined with --split chrono")
        if args.split == "cv" and args.train_fraction is not None:
            raise UsageError("--train-fraction cannot be combined with --split cv")
        if args.split == "chrono" and not args.labels:
            raise UsageError("--split chrono needs --labels for timestamps")
    if cmd == "compare" and args.runs < 1:
        raise UsageError("--runs must be >= 1")
    if getattr(args, "folds", None) is not None and args.folds < 2:
        raise UsageError("--folds must be >= 2")
    if getattr(args, "nmax", 1) < 1:
        raise UsageError("--nmax must be >= 1")
    tf = getattr(args, "train_fraction", None)
    if tf is not None and not 0 < tf < 1:
        raise UsageError("--train-fraction must lie in (0, 1)")
    for name, value in LATE_DEFAULTS.items():
        if getattr(args, name, 0) is None:
            setattr(args, name, value)


def _echo(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


def _pipeline(args: argparse.Namespace, **over) -> evaluation.PipelineConfig:
    cfg = dict(
        classifier=getattr(args, "classifier", "forest"),
        select=getattr(args, "select", "none"),
        k=getattr(args, "k", None) or features.DEFAULT_CHI2_K,
        select_on_all=getattr(args, "select_on_all", False),
        lam=getattr(args, "lam", 1e-4),
        max_iter=getattr(args, "max_iter", 1000),
        tol=getattr(args, "tol", 1e-8),
        n_trees=args.trees,
        mtry=args.mtry,
        seed=args.seed,
        threads=args.threads,
    )
    cfg.update(over)
    return evaluation.PipelineConfig(**cfg)


def _timestamps(label_paths) -> dict:
    out = {}
    for path in label_paths:
        for rec in corpus_mod.parse_labels(path):
            out[(rec.project, rec.report_id)] = rec.created_at
    return out


# --- subcommands ------------------------------------------------------------

def cmd_fetch(args) -> int:
    labels = [r for path in args.labels for r in corpus_mod.parse_labels(path)]
    summary = corpus_mod.fetch_all(labels, args.base_url, args.cache_dir, workers=args.threads)
    print(f"fetched {len(summary.fetched)}  cached {len(summary.cached)}  "
          f"missing {len(summary.missing)}  failed {len(summary.failed)}")
    for rec in summary.missing:
        print(f"missing\t{rec.project}\t{rec.report_id}")
    for rec, exc in summary.failed:
        print(f"failed\t{rec.project}\t{rec.report_id}\t{exc}", file=sys.stderr)
    if summary.failed:
        first = summary.failed[0][1]
        raise first
    if summary.missing and not args.allow_missing:
        print("error: some reports were not found (use --allow-missing to continue)",
              file=sys.stderr)
        return 1
    return 0


def cmd_extract(args) -> int:
    corpus = corpus_mod.load_corpus(args.labels, args.cache_dir)
    if not corpus.vocab:
        raise EmptyCorpus("corpus has no tokens")
    d = build_dictionary(corpus, args.nmax, args.prune, min_weight=args.min_weight)
    write_dictionary(d, args.out)
    s = d.stats
    print(f"documents {corpus.num_docs}  enumerated {s['enumerated']}  "
          f"df>=2 {s['after_df_filter']}  pruned {s['after_prune']}  written {s['final']}")
    return 0


def cmd_features(args) -> int:
    corpus = corpus_mod.load_corpus(args.labels, args.cache_dir)
    d = read_dictionary(args.dictionary)
    m = features.vectorize(corpus, d)
    features.write_features(m, args.out)
    print(f"rows {m.num_rows}  features {m.num_features}  nonzeros {m.X.nnz}")
    return 0


def cmd_topics(args) -> int:
    corpus = corpus_mod.load_corpus(args.labels, args.cache_dir)
    model = topics.train_lda(corpus, args.topics, args.alpha, args.beta, args.iters, args.seed)
    m = topics.membership_vectors(model)
    features.write_features(m, args.out)
    it, lj = model.log_joint[-1] if model.log_joint else (None, float("nan"))
    print(f"rows {m.num_rows}  topics {model.K}  final log joint {lj:.3f}")
    return 0


def cmd_select(args) -> int:
    m = features.read_features(args.features)
    if args.select == "chi2":
        s = features.select_chi2(m, args.k)
    else:
        s = features.select_cfs(m)
    out = features.apply_selection(m, s)
    features.write_features(out, args.out)
    print(f"method {s.method}  kept {len(s.kept)} of {m.num_features}")
    return 0


def cmd_train(args) -> int:
    m = features.read_features(args.features)
    model = evaluation.train_model(_pipeline(args), m)
    classify.save_model(model, args.out)
    print(f"trained {args.classifier} on {m.num_rows} rows x {m.num_features} features")
    return 0


def cmd_eval(args) -> int:
    m = features.read_features(args.features)
    cfg = _pipeline(args)
    if args.split == "cv":
        metrics = evaluation.run_cv(cfg, m, args.folds, args.seed)
    else:
        metrics = evaluation.run_chrono(cfg, m, _timestamps(args.labels), args.train_fraction)
    inputs = [args.features] + list(args.labels or [])
    evaluation.emit_report(args.out, _echo(args), {"metrics": metrics}, inputs)
    print(f"{args.split} {args.classifier}: weighted F1 {metrics.weighted_f1:.4f}  "
          f"bug F1 {metrics.bug_f1:.4f}")
    return 0


def cmd_compare(args) -> int:
    ts = _timestamps(args.labels)
    ngram = features.read_features(args.ngram_features)
    topic = features.read_features(args.topic_features)
    if list(ngram.doc_ids) != list(topic.doc_ids):
        raise DataError("N-gram and topic feature files list different documents")
    tr, te = evaluation.chrono_split(ngram, ts, args.train_fraction)
    cfg_ngram = _pipeline(args, classifier="forest")
    cfg_topic = _pipeline(args, classifier="forest", select="none")
    d_ngram = evaluation.multirun_forest(cfg_ngram, ngram.take(tr), ngram.take(te),
                                         args.runs, args.seed, args.threads)
    d_topic = evaluation.multirun_forest(cfg_topic, topic.take(tr), topic.take(te),
                                         args.runs, args.seed, args.threads)
    u = evaluation.mann_whitney(d_ngram.values, d_topic.values)
    if args.csv_prefix:
        evaluation.write_distribution_csv(d_ngram, f"{args.csv_prefix}.ngram.csv")
        evaluation.write_distribution_csv(d_topic, f"{args.csv_prefix}.topic.csv")
    evaluation.emit_report(
        args.out, _echo(args),
        {"ngram": d_ngram, "topic": d_topic, "mann_whitney": u,
         "split": {"train": int(len(tr)), "test": int(len(te))}},
        [args.ngram_features, args.topic_features] + list(args.labels))
    print(f"ngram median {d_ngram.summary['median']:.4f}  topic median "
          f"{d_topic.summary['median']:.4f}  U {u.u_statistic:.1f}  p {u.p_two_sided:.3g}")
    return 0


COMMANDS = {
    "fetch": cmd_fetch,
    "extract": cmd_extract,
    "features": cmd_features,
    "topics": cmd_topics,
    "select": cmd_select,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            apply_config(args, subs[args.command])
        check_combinations(args)
    except UsageError as exc:
        subs[args.command].print_usage(sys.stderr)
        print(f"ngrambug {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ngrambug: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    print(f"seed {args.seed}")
    try:
        return COMMANDS[args.command](args)
    except (DataError, OSError, ValueError) as exc:
        print(f"ngrambug {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
