"""Evaluation harness: splits, F-measures, cross-validation, repeated forest runs, U-test."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from ngrambug import classify
from ngrambug.corpus import Corpus
from ngrambug.errors import LengthMismatch, MissingTimestamp, SingleClass
from ngrambug.features import (
    DEFAULT_CHI2_K,
    SparseFeatureMatrix,
    apply_selection,
    select_cfs,
    select_chi2,
)

REPORT_FORMAT_VERSION = 1
CLASS_NAMES = ("NONBUG", "BUG")


@dataclass
class EvalMetrics:
    per_class: dict            # name -> {"precision", "recall", "f1", "support"}
    weighted_f1: float
    bug_f1: float
    confusion: list            # [[tn, fp], [fn, tp]], rows = truth
    folds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"per_class": self.per_class, "weighted_f1": self.weighted_f1,
             "bug_f1": self.bug_f1, "confusion": self.confusion}
        if self.folds:
            d["folds"] = [f.to_dict() for f in self.folds]
        return d


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def evaluate(pred: Sequence[int], truth: Sequence[int]) -> EvalMetrics:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions for {len(truth)} labels")
    if len(pred) == 0:
        raise LengthMismatch("cannot evaluate an empty prediction set")
    conf = [[int(np.sum((truth == t) & (pred == p))) for p in (0, 1)] for t in (0, 1)]
    n = len(truth)
    per_class = {}
    weighted = 0.0
    for c, name in enumerate(CLASS_NAMES):
        tp = conf[c][c]
        predicted = conf[0][c] + conf[1][c]
        support = conf[c][0] + conf[c][1]
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = _f1(precision, recall)
        per_class[name] = {"precision": precision, "recall": recall, "f1": f1, "support": support}
        weighted += support / n * f1
    return EvalMetrics(per_class, weighted, per_class["BUG"]["f1"], conf)


def average_metrics(folds: Sequence[EvalMetrics]) -> EvalMetrics:
    """Unweighted mean of fold metrics; supports and confusion counts are summed."""
    per_class = {}
    for name in CLASS_NAMES:
        per_class[name] = {
            key: float(np.mean([f.per_class[name][key] for f in folds]))
            for key in ("precision", "recall", "f1")
        }
        per_class[name]["support"] = int(sum(f.per_class[name]["support"] for f in folds))
    confusion = np.sum([f.confusion for f in folds], axis=0).tolist()
    return EvalMetrics(per_class, float(np.mean([f.weighted_f1 for f in folds])),
                       float(np.mean([f.bug_f1 for f in folds])), confusion, list(folds))


# --- splits -----------------------------------------------------------------

def kfold_split(n, k: int = 10, seed: int = 42) -> list[np.ndarray]:
    """Seeded, unstratified partition of range(n) into k folds whose sizes differ by <= 1."""
    if isinstance(n, SparseFeatureMatrix):
        n = n.num_rows
    if k < 2 or n < k:
        raise ValueError(f"need 2 <= k <= N, got k={k}, N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def _timestamps(m: SparseFeatureMatrix, source) -> list:
    if isinstance(source, Corpus):
        source = {d.doc_id: d.created_at for d in source.documents}
    out = []
    for doc_id in m.doc_ids:
        ts = source.get(tuple(doc_id))
        if ts is None:
            raise MissingTimestamp(f"no timestamp for {doc_id[0]}/{doc_id[1]}")
        out.append(ts)
    return out


def chrono_split(m: SparseFeatureMatrix, corpus: Corpus | Mapping,
                 train_fraction: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """Oldest ``floor(fraction * N)`` rows train, the rest test; ties broken by doc_id."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    ts = _timestamps(m, corpus)
    order = sorted(range(m.num_rows), key=lambda i: (ts[i], tuple(m.doc_ids[i])))
    cut = math.floor(train_fraction * m.num_rows)
    return np.array(order[:cut], dtype=np.int64), np.array(order[cut:], dtype=np.int64)


# --- pipelines --------------------------------------------------------------

@dataclass
class PipelineConfig:
    classifier: str = "logistic"       # logistic | forest
    select: str = "none"               # none | chi2 | cfs
    k: int = DEFAULT_CHI2_K
    select_on_all: bool = False
    lam: float = 1e-4
    max_iter: int = 1000
    tol: float = 1e-8
    n_trees: int = 100
    mtry: int | None = None
    seed: int = 42
    threads: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def fit_selection(config: PipelineConfig, m: SparseFeatureMatrix):
    if config.select == "none":
        return None
    if config.select == "chi2":
        return select_chi2(m, config.k)
    if config.select == "cfs":
        return select_cfs(m)
    raise ValueError(f"unknown selection method {config.select!r}")


def train_model(config: PipelineConfig, m: SparseFeatureMatrix, seed: int | None = None):
    if config.classifier == "logistic":
        return classify.train_logistic(m, config.lam, config.max_iter, config.tol)
    if config.classifier == "forest":
        return classify.train_forest(m, config.n_trees, config.mtry,
                                     config.seed if seed is None else seed, config.threads)
    raise ValueError(f"unknown classifier {config.classifier!r}")


def fit_predict(config: PipelineConfig, train: SparseFeatureMatrix, test: SparseFeatureMatrix,
                selection=None, seed: int | None = None) -> np.ndarray:
    """Select features on ``train`` (unless ``selection`` is given), train, predict ``test``."""
    if selection is None:
        selection = fit_selection(config, train)
    if selection is not None:
        train = apply_selection(train, selection)
        test = apply_selection(test, selection)
    model = train_model(config, train, seed)
    return classify.predict(model, test.X)


def run_cv(config: PipelineConfig, m: SparseFeatureMatrix, k: int = 10,
           seed: int | None = None) -> EvalMetrics:
    """k-fold cross-validation; returns the unweighted mean of the fold metrics."""
    seed = config.seed if seed is None else seed
    folds = kfold_split(m.num_rows, k, seed)
    shared = fit_selection(config, m) if config.select_on_all else None
    results = []
    for i, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        try:
            pred = fit_predict(config, m.take(train_idx), m.take(test_idx), shared)
        except SingleClass as exc:
            raise SingleClass(str(exc), fold=i) from None
        results.append(evaluate(pred, m.labels[test_idx]))
    return average_metrics(results)


def run_chrono(config: PipelineConfig, m: SparseFeatureMatrix, corpus,
               train_fraction: float = 0.9) -> EvalMetrics:
    train_idx, test_idx = chrono_split(m, corpus, train_fraction)
    shared = fit_selection(config, m) if config.select_on_all else None
    pred = fit_predict(config, m.take(train_idx), m.take(test_idx), shared)
    return evaluate(pred, m.labels[test_idx])


@dataclass
class RunDistribution:
    values: list               # weighted F1 per run
    bug_f1: list
    seeds: list
    summary: dict

    def to_dict(self) -> dict:
        return {"summary": self.summary, "values": self.values, "bug_f1": self.bug_f1,
                "seeds": self.seeds}


def summarize(values: Sequence[float]) -> dict:
    """Boxplot summary with linearly interpolated (type 7) quartiles."""
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    return {"n": int(len(v)), "min": float(v.min()), "q1": float(q1), "median": float(med),
            "q3": float(q3), "max": float(v.max()), "mean": float(v.mean())}


def run_seed(master_seed: int, run: int) -> int:
    # run index lives in the high word: tree seeds (run_seed ^ tree) never collide across runs
    return (master_seed ^ (run << 32)) & classify.SEED_MASK


def multirun_forest(config: PipelineConfig, m_train: SparseFeatureMatrix,
                    m_test: SparseFeatureMatrix, runs: int = 1000, master_seed: int = 42,
                    threads: int = 1) -> RunDistribution:
    """Train ``runs`` forests on a fixed split; selection is fitted once on the train set."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    selection = fit_selection(config, m_train)
    if selection is not None:
        m_train = apply_selection(m_train, selection)
        m_test = apply_selection(m_test, selection)
    forest_cfg = PipelineConfig(**{**config.to_dict(), "classifier": "forest", "threads": 1})
    seeds = [run_seed(master_seed, i) for i in range(runs)]

    def one(s):
        model = train_model(forest_cfg, m_train, s)
        return evaluate(model.predict(m_test.X), m_test.labels)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    values = [r.weighted_f1 for r in results]
    return RunDistribution(values, [r.bug_f1 for r in results], seeds, summarize(values))


# --- Mann-Whitney U ---------------------------------------------------------

@dataclass
class UTestResult:
    u_statistic: float
    z: float
    p_two_sided: float
    all_tied: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def mann_whitney(a: Sequence[float], b: Sequence[float]) -> UTestResult:
    """Two-sided U-test, normal approximation with tie correction and 0.5 continuity.

    ``u_statistic`` is U for ``a`` (pairs where a > b, ties counting one half).
    If every value is tied the variance vanishes; p = 1 is returned with
    ``all_tied`` set.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples need at least one value")
    ranks = rankdata(np.concatenate([a, b]))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    ties = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - (ties / (n * (n - 1)) if n > 1 else 0.0))
    if var <= 0:
        return UTestResult(u, 0.0, 1.0, all_tied=True)
    diff = u - n1 * n2 / 2.0
    z = math.copysign(max(abs(diff) - 0.5, 0.0), diff) / math.sqrt(var)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return UTestResult(u, z, p)


# --- reports ----------------------------------------------------------------

def git_blob_hash(path: str | os.PathLike) -> str:
    """The object id ``git hash-object`` would print for this file."""
    with open(path, "rb") as fh:
        data = fh.read()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def _plain(obj):
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def emit_report(path: str | os.PathLike, config: Mapping, results: Mapping,
                inputs: Sequence[str | os.PathLike] = ()) -> dict:
    """Write a versioned JSON report with sorted keys and return the document."""
    doc = {
        "format_version": REPORT_FORMAT_VERSION,
        "config": _plain(dict(config)),
        "inputs": [{"path": str(p), "git_blob_sha1": git_blob_hash(p)} for p in inputs],
        "results": _plain(dict(results)),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def write_distribution_csv(dist: RunDistribution, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", "weighted_f1", "bug_f1"])
        for i, (s, v, bf) in enumerate(zip(dist.seeds, dist.values, dist.bug_f1)):
            w.writerow([i, s, repr(v), repr(bf)])
