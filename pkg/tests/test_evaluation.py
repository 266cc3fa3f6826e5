import itertools
import json
import math
import shutil
import subprocess
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from oracles import exact_mann_whitney_p
from ngrambug.errors import LengthMismatch, MissingTimestamp, SingleClass
from ngrambug.evaluation import (
    PipelineConfig,
    chrono_split,
    emit_report,
    evaluate,
    git_blob_hash,
    kfold_split,
    mann_whitney,
    multirun_forest,
    run_cv,
    run_seed,
    summarize,
    write_distribution_csv,
)
from ngrambug.features import SparseFeatureMatrix


def matrix(dense, labels, ids=None):
    dense = np.asarray(dense, dtype=float)
    n, f = dense.shape
    ids = ids or [("P", f"P-{i:04d}") for i in range(n)]
    return SparseFeatureMatrix(sp.csr_matrix(dense), np.asarray(labels), ids,
                               [(f"t{j}",) for j in range(f)])


def separable(n=40, seed=0):
    rng = np.random.default_rng(seed)
    y = np.array([i % 2 for i in range(n)])
    X = rng.integers(0, 2, (n, 4)).astype(float)
    X[:, 0] = y * 3
    X[:, 1] = (1 - y) * 2
    return matrix(X, y)


# --- evaluate ---------------------------------------------------------------

def test_perfect_predictions():
    m = evaluate([1, 0, 1, 0, 0], [1, 0, 1, 0, 0])
    assert m.weighted_f1 == 1.0 and m.bug_f1 == 1.0
    for stats in m.per_class.values():
        assert stats["precision"] == stats["recall"] == stats["f1"] == 1.0


def test_bug_precision_recall_example():
    truth = [1] * 8 + [0] * 2
    pred = [1] * 4 + [0] * 4 + [1, 0]
    m = evaluate(pred, truth)
    assert m.per_class["BUG"]["precision"] == pytest.approx(0.8)
    assert m.per_class["BUG"]["recall"] == pytest.approx(0.5)
    assert m.bug_f1 == pytest.approx(2 * 0.4 / 1.3)
    assert m.confusion == [[1, 1], [4, 4]]


def test_never_bug_guarded():
    m = evaluate([0, 0, 0], [1, 1, 1])
    assert m.bug_f1 == 0.0
    assert m.per_class["NONBUG"]["f1"] == 0.0
    assert m.weighted_f1 == 0.0


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        evaluate([1, 0], [1])
    with pytest.raises(LengthMismatch):
        evaluate([], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_metric_invariants(pairs):
    pred, truth = zip(*pairs)
    m = evaluate(pred, truth)
    f1s = [m.per_class[c]["f1"] for c in ("NONBUG", "BUG")]
    assert min(f1s) - 1e-12 <= m.weighted_f1 <= max(f1s) + 1e-12
    assert sum(m.per_class[c]["support"] for c in ("NONBUG", "BUG")) == len(pairs)
    for stats in m.per_class.values():
        for key in ("precision", "recall", "f1"):
            assert 0.0 <= stats[key] <= 1.0


# --- splits -----------------------------------------------------------------

def test_kfold_745():
    sizes = sorted(len(f) for f in kfold_split(745, 10, seed=1))
    assert sizes == [74] * 5 + [75] * 5


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 300), st.data())
def test_kfold_partition(n, data):
    k = data.draw(st.integers(2, n))
    folds = kfold_split(n, k, seed=data.draw(st.integers(0, 2**32)))
    joined = np.concatenate(folds)
    assert len(folds) == k
    assert sorted(joined.tolist()) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1


def test_kfold_deterministic():
    a = kfold_split(50, 5, seed=7)
    b = kfold_split(50, 5, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = kfold_split(50, 5, seed=8)
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_kfold_rejects_bad_k():
    with pytest.raises(ValueError):
        kfold_split(3, 4)
    with pytest.raises(ValueError):
        kfold_split(10, 1)


def stamps(n, equal=False):
    base = datetime(2011, 1, 1, tzinfo=timezone.utc)
    return [base if equal else base + timedelta(hours=i) for i in range(n)]


def test_chrono_745():
    m = matrix(np.zeros((745, 1)), [i % 2 for i in range(745)])
    ts = dict(zip(map(tuple, m.doc_ids), stamps(745)))
    train, test = chrono_split(m, ts, 0.9)
    assert (len(train), len(test)) == (670, 75)
    assert max(train) < min(test)


def test_chrono_small_case():
    m = matrix(np.zeros((4, 1)), [0, 1, 0, 1])
    t = stamps(4)
    ts = {tuple(d): t[i] for i, d in zip([3, 1, 0, 2], m.doc_ids)}
    train, test = chrono_split(m, ts, 0.5)
    assert sorted(train.tolist()) == [1, 2]
    assert sorted(test.tolist()) == [0, 3]


def test_chrono_tie_break_by_doc_id():
    ids = [("P", "P-3"), ("P", "P-1"), ("P", "P-2"), ("A", "A-9")]
    m = matrix(np.zeros((4, 1)), [0, 1, 0, 1], ids)
    ts = {d: t for d, t in zip(ids, stamps(4, equal=True))}
    train, test = chrono_split(m, ts, 0.5)
    assert [m.doc_ids[i] for i in train] == [("A", "A-9"), ("P", "P-1")]
    assert [m.doc_ids[i] for i in test] == [("P", "P-2"), ("P", "P-3")]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32), st.floats(0.05, 0.95))
def test_chrono_permutation_stable(n, seed, frac):
    rng = np.random.default_rng(seed)
    ids = [("P", f"P-{i}") for i in range(n)]
    base = datetime(2011, 1, 1, tzinfo=timezone.utc)
    ts = {d: base + timedelta(days=int(rng.integers(0, 5))) for d in ids}
    m = matrix(np.zeros((n, 1)), [i % 2 for i in range(n)], ids)
    perm = rng.permutation(n)
    mp = m.take(perm)
    a_train, a_test = chrono_split(m, ts, frac)
    b_train, b_test = chrono_split(mp, ts, frac)
    assert {m.doc_ids[i] for i in a_train} == {mp.doc_ids[i] for i in b_train}
    assert {m.doc_ids[i] for i in a_test} == {mp.doc_ids[i] for i in b_test}


def test_chrono_missing_timestamp(corpus_factory):
    m = matrix(np.zeros((2, 1)), [0, 1], [("P", "P-1"), ("P", "P-9")])
    with pytest.raises(MissingTimestamp):
        chrono_split(m, {("P", "P-1"): stamps(1)[0]}, 0.5)
    corpus = corpus_factory([["a"], ["b"]])
    m = matrix(np.zeros((2, 1)), [0, 1], list(corpus.doc_ids))
    train, test = chrono_split(m, corpus, 0.5)
    assert (train.tolist(), test.tolist()) == ([0], [1])


# --- cross-validation -------------------------------------------------------

def test_cv_single_class_reports_fold():
    m = matrix(np.eye(6), [1] * 6)
    with pytest.raises(SingleClass) as exc:
        run_cv(PipelineConfig(), m, k=3)
    assert exc.value.fold == 0
    assert "fold 0" in str(exc.value)


def test_cv_two_folds_on_four_rows():
    m = matrix([[3, 0], [0, 3], [3, 0], [0, 3]], [1, 0, 1, 0])
    # seed 1 leaves both classes in each training half
    for f in kfold_split(4, 2, seed=1):
        assert len(set(m.labels[np.setdiff1d(np.arange(4), f)])) == 2
    res = run_cv(PipelineConfig(), m, k=2, seed=1)
    assert len(res.folds) == 2
    assert res.weighted_f1 == pytest.approx(np.mean([f.weighted_f1 for f in res.folds]))


def test_cv_separable_both_classifiers():
    m = separable()
    for clf in ("logistic", "forest"):
        res = run_cv(PipelineConfig(classifier=clf, n_trees=10), m, k=5)
        assert res.weighted_f1 == 1.0


# --- repeated runs ----------------------------------------------------------

def test_summary_type7():
    s = summarize([1, 2, 3, 4])
    assert (s["q1"], s["median"], s["q3"]) == (1.75, 2.5, 3.25)
    assert (s["min"], s["max"], s["mean"], s["n"]) == (1.0, 4.0, 2.5, 4)


def test_run_seeds_distinct():
    seeds = [run_seed(42, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    # tree seeds are seed ^ j for small j; they must not collide across runs
    trees = {s ^ j for s in seeds for j in range(100)}
    assert len(trees) == 100_000


def test_multirun_single_run():
    m = separable(30)
    d = multirun_forest(PipelineConfig(n_trees=5), m, m, runs=1)
    s = d.summary
    assert len(d.values) == 1
    assert s["min"] == s["q1"] == s["median"] == s["q3"] == s["max"] == d.values[0]


def test_multirun_deterministic_and_thread_invariant():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 3, (40, 6)).astype(float)
    y = (X[:, 0] + rng.integers(0, 2, 40) > 1).astype(int)
    m = matrix(X, y)
    cfg = PipelineConfig(n_trees=8)
    a = multirun_forest(cfg, m.take(np.arange(30)), m.take(np.arange(30, 40)), runs=6)
    b = multirun_forest(cfg, m.take(np.arange(30)), m.take(np.arange(30, 40)), runs=6,
                        threads=3)
    assert a.values == b.values and a.seeds == b.seeds and a.bug_f1 == b.bug_f1


def test_multirun_rejects_zero_runs():
    m = separable(10)
    with pytest.raises(ValueError):
        multirun_forest(PipelineConfig(), m, m, runs=0)


# --- Mann-Whitney -----------------------------------------------------------

def test_mw_small_example():
    r = mann_whitney([1, 2], [3, 4])
    assert r.u_statistic == 0.0
    assert exact_mann_whitney_p([1, 2], [3, 4]) == pytest.approx(1 / 3)
    assert abs(r.p_two_sided - 1 / 3) <= 0.15


def test_mw_identical_samples():
    r = mann_whitney([1, 2, 3, 5], [5, 3, 2, 1])
    assert r.z == 0.0 and r.p_two_sided == 1.0 and not r.all_tied


def test_mw_all_tied():
    r = mann_whitney([2, 2, 2], [2, 2])
    assert r.all_tied and r.p_two_sided == 1.0
    assert r.u_statistic == 3.0


def test_mw_shifted_large():
    rng = np.random.default_rng(11)
    a = rng.normal(0.5, 1.0, 1000)
    b = rng.normal(0.0, 1.0, 1000)
    assert mann_whitney(a, b).p_two_sided < 0.001


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=20),
       st.lists(st.integers(0, 6), min_size=1, max_size=20))
def test_mw_symmetry_and_range(a, b):
    ab, ba = mann_whitney(a, b), mann_whitney(b, a)
    assert ab.u_statistic + ba.u_statistic == len(a) * len(b)
    assert 0 <= ab.u_statistic <= len(a) * len(b)
    assert 0 < ab.p_two_sided <= 1
    assert ab.p_two_sided == pytest.approx(ba.p_two_sided)


@pytest.mark.parametrize("n1,n2", [(2, 2), (3, 4), (5, 5), (1, 7)])
def test_mw_close_to_exact_without_ties(n1, n2):
    pool = range(n1 + n2)
    for chosen in itertools.combinations(pool, n1):
        a = list(chosen)
        b = [x for x in pool if x not in chosen]
        assert abs(mann_whitney(a, b).p_two_sided - exact_mann_whitney_p(a, b)) <= 0.15


# --- reports ----------------------------------------------------------------

def test_git_blob_hash(tmp_path):
    p = tmp_path / "f.txt"
    p.write_bytes(b"hello\n")
    assert git_blob_hash(p) == "ce013625030ba8dba906f756967f9e9ca394464a"
    if shutil.which("git"):
        out = subprocess.run(["git", "hash-object", str(p)], capture_output=True, text=True)
        assert out.stdout.strip() == git_blob_hash(p)


def test_report_round_trip(tmp_path):
    feat = tmp_path / "x.feat"
    feat.write_text("1 1:2\n", encoding="utf-8")
    metrics = evaluate([1, 0, 1, 1, 0, 0, 1], [1, 0, 0, 1, 1, 0, 1])
    dist = multirun_forest(PipelineConfig(n_trees=3), separable(20), separable(20, 1), runs=3)
    ut = mann_whitney([0.1, 0.3, 1 / 3], [0.2, 2 / 7])
    doc = emit_report(tmp_path / "r.json", {"seed": 42, "nmax": 10},
                      {"metrics": metrics, "dist": dist, "utest": ut}, [feat])
    text = (tmp_path / "r.json").read_text(encoding="utf-8")
    back = json.loads(text)
    assert back == doc
    assert back["format_version"] == 1
    assert back["results"]["metrics"]["weighted_f1"] == metrics.weighted_f1
    assert back["results"]["dist"]["values"] == dist.values
    assert back["results"]["utest"]["p_two_sided"] == ut.p_two_sided
    assert back["inputs"][0]["git_blob_sha1"] == git_blob_hash(feat)
    assert set(back["results"]["dist"]["summary"]) == {"n", "min", "q1", "median", "q3",
                                                       "max", "mean"}
    # stable key order: rewriting the parsed document reproduces the file
    assert json.dumps(back, indent=2, sort_keys=True) + "\n" == text


def test_distribution_csv(tmp_path):
    dist = multirun_forest(PipelineConfig(n_trees=3), separable(20), separable(20, 1), runs=4)
    write_distribution_csv(dist, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "run,seed,weighted_f1,bug_f1"
    assert len(lines) == 5
    run, seed, wf, bf = lines[2].split(",")
    assert int(run) == 1 and int(seed) == dist.seeds[1]
    assert float(wf) == dist.values[1] and float(bf) == dist.bug_f1[1]
    assert not math.isnan(float(wf))
