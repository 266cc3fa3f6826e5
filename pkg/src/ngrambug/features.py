"""Raw-frequency feature vectors over dictionary terms, and chi-squared / CFS selection."""

from __future__ import annotations

import heapq
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ngrambug.corpus import Corpus
from ngrambug.errors import DegenerateClass, ParseError
from ngrambug.ngram import Dictionary

DEFAULT_CHI2_K = 200
CFS_MAX_STALE = 5


@dataclass(eq=False)
class SparseFeatureMatrix:
    """Documents x features, CSR with zeros omitted. Labels are 1 for BUG, 0 otherwise."""

    X: sp.csr_matrix
    labels: np.ndarray
    doc_ids: list
    feature_names: list

    def __post_init__(self):
        self.X = sp.csr_matrix(self.X, dtype=np.float64)
        self.X.sum_duplicates()
        self.X.sort_indices()
        self.X.eliminate_zeros()
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.X.shape != (len(self.labels), len(self.feature_names)):
            raise ValueError(f"matrix shape {self.X.shape} does not match "
                             f"{len(self.labels)} labels x {len(self.feature_names)} names")
        if len(self.doc_ids) != len(self.labels):
            raise ValueError("doc_ids and labels differ in length")

    @property
    def num_rows(self) -> int:
        return self.X.shape[0]

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    def row(self, i: int) -> list[tuple[int, float]]:
        start, end = self.X.indptr[i], self.X.indptr[i + 1]
        return list(zip(self.X.indices[start:end].tolist(), self.X.data[start:end].tolist()))

    @property
    def rows(self):
        for i in range(self.num_rows):
            yield self.doc_ids[i], int(self.labels[i]), self.row(i)

    def take(self, idx) -> SparseFeatureMatrix:
        idx = np.asarray(idx, dtype=np.int64)
        return SparseFeatureMatrix(self.X[idx], self.labels[idx],
                                   [self.doc_ids[i] for i in idx], list(self.feature_names))

    def dense(self) -> np.ndarray:
        return self.X.toarray()

    def equals(self, other: SparseFeatureMatrix) -> bool:
        return (self.X.shape == other.X.shape
                and (self.X != other.X).nnz == 0
                and np.array_equal(self.labels, other.labels)
                and list(self.doc_ids) == list(other.doc_ids)
                and list(self.feature_names) == list(other.feature_names))


@dataclass
class SelectionResult:
    kept: np.ndarray
    scores: dict
    method: str
    merit: float | None = None
    extra: dict = field(default_factory=dict)


# --- vectorization ----------------------------------------------------------

def vectorize(corpus: Corpus, dictionary: Dictionary) -> SparseFeatureMatrix:
    """Count (overlapping) occurrences of every dictionary term in every document."""
    index = dictionary.term_index
    prefixes = set()
    for tokens in index:
        for i in range(1, len(tokens) + 1):
            prefixes.add(tokens[:i])
    max_n = dictionary.max_n
    indptr, indices, data = [0], [], []
    for doc in corpus.documents:
        toks = doc.tokens
        counts: dict[int, int] = {}
        for start in range(len(toks)):
            for end in range(start + 1, min(start + max_n, len(toks)) + 1):
                window = toks[start:end]
                if window not in prefixes:
                    break
                j = index.get(window)
                if j is not None:
                    counts[j] = counts.get(j, 0) + 1
        for j in sorted(counts):
            indices.append(j)
            data.append(counts[j])
        indptr.append(len(indices))
    X = sp.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)),
                      shape=(corpus.num_docs, len(dictionary)))
    names = [e.tokens for e in dictionary.entries]
    return SparseFeatureMatrix(X, corpus.labels, corpus.doc_ids, names)


# --- chi-squared ------------------------------------------------------------

def chi2_scores(m: SparseFeatureMatrix) -> np.ndarray:
    """Count-based chi-squared of every feature against the class.

    Observed = per-class sums of the feature's counts; expected = the feature's
    total split in proportion to each class's share of all counts.
    """
    y = m.labels
    observed = np.vstack([np.asarray(m.X[y == c].sum(axis=0)).ravel() for c in (0, 1)])
    class_totals = observed.sum(axis=1)
    if np.any(class_totals <= 0):
        raise DegenerateClass("a class has zero total count")
    share = class_totals / class_totals.sum()
    expected = share[:, None] * observed.sum(axis=0)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def select_chi2(m: SparseFeatureMatrix, k: int = DEFAULT_CHI2_K) -> SelectionResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = chi2_scores(m)
    order = np.lexsort((np.arange(len(scores)), -scores))
    kept = np.sort(order[:k])
    return SelectionResult(kept, {int(i): float(s) for i, s in enumerate(scores)}, "CHI2")


# --- CFS --------------------------------------------------------------------

def _plogp(counts, n):
    p = np.asarray(counts, dtype=np.float64) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, -p * np.log2(p), 0.0)


def _binary_entropy(ones, n):
    return _plogp(ones, n) + _plogp(n - np.asarray(ones), n)


def _su_from_counts(a, b, c11, n):
    """Symmetrical uncertainty of binary variables from marginal and joint counts."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c11 = np.asarray(c11, dtype=np.float64)
    hx = _binary_entropy(a, n)
    hy = _binary_entropy(b, n)
    hxy = (_plogp(c11, n) + _plogp(a - c11, n) + _plogp(b - c11, n)
           + _plogp(n - a - b + c11, n))
    denom = hx + hy
    with np.errstate(divide="ignore", invalid="ignore"):
        su = np.where(denom > 0, 2.0 * (hx + hy - hxy) / denom, 0.0)
    return np.clip(su, 0.0, 1.0)


class _CfsState:
    def __init__(self, m: SparseFeatureMatrix):
        y = m.labels.astype(np.float64)
        if y.sum() == 0 or y.sum() == len(y):
            raise DegenerateClass("CFS needs both classes present")
        self.B = sp.csc_matrix((m.X > 0).astype(np.float64))
        self.n = float(m.num_rows)
        self.ones = np.asarray(self.B.sum(axis=0)).ravel()
        self.rcf = _su_from_counts(self.ones, y.sum(), self.B.T @ y, self.n)
        self._rows: dict[int, np.ndarray] = {}

    def su_row(self, g: int) -> np.ndarray:
        row = self._rows.get(g)
        if row is None:
            col = self.B[:, g].toarray().ravel()
            row = _su_from_counts(self.ones, self.ones[g], self.B.T @ col, self.n)
            self._rows[g] = row
        return row

    def merit(self, subset: Sequence[int]) -> float:
        k = len(subset)
        if k == 0:
            return 0.0
        num = float(self.rcf[list(subset)].sum())
        pairs = sum(float(self.su_row(a)[b]) for i, a in enumerate(subset) for b in subset[i + 1:])
        return num / np.sqrt(k + 2.0 * pairs)


def cfs_merit(m: SparseFeatureMatrix, subset: Sequence[int]) -> float:
    return _CfsState(m).merit(sorted(subset))


def select_cfs(m: SparseFeatureMatrix, max_stale: int = CFS_MAX_STALE) -> SelectionResult:
    """Correlation-based feature selection with forward best-first search.

    Merit of a k-subset is k*mean(SU feature-class) / sqrt(k + k(k-1)*mean(SU
    feature-feature)). The search pops the best open subset, scores all its
    one-feature extensions, and stops after ``max_stale`` consecutive pops that
    fail to improve the best merit seen.
    """
    if m.num_features < 2:
        raise ValueError("CFS needs at least 2 features")
    st = _CfsState(m)
    nf = m.num_features
    all_idx = np.arange(nf)
    # heap of (-merit, size, subset, sum_cf, sum_pairs)
    heap = [(-0.0, 0, (), 0.0, 0.0)]
    visited = {frozenset()}
    best_merit, best = 0.0, ()
    stale = 0
    while heap and stale < max_stale:
        _, _, subset, sum_cf, sum_pairs = heapq.heappop(heap)
        k = len(subset) + 1
        pair_add = np.zeros(nf)
        for s in subset:
            pair_add += st.su_row(s)
        cand_cf = sum_cf + st.rcf
        cand_pairs = sum_pairs + pair_add
        merits = cand_cf / np.sqrt(k + 2.0 * cand_pairs)
        members = set(subset)
        improved = False
        for f in all_idx[np.argsort(-merits, kind="stable")].tolist():
            if f in members:
                continue
            new = tuple(sorted(subset + (f,)))
            key = frozenset(new)
            if key in visited:
                continue
            visited.add(key)
            mer = float(merits[f])
            heapq.heappush(heap, (-mer, k, new, float(cand_cf[f]), float(cand_pairs[f])))
            if mer > best_merit + 1e-12:
                best_merit, best = mer, new
                improved = True
        stale = 0 if improved else stale + 1
    kept = np.array(sorted(best), dtype=np.int64)
    return SelectionResult(kept, {int(f): best_merit for f in kept}, "CFS", merit=best_merit,
                           extra={"feature_class_su": {int(f): float(st.rcf[f]) for f in kept}})


def apply_selection(m: SparseFeatureMatrix, s: SelectionResult) -> SparseFeatureMatrix:
    kept = np.asarray(s.kept, dtype=np.int64)
    return SparseFeatureMatrix(m.X[:, kept], m.labels.copy(), list(m.doc_ids),
                               [m.feature_names[i] for i in kept])


# --- feature files ----------------------------------------------------------

def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _name_text(name) -> str:
    return " ".join(name) if isinstance(name, tuple) else str(name)


def write_features(m: SparseFeatureMatrix, path: str | os.PathLike) -> None:
    """``label ordinal:value ...`` per document (1-based ordinals) plus .docids/.names."""
    path = str(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(m.num_rows):
            pairs = " ".join(f"{j + 1}:{_fmt(v)}" for j, v in m.row(i))
            fh.write(f"{int(m.labels[i])} {pairs}".rstrip() + "\n")
    with open(path + ".docids", "w", encoding="utf-8", newline="\n") as fh:
        for project, rid in m.doc_ids:
            fh.write(f"{project}\t{rid}\n")
    with open(path + ".names", "w", encoding="utf-8", newline="\n") as fh:
        for name in m.feature_names:
            fh.write(_name_text(name) + "\n")


def read_features(path: str | os.PathLike) -> SparseFeatureMatrix:
    path = str(path)
    with open(path + ".names", encoding="utf-8") as fh:
        names = [tuple(line.rstrip("\n").split(" ")) for line in fh]
    with open(path + ".docids", encoding="utf-8") as fh:
        doc_ids = []
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}.docids: expected project<TAB>report_id", line=lineno)
            doc_ids.append((parts[0], parts[1]))
    labels, indptr, indices, data = [], [0], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                raise ParseError(f"{path}: empty line", line=lineno)
            if fields[0] not in ("0", "1"):
                raise ParseError(f"{path}: label must be 0 or 1", line=lineno)
            labels.append(int(fields[0]))
            prev = 0
            for item in fields[1:]:
                try:
                    o, v = item.split(":")
                    o, v = int(o), float(v)
                except ValueError:
                    raise ParseError(f"{path}: bad pair {item!r}", line=lineno) from None
                if o <= prev or o > len(names):
                    raise ParseError(f"{path}: ordinal {o} out of order or range", line=lineno)
                prev = o
                indices.append(o - 1)
                data.append(v)
            indptr.append(len(indices))
    if len(labels) != len(doc_ids):
        raise ParseError(f"{path}: {len(labels)} rows but {len(doc_ids)} doc ids")
    X = sp.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)), shape=(len(labels), len(names)))
    return SparseFeatureMatrix(X, np.array(labels), doc_ids, names)
