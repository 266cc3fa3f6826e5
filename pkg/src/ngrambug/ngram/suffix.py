"""Token-level enhanced suffix array: prefix-doubling SA, Kasai LCP, lcp-interval walk."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ngrambug.corpus import Corpus
from ngrambug.errors import EmptyCorpus


@dataclass(frozen=True, eq=False)
class SuffixIndex:
    sa: np.ndarray
    lcp: np.ndarray
    doc_of: np.ndarray
    stream: np.ndarray

    def __len__(self) -> int:
        return len(self.sa)


@numba.njit(cache=True)
def _doubling(rank0, order0):
    # rank0: dense ranks in [0, n); order0: positions sorted by rank0.
    n = rank0.shape[0]
    sa = order0.copy()
    rank = rank0.copy()
    tmp = np.empty(n, dtype=np.int64)
    new_rank = np.empty(n, dtype=np.int64)
    cnt = np.empty(n + 1, dtype=np.int64)
    # ranks after the first pass
    max_rank = 0
    for i in range(n):
        if rank[i] > max_rank:
            max_rank = rank[i]
    k = 1
    while max_rank < n - 1:
        # order by second key: suffixes with i + k >= n first, then by rank[i + k]
        t = 0
        for i in range(n - k, n):
            tmp[t] = i
            t += 1
        for j in range(n):
            p = sa[j]
            if p >= k:
                tmp[t] = p - k
                t += 1
        # stable counting sort of tmp by first key
        for r in range(max_rank + 2):
            cnt[r] = 0
        for i in range(n):
            cnt[rank[i] + 1] += 1
        for r in range(1, max_rank + 2):
            cnt[r] += cnt[r - 1]
        for j in range(n):
            p = tmp[j]
            sa[cnt[rank[p]]] = p
            cnt[rank[p]] += 1
        new_rank[sa[0]] = 0
        for j in range(1, n):
            a = sa[j - 1]
            b = sa[j]
            ra2 = rank[a + k] if a + k < n else -1
            rb2 = rank[b + k] if b + k < n else -1
            if rank[a] == rank[b] and ra2 == rb2:
                new_rank[b] = new_rank[a]
            else:
                new_rank[b] = new_rank[a] + 1
        for i in range(n):
            rank[i] = new_rank[i]
        max_rank = rank[sa[n - 1]]
        k *= 2
    return sa


@numba.njit(cache=True)
def _kasai(stream, sa):
    n = sa.shape[0]
    rank = np.empty(n, dtype=np.int64)
    for i in range(n):
        rank[sa[i]] = i
    lcp = np.zeros(n, dtype=np.int64)
    h = 0
    for i in range(n):
        r = rank[i]
        if r > 0:
            j = sa[r - 1]
            while i + h < n and j + h < n and stream[i + h] == stream[j + h]:
                h += 1
            lcp[r] = h
            if h > 0:
                h -= 1
        else:
            h = 0
    return lcp


def suffix_array(stream: np.ndarray) -> np.ndarray:
    """Suffix array of an integer sequence in O(n log n).

    One comparison sort seeds the ranks, then each doubling round is two linear
    counting-sort passes.
    """
    stream = np.asarray(stream, dtype=np.int64)
    if len(stream) == 0:
        return np.empty(0, dtype=np.int64)
    _, rank0 = np.unique(stream, return_inverse=True)
    rank0 = rank0.astype(np.int64).ravel()
    order0 = np.argsort(rank0, kind="stable").astype(np.int64)
    return _doubling(rank0, order0)


def lcp_array(stream: np.ndarray, sa: np.ndarray) -> np.ndarray:
    return _kasai(np.asarray(stream, dtype=np.int64), np.asarray(sa, dtype=np.int64))


def build_suffix_index(corpus: Corpus) -> SuffixIndex:
    if corpus.num_docs == 0:
        raise EmptyCorpus("cannot index an empty corpus")
    stream = np.asarray(corpus.token_stream, dtype=np.int64)
    sa = suffix_array(stream)
    lcp = lcp_array(stream, sa)
    return SuffixIndex(sa=sa, lcp=lcp, doc_of=corpus.doc_of_position(), stream=stream)


@numba.njit(cache=True)
def _lcp_intervals(sa, lcp, doc_of, nmax):
    """Bottom-up walk over lcp intervals.

    Returns (lb, rb, lcp, parent_lcp, df) for every interval with lcp > 0 whose
    parent lcp is below ``nmax``; deeper intervals cannot emit new N-grams.
    """
    n = sa.shape[0]
    cap = max(n, 1)
    out_lb = np.empty(cap, dtype=np.int64)
    out_rb = np.empty(cap, dtype=np.int64)
    out_l = np.empty(cap, dtype=np.int64)
    out_pl = np.empty(cap, dtype=np.int64)
    out_df = np.empty(cap, dtype=np.int64)
    m = 0
    st_l = np.empty(n + 1, dtype=np.int64)
    st_lb = np.empty(n + 1, dtype=np.int64)
    top = 0
    st_l[0] = 0
    st_lb[0] = 0
    ndocs = 0
    for i in range(n):
        if doc_of[i] + 1 > ndocs:
            ndocs = doc_of[i] + 1
    mark = np.full(ndocs, -1, dtype=np.int64)
    for i in range(1, n + 1):
        cur = lcp[i] if i < n else 0
        lb = i - 1
        while cur < st_l[top]:
            l_top = st_l[top]
            lb = st_lb[top]
            top -= 1
            parent = cur if cur > st_l[top] else st_l[top]
            rb = i - 1
            if parent < nmax:
                df = 0
                for j in range(lb, rb + 1):
                    d = doc_of[sa[j]]
                    if mark[d] != m:
                        mark[d] = m
                        df += 1
                out_lb[m] = lb
                out_rb[m] = rb
                out_l[m] = l_top
                out_pl[m] = parent
                out_df[m] = df
                m += 1
        if cur > st_l[top]:
            top += 1
            st_l[top] = cur
            st_lb[top] = lb
    return out_lb[:m], out_rb[:m], out_l[:m], out_pl[:m], out_df[:m]


def lcp_intervals(index: SuffixIndex, nmax: int):
    return _lcp_intervals(index.sa, index.lcp, index.doc_of, int(nmax))
