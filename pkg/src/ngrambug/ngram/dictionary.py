"""N-gram statistics, N-gram IDF weighting and the key-term dictionary."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ngrambug.corpus import Corpus
from ngrambug.errors import EmptyCorpus, ParseError
from ngrambug.ngram.suffix import SuffixIndex, build_suffix_index, lcp_intervals

DEFAULT_NMAX = 10
TSV_HEADER = "rank\tngram\tn\tgtf\tdf\tsdf\tweight"


@dataclass
class NGramEntry:
    tokens: tuple[str, ...]
    gtf: int
    df: int
    sdf: int | None = None
    weight: float | None = None

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class Dictionary:
    entries: tuple[NGramEntry, ...]
    term_index: dict = field(default_factory=dict)
    # sizes at each build stage, for reporting
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.term_index:
            self.term_index = {e.tokens: i for i, e in enumerate(self.entries)}
        if len(self.term_index) != len(self.entries):
            raise ValueError("duplicate token sequences in dictionary")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def max_n(self) -> int:
        return max((e.n for e in self.entries), default=0)


def enumerate_ngrams(index: SuffixIndex, corpus: Corpus, nmax: int = DEFAULT_NMAX) -> list[NGramEntry]:
    """Every repeated (gtf >= 2) within-document N-gram up to ``nmax`` tokens.

    Each lcp interval [lb, rb] with depth ``l`` and parent depth ``p`` contributes
    the prefixes of lengths p+1 .. min(l, nmax) of its suffixes, all of which
    occur exactly rb - lb + 1 times.
    """
    if nmax < 1:
        raise ValueError("nmax must be >= 1")
    lbs, rbs, depths, parents, dfs = lcp_intervals(index, nmax)
    vocab = corpus.vocab
    base = corpus.num_docs
    stream = index.stream
    sa = index.sa
    out = []
    for lb, rb, depth, parent, df in zip(lbs.tolist(), rbs.tolist(), depths.tolist(),
                                         parents.tolist(), dfs.tolist()):
        top = min(depth, nmax)
        start = int(sa[lb])
        words = [vocab[t - base] for t in stream[start:start + top].tolist()]
        gtf = rb - lb + 1
        for length in range(parent + 1, top + 1):
            out.append(NGramEntry(tuple(words[:length]), gtf, df))
    return out


def _postings(corpus: Corpus) -> dict[int, np.ndarray]:
    stream = np.asarray(corpus.token_stream)
    doc_of = corpus.doc_of_position()
    real = stream >= corpus.num_docs
    pairs = np.unique(np.stack([stream[real], doc_of[real]], axis=1), axis=0)
    if len(pairs) == 0:
        return {}
    cuts = np.flatnonzero(np.diff(pairs[:, 0])) + 1
    groups = np.split(pairs[:, 1], cuts)
    return {int(g_tok): docs for g_tok, docs in zip(pairs[np.r_[0, cuts], 0], groups)}


def compute_sdf(entries: Sequence[NGramEntry], corpus: Corpus) -> Sequence[NGramEntry]:
    """Fill ``sdf``: documents containing every distinct token of the N-gram, in any order."""
    postings = _postings(corpus)
    cache: dict[frozenset, int] = {}
    for e in entries:
        ids = corpus.encode(set(e.tokens))
        if ids is None:
            e.sdf = 0
            continue
        key = frozenset(ids)
        if len(key) == 1:
            e.sdf = len(postings[ids[0]])
            continue
        sdf = cache.get(key)
        if sdf is None:
            lists = sorted((postings[i] for i in key), key=len)
            acc = lists[0]
            for other in lists[1:]:
                acc = np.intersect1d(acc, other, assume_unique=True)
                if len(acc) == 0:
                    break
            sdf = cache[key] = len(acc)
        e.sdf = sdf
    return entries


def weight(entry: NGramEntry, num_docs: int) -> float:
    """N-gram IDF: log2(|D| * df / sdf^2). Equals plain IDF when df == sdf."""
    return math.log2(num_docs * entry.df / (entry.sdf * entry.sdf))


def _dominated(entries: Sequence[NGramEntry]) -> set[tuple[str, ...]]:
    # A strict super-N-gram with equal (gtf, df) implies a one-token extension
    # with equal (gtf, df), so checking immediate extensions is sufficient.
    stats = {e.tokens: (e.gtf, e.df) for e in entries}
    dropped = set()
    for e in entries:
        if e.n < 2:
            continue
        for sub in (e.tokens[:-1], e.tokens[1:]):
            if stats.get(sub) == (e.gtf, e.df):
                dropped.add(sub)
    return dropped


def sort_key(e: NGramEntry):
    return (-e.weight, -e.gtf, e.tokens)


def build_dictionary(corpus: Corpus, nmax: int = DEFAULT_NMAX, prune: bool = True,
                     min_df: int = 2, min_weight: float | None = None) -> Dictionary:
    """Enumerate, weight, filter and rank the key terms of ``corpus``.

    ``prune`` drops an N-gram whenever a longer N-gram containing it has the same
    gtf and df. ``min_weight`` (off by default) drops entries weighted below it.
    """
    if corpus.num_docs == 0 or len(corpus.vocab) == 0:
        raise EmptyCorpus("cannot build a dictionary from an empty corpus")
    index = build_suffix_index(corpus)
    entries = enumerate_ngrams(index, corpus, nmax)
    stats = {"enumerated": len(entries)}
    kept = [e for e in entries if e.df >= min_df]
    stats["after_df_filter"] = len(kept)
    compute_sdf(kept, corpus)
    for e in kept:
        e.weight = weight(e, corpus.num_docs)
    if prune:
        dropped = _dominated(entries)
        kept = [e for e in kept if e.tokens not in dropped]
    stats["after_prune"] = len(kept)
    if min_weight is not None:
        kept = [e for e in kept if e.weight >= min_weight]
    stats["final"] = len(kept)
    kept.sort(key=sort_key)
    return Dictionary(tuple(kept), stats=stats)


def write_dictionary(d: Dictionary, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TSV_HEADER + "\n")
        for rank, e in enumerate(d.entries, start=1):
            fh.write(f"{rank}\t{e.text}\t{e.n}\t{e.gtf}\t{e.df}\t{e.sdf}\t{e.weight:.6f}\n")


def read_dictionary(path: str | os.PathLike) -> Dictionary:
    entries = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != TSV_HEADER:
            raise ParseError(f"bad header {header!r}", line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise ParseError(f"expected 7 fields, got {len(parts)}", line=lineno)
            try:
                rank, n, gtf, df, sdf = (int(parts[i]) for i in (0, 2, 3, 4, 5))
                w = float(parts[6])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            tokens = tuple(parts[1].split(" "))
            if rank != len(entries) + 1 or n != len(tokens) or not all(tokens):
                raise ParseError("inconsistent rank, n or ngram field", line=lineno)
            if not (sdf >= df >= 1 and gtf >= df):
                raise ParseError("counts violate sdf >= df >= 1, gtf >= df", line=lineno)
            entries.append(NGramEntry(tokens, gtf, df, sdf, w))
    try:
        return Dictionary(tuple(entries))
    except ValueError as exc:
        raise ParseError(str(exc)) from None
