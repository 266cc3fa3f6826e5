"""Synthetic labelled report corpora for smoke tests and demos.

BUG reports contain "null pointer exception" / "how to reproduce" as phrases,
NONBUG reports contain "performance test" / "improvement". Every report also
carries the words of both classes' phrases scattered out of order, so only the
word order separates the classes.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np

from ngrambug.corpus import Document, LabelRecord, corpus_from_documents, label_of, tokenize

BUG_PHRASES = ("null pointer exception", "how to reproduce")
NONBUG_PHRASES = ("performance test", "improvement")

FILLER = tuple(
    "the a of in on for with when after before this that it is was be we can should "
    "module server client request response config file user page build release version "
    "update change method class call value error log output input thread cache index "
    "query field list map data buffer stream socket session token handler parser writer "
    "reader document report system api plugin option default result code line path node".split()
)


def _scatter_words():
    words = []
    for p in BUG_PHRASES + NONBUG_PHRASES:
        words.extend(p.split())
    return words


def generate_reports(n_docs: int = 400, seed: int = 0, project: str = "SYN",
                     doc_len: tuple[int, int] = (20, 40), bug_fraction: float = 0.5):
    """Return (label records, texts keyed by report_id)."""
    rng = np.random.default_rng(seed)
    scatter = _scatter_words()
    start = datetime(2010, 1, 1, tzinfo=timezone.utc)
    labels, texts = [], {}
    n_bug = int(round(n_docs * bug_fraction))
    is_bug = np.array([1] * n_bug + [0] * (n_docs - n_bug))
    rng.shuffle(is_bug)
    for i in range(n_docs):
        bug = bool(is_bug[i])
        words = list(rng.choice(FILLER, size=int(rng.integers(*doc_len))))
        # decoy words, shuffled so they never form a class phrase
        decoys = list(rng.choice(scatter, size=int(rng.integers(2, 6))))
        for w in decoys:
            words.insert(int(rng.integers(0, len(words) + 1)), w)
        phrases = BUG_PHRASES if bug else NONBUG_PHRASES
        for p in rng.choice(phrases, size=int(rng.integers(1, 3)), replace=True):
            words.insert(int(rng.integers(0, len(words) + 1)), str(p))
        rid = f"{project}-{i + 1}"
        created = start + timedelta(hours=int(rng.integers(0, 24 * 365 * 3)))
        kind = "BUG" if bug else str(rng.choice(["RFE", "IMPR", "DOC", "TASK"]))
        labels.append(LabelRecord(project, rid, "BUG", kind, created))
        texts[rid] = " ".join(words)
    return labels, texts


def generate_corpus(n_docs: int = 400, seed: int = 0, **kwargs):
    labels, texts = generate_reports(n_docs, seed, **kwargs)
    docs = [Document((r.project, r.report_id), tuple(tokenize(texts[r.report_id])),
                     label_of(r.corrected_type), r.created_at) for r in labels]
    return corpus_from_documents(docs)
