"""Report ingestion: label files, tracker fetching, tokenization and corpus assembly."""

from __future__ import annotations

import csv
import logging
import os
import re
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ngrambug.errors import (
    BadTimestamp,
    DuplicateId,
    EmptyCorpus,
    HttpError,
    MissingColumn,
    MissingText,
    MissingTimestamp,
    NotFound,
    UnknownLabel,
)

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ("project", "report_id", "original_type", "corrected_type", "created_at")

# Closed set of corrected types; only BUG is the positive class.
LABEL_SET = frozenset(
    {"BUG", "RFE", "IMPR", "DOC", "REFAC", "BACKPORT", "CLEANUP", "SPEC", "TASK", "TEST", "OTHER"}
)

MAX_TOKEN_LEN = 64
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


class Label(IntEnum):
    NONBUG = 0
    BUG = 1


BUG = Label.BUG
NONBUG = Label.NONBUG


@dataclass(frozen=True)
class LabelRecord:
    project: str
    report_id: str
    original_type: str
    corrected_type: str
    created_at: datetime


@dataclass(frozen=True)
class Document:
    doc_id: tuple[str, str]
    tokens: tuple[str, ...]
    label: Label
    created_at: datetime | None = None


@dataclass(frozen=True, eq=False)
class Corpus:
    """An ordered, immutable collection of documents plus an integer token stream.

    The stream encodes real tokens as ``num_docs + rank`` where ``rank`` is the
    token's position in the sorted vocabulary, so integer order equals string
    order. Document ``i`` is terminated by sentinel ``i``: sentinels sort below
    every real token and are pairwise distinct.
    """

    documents: tuple[Document, ...]
    vocab: tuple[str, ...]
    token_stream: np.ndarray
    doc_offsets: np.ndarray
    token_ids: Mapping[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def num_docs(self) -> int:
        return len(self.documents)

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(d.label) for d in self.documents], dtype=np.int8)

    @property
    def doc_ids(self) -> list[tuple[str, str]]:
        return [d.doc_id for d in self.documents]

    def is_sentinel(self, token_id: int) -> bool:
        return token_id < self.num_docs

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        base = self.num_docs
        return tuple(self.vocab[i - base] for i in ids)

    def encode(self, tokens: Iterable[str]) -> list[int] | None:
        """Integer ids for ``tokens``, or None if any token is out of vocabulary."""
        out = []
        for t in tokens:
            i = self.token_ids.get(t)
            if i is None:
                return None
            out.append(i)
        return out

    def doc_token_ids(self, i: int) -> np.ndarray:
        start = self.doc_offsets[i]
        return self.token_stream[start:start + len(self.documents[i].tokens)]

    def doc_of_position(self) -> np.ndarray:
        """Document index of every stream position (sentinels belong to their document)."""
        lengths = np.array([len(d.tokens) + 1 for d in self.documents], dtype=np.int64)
        return np.repeat(np.arange(self.num_docs, dtype=np.int64), lengths)

    def chronological(self) -> list[int]:
        """Document indices ordered by (created_at, doc_id); a view, not a mutation."""
        for d in self.documents:
            if d.created_at is None:
                raise MissingTimestamp(f"document {d.doc_id} has no timestamp")
        return sorted(range(self.num_docs),
                      key=lambda i: (self.documents[i].created_at, self.documents[i].doc_id))

    def split_stream(self) -> list[tuple[str, ...]]:
        """Recover each document's tokens by cutting the stream at sentinels."""
        out, current = [], []
        for tid in self.token_stream.tolist():
            if tid < self.num_docs:
                out.append(self.decode(current))
                current = []
            else:
                current.append(tid)
        return out


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime at second precision."""
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise BadTimestamp(f"not an ISO-8601 timestamp: {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def parse_labels(path: str | os.PathLike) -> list[LabelRecord]:
    """Read a label CSV with header ``project,report_id,original_type,corrected_type,created_at``."""
    records: list[LabelRecord] = []
    seen: set[tuple[str, str]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in LABEL_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{path}: header lacks {', '.join(missing)}")
        reader.fieldnames = header
        for lineno, row in enumerate(reader, start=2):
            project = row["project"].strip()
            report_id = row["report_id"].strip()
            if not report_id:
                raise DuplicateId(f"{path}:{lineno}: empty report_id")
            key = (project, report_id)
            if key in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate id {project}/{report_id}")
            seen.add(key)
            corrected = row["corrected_type"].strip().upper()
            if corrected not in LABEL_SET:
                raise UnknownLabel(f"{path}:{lineno}: unknown corrected_type {corrected!r}")
            try:
                created = parse_timestamp(row["created_at"] or "")
            except BadTimestamp as exc:
                raise BadTimestamp(f"{path}:{lineno}: {exc}") from None
            records.append(LabelRecord(project, report_id, row["original_type"].strip().upper(),
                                       corrected, created))
    return records


def tokenize(raw: str) -> list[str]:
    """Lowercase, map every non ``[a-z0-9]`` character to a space and split.

    No stemming and no stopword removal; tokens over 64 characters are dropped.

    >>> tokenize("if (x == null) { throw NPE; }")
    ['if', 'x', 'null', 'throw', 'npe']
    """
    return [t for t in _NON_ALNUM.sub(" ", raw.lower()).split() if len(t) <= MAX_TOKEN_LEN]


def label_of(corrected_type: str) -> Label:
    if corrected_type not in LABEL_SET:
        raise UnknownLabel(f"unknown corrected_type {corrected_type!r}")
    return BUG if corrected_type == "BUG" else NONBUG


def corpus_from_documents(documents: Sequence[Document]) -> Corpus:
    """Assemble the sentinel-delimited integer stream for ``documents``."""
    documents = tuple(documents)
    seen: set[tuple[str, str]] = set()
    for d in documents:
        if d.doc_id in seen:
            raise DuplicateId(f"duplicate document id {d.doc_id[0]}/{d.doc_id[1]}")
        seen.add(d.doc_id)
    vocab = tuple(sorted({t for d in documents for t in d.tokens}))
    base = len(documents)
    token_ids = {t: base + i for i, t in enumerate(vocab)}
    total = sum(len(d.tokens) + 1 for d in documents)
    stream = np.empty(total, dtype=np.int64)
    offsets = np.empty(len(documents), dtype=np.int64)
    pos = 0
    for i, d in enumerate(documents):
        offsets[i] = pos
        n = len(d.tokens)
        stream[pos:pos + n] = [token_ids[t] for t in d.tokens]
        stream[pos + n] = i
        pos += n + 1
    stream.setflags(write=False)
    offsets.setflags(write=False)
    return Corpus(documents, vocab, stream, offsets, token_ids)


def build_corpus(labels: Sequence[LabelRecord], texts: Mapping) -> Corpus:
    """Tokenize the text of every labelled report, in label order.

    ``texts`` is keyed by report_id or by (project, report_id).
    """
    docs = []
    for rec in labels:
        raw = texts.get((rec.project, rec.report_id))
        if raw is None:
            raw = texts.get(rec.report_id)
        if raw is None:
            raise MissingText(f"no text for {rec.project}/{rec.report_id}")
        docs.append(Document((rec.project, rec.report_id), tuple(tokenize(raw)),
                             label_of(rec.corrected_type), rec.created_at))
    return corpus_from_documents(docs)


def merge_corpora(corpora: Sequence[Corpus]) -> Corpus:
    if len(corpora) == 1:
        return corpora[0]
    return corpus_from_documents([d for c in corpora for d in c.documents])


def cache_path(cache_dir: str | os.PathLike, project: str, report_id: str) -> Path:
    return Path(cache_dir) / project / f"{report_id}.txt"


def load_texts(labels: Sequence[LabelRecord], cache_dir: str | os.PathLike) -> dict:
    """Read ``<cache_dir>/<project>/<report_id>.txt`` for every label that has one."""
    texts = {}
    for rec in labels:
        p = cache_path(cache_dir, rec.project, rec.report_id)
        if p.exists():
            texts[(rec.project, rec.report_id)] = p.read_text(encoding="utf-8")
    return texts


def load_corpus(label_paths: Sequence[str | os.PathLike], cache_dir: str | os.PathLike) -> Corpus:
    """One corpus per label file, merged (a single file yields that corpus)."""
    corpora = []
    for path in label_paths:
        labels = parse_labels(path)
        corpora.append(build_corpus(labels, load_texts(labels, cache_dir)))
    corpus = merge_corpora(corpora)
    if corpus.num_docs == 0:
        raise EmptyCorpus("corpus has no documents")
    return corpus


# --- tracker fetching -------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".txt")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def issue_text(payload: dict) -> str:
    """Summary and description of a tracker JSON issue, joined by a newline."""
    fields = payload.get("fields") or {}
    parts = [fields.get("summary") or "", fields.get("description") or ""]
    return "\n".join(p for p in parts if p)


def fetch_report(base_url: str, report_id: str, cache_dir: str | os.PathLike, *,
                 session=None, retries: int = 3, backoff: float = 1.0,
                 timeout: float = 30.0, sleep=None) -> str:
    """Return the summary + description of ``report_id``, using ``cache_dir`` first.

    Non-2xx responses are retried ``retries`` times with exponential backoff
    (``backoff``, ``2*backoff``, ...). A 404 raises NotFound without retrying.
    """
    path = Path(cache_dir) / f"{report_id}.txt"
    if path.exists():
        return path.read_text(encoding="utf-8")
    sleep = sleep or time.sleep
    if session is None:
        import requests

        session = requests.Session()
    url = f"{base_url.rstrip('/')}/rest/api/2/issue/{report_id}"
    params = {"fields": "summary,description"}
    delay = backoff
    last = None
    for attempt in range(retries + 1):
        try:
            resp = session.get(url, params=params, timeout=timeout,
                               headers={"Accept": "application/json"})
        except Exception as exc:  # connection-level failure, retried like a 5xx
            last = HttpError(f"GET {url} failed: {exc}")
        else:
            if resp.status_code == 404:
                raise NotFound(f"GET {url}: 404 not found", status=404)
            if 200 <= resp.status_code < 300:
                text = issue_text(resp.json())
                _atomic_write(path, text)
                return text
            last = HttpError(f"GET {url}: HTTP {resp.status_code}", status=resp.status_code)
        if attempt < retries:
            logger.debug("retrying %s in %.1fs", url, delay)
            sleep(delay)
            delay *= 2
    raise last


@dataclass
class FetchSummary:
    fetched: list = field(default_factory=list)
    cached: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    failed: list = field(default_factory=list)


def fetch_all(labels: Sequence[LabelRecord], base_url: str, cache_dir: str | os.PathLike,
              workers: int = 4, **kwargs) -> FetchSummary:
    """Populate ``<cache_dir>/<project>/`` for every label; at most 4 requests in flight."""
    summary = FetchSummary()
    todo = []
    for rec in labels:
        if cache_path(cache_dir, rec.project, rec.report_id).exists():
            summary.cached.append(rec)
        else:
            todo.append(rec)

    def one(rec):
        try:
            fetch_report(base_url, rec.report_id, Path(cache_dir) / rec.project, **kwargs)
            return rec, None
        except HttpError as exc:
            return rec, exc

    with ThreadPoolExecutor(max_workers=max(1, min(workers, 4))) as pool:
        for rec, exc in pool.map(one, todo):
            if exc is None:
                summary.fetched.append(rec)
            elif isinstance(exc, NotFound):
                summary.missing.append(rec)
            else:
                summary.failed.append((rec, exc))
    return summary
