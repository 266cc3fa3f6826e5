import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ngrambug.corpus import BUG, NONBUG, Document, corpus_from_documents  # noqa: E402


def make_corpus(token_lists, labels=None, times=None, project="P"):
    """Corpus from raw token lists; labels default to alternating BUG/NONBUG."""
    base = datetime(2012, 1, 1, tzinfo=timezone.utc)
    docs = []
    for i, toks in enumerate(token_lists):
        label = labels[i] if labels is not None else (BUG if i % 2 == 0 else NONBUG)
        ts = times[i] if times is not None else base + timedelta(days=i)
        docs.append(Document((project, f"{project}-{i + 1}"), tuple(toks), label, ts))
    return corpus_from_documents(docs)


@pytest.fixture
def corpus_factory():
    return make_corpus


def write_labels(path, rows):
    lines = ["project,report_id,original_type,corrected_type,created_at"]
    lines += [",".join(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line
    return record
