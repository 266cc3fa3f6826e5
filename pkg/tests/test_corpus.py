from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, strategies as st

from conftest import make_corpus, write_labels
from ngrambug.corpus import (
    BUG,
    LABEL_SET,
    NONBUG,
    LabelRecord,
    build_corpus,
    fetch_all,
    fetch_report,
    label_of,
    load_corpus,
    merge_corpora,
    parse_labels,
    tokenize,
)
from ngrambug.errors import (
    BadTimestamp,
    DuplicateId,
    HttpError,
    MissingColumn,
    MissingText,
    NotFound,
    UnknownLabel,
)


def test_parse_single_row(tmp_path):
    p = write_labels(tmp_path / "l.csv", [("HTTPCLIENT", "HTTPCLIENT-587", "BUG", "BUG",
                                           "2006-03-01T10:00:00Z")])
    (rec,) = parse_labels(p)
    assert rec == LabelRecord("HTTPCLIENT", "HTTPCLIENT-587", "BUG", "BUG",
                              datetime(2006, 3, 1, 10, tzinfo=timezone.utc))


def test_parse_httpclient_sized_file(tmp_path):
    # 745 reports, 305 bugs: the HTTPClient subject's published counts
    rows = [("HTTPCLIENT", f"HTTPCLIENT-{i}", "BUG", "BUG" if i < 305 else "RFE",
             f"2005-01-01T00:00:{i % 60:02d}Z") for i in range(745)]
    recs = parse_labels(write_labels(tmp_path / "h.csv", rows))
    assert len(recs) == 745
    assert sum(r.corrected_type == "BUG" for r in recs) == 305


def test_quoted_fields_and_offsets(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text('project,report_id,original_type,corrected_type,created_at\n'
                 '"LUCENE","LUCENE-1","BUG","IMPR","2007-05-05T12:00:00+02:00"\n')
    (rec,) = parse_labels(p)
    assert rec.created_at == datetime(2007, 5, 5, 10, tzinfo=timezone.utc)
    assert label_of(rec.corrected_type) == NONBUG


def test_bad_timestamp(tmp_path):
    p = write_labels(tmp_path / "b.csv", [("P", "P-1", "BUG", "BUG", "yesterday")])
    with pytest.raises(BadTimestamp):
        parse_labels(p)


def test_missing_column(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("project,report_id,original_type,corrected_type\nP,P-1,BUG,BUG\n")
    with pytest.raises(MissingColumn):
        parse_labels(p)


def test_duplicate_id(tmp_path):
    row = ("P", "P-1", "BUG", "BUG", "2010-01-01T00:00:00Z")
    with pytest.raises(DuplicateId):
        parse_labels(write_labels(tmp_path / "d.csv", [row, row]))


def test_unknown_label_rejected(tmp_path):
    p = write_labels(tmp_path / "u.csv", [("P", "P-1", "BUG", "FEATURE", "2010-01-01T00:00:00Z")])
    with pytest.raises(UnknownLabel):
        parse_labels(p)


@pytest.mark.parametrize("raw, expected", [
    ("if (x == null) { throw NPE; }", ["if", "x", "null", "throw", "npe"]),
    ("How to reproduce:", ["how", "to", "reproduce"]),
    ("", []),
    ("a+b--c==d", ["a", "b", "c", "d"]),
    ("HTTP 404 Not-Found", ["http", "404", "not", "found"]),
    ("x" * 65 + " ok", ["ok"]),
])
def test_tokenize(raw, expected):
    assert tokenize(raw) == expected


@given(st.text())
def test_tokenize_idempotent_and_alphabet(raw):
    toks = tokenize(raw)
    assert tokenize(" ".join(toks)) == toks
    for t in toks:
        assert t and all(c in "abcdefghijklmnopqrstuvwxyz0123456789" for c in t)


def test_label_mapping_total():
    for lab in LABEL_SET:
        assert label_of(lab) in (BUG, NONBUG)
    assert label_of("BUG") == BUG
    assert label_of("RFE") == NONBUG


def _records(n, project="P"):
    return [LabelRecord(project, f"{project}-{i}", "BUG", "BUG" if i % 2 else "RFE",
                        datetime(2010, 1, 1, tzinfo=timezone.utc) + timedelta(days=i))
            for i in range(n)]


def test_build_corpus_stream_layout():
    recs = _records(2)
    c = build_corpus(recs, {"P-0": "a b c", "P-1": "d e"})
    assert len(c.token_stream) == 7
    assert sum(c.is_sentinel(t) for t in c.token_stream.tolist()) == 2
    assert list(c.doc_offsets) == [0, 4]
    assert [d.label for d in c.documents] == [NONBUG, BUG]
    assert c.split_stream() == [("a", "b", "c"), ("d", "e")]


def test_build_corpus_missing_text():
    with pytest.raises(MissingText):
        build_corpus(_records(2), {"P-0": "x"})


@given(st.lists(st.lists(st.sampled_from("abcde"), max_size=8), min_size=1, max_size=8))
def test_stream_roundtrip_and_offsets(token_lists):
    c = make_corpus(token_lists)
    assert c.split_stream() == [tuple(t) for t in token_lists]
    for i, d in enumerate(c.documents):
        assert c.decode(c.doc_token_ids(i).tolist()) == d.tokens
    assert len(c.doc_offsets) == c.num_docs


def test_merge_cross_project_counts():
    sizes = {"HTTPCLIENT": 745, "JACKRABBIT": 2402, "LUCENE": 2443}
    corpora = []
    for proj, n in sizes.items():
        recs = _records(n, proj)
        corpora.append(build_corpus(recs, {r.report_id: "x y" for r in recs}))
    merged = merge_corpora(corpora)
    assert merged.num_docs == 5590
    assert merge_corpora(corpora[:1]) is corpora[0]


def test_merge_duplicate():
    c = build_corpus(_records(2), {"P-0": "a", "P-1": "b"})
    with pytest.raises(DuplicateId):
        merge_corpora([c, c])


def test_chronological_is_view():
    c = make_corpus([["a"], ["b"], ["c"]],
                    times=[datetime(2011, 1, d, tzinfo=timezone.utc) for d in (3, 1, 2)])
    assert c.chronological() == [1, 2, 0]
    assert [d.tokens for d in c.documents] == [("a",), ("b",), ("c",)]


def test_load_corpus_from_cache(tmp_path):
    labels = write_labels(tmp_path / "l.csv", [("P", "P-1", "BUG", "BUG", "2010-01-01T00:00:00Z")])
    (tmp_path / "cache" / "P").mkdir(parents=True)
    (tmp_path / "cache" / "P" / "P-1.txt").write_text("Null pointer!")
    c = load_corpus([labels], tmp_path / "cache")
    assert c.documents[0].tokens == ("null", "pointer")


# --- fetching ---------------------------------------------------------------

class FakeResponse:
    def __init__(self, status, payload=None):
        self.status_code = status
        self._payload = payload

    def json(self):
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def get(self, url, params=None, timeout=None, headers=None):
        self.calls.append((url, params))
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_fetch_concatenates_and_caches(tmp_path):
    s = FakeSession([FakeResponse(200, {"fields": {"summary": "NPE in cache",
                                                   "description": None}})])
    text = fetch_report("https://jira.example/", "X-1", tmp_path, session=s, sleep=lambda _: None)
    assert text == "NPE in cache"
    assert s.calls == [("https://jira.example/rest/api/2/issue/X-1",
                        {"fields": "summary,description"})]
    assert (tmp_path / "X-1.txt").read_text() == "NPE in cache"
    again = fetch_report("https://jira.example", "X-1", tmp_path, session=FakeSession([]))
    assert again == "NPE in cache"


def test_fetch_summary_and_description(tmp_path):
    s = FakeSession([FakeResponse(200, {"fields": {"summary": "s", "description": "d"}})])
    assert fetch_report("http://j", "X-2", tmp_path, session=s) == "s\nd"


def test_fetch_404_not_retried(tmp_path):
    s = FakeSession([FakeResponse(404)])
    with pytest.raises(NotFound):
        fetch_report("http://j", "X-3", tmp_path, session=s, sleep=lambda _: None)
    assert len(s.calls) == 1


def test_fetch_retries_with_backoff(tmp_path):
    sleeps = []
    s = FakeSession([FakeResponse(500)] * 4)
    with pytest.raises(HttpError) as err:
        fetch_report("http://j", "X-4", tmp_path, session=s, sleep=sleeps.append)
    assert not isinstance(err.value, NotFound)
    assert len(s.calls) == 4
    assert sleeps == [1.0, 2.0, 4.0]


def test_fetch_recovers_after_transient_error(tmp_path):
    s = FakeSession([ConnectionError("reset"), FakeResponse(503),
                     FakeResponse(200, {"fields": {"summary": "ok"}})])
    assert fetch_report("http://j", "X-5", tmp_path, session=s, sleep=lambda _: None) == "ok"


def test_fetch_all_counts(tmp_path):
    recs = _records(3)
    (tmp_path / "P").mkdir()
    (tmp_path / "P" / "P-0.txt").write_text("cached")
    payload = {"fields": {"summary": "t"}}
    s = FakeSession([FakeResponse(200, payload), FakeResponse(404)])
    summary = fetch_all(recs, "http://j", tmp_path, workers=1, session=s, sleep=lambda _: None)
    assert [r.report_id for r in summary.cached] == ["P-0"]
    assert [r.report_id for r in summary.fetched] == ["P-1"]
    assert [r.report_id for r in summary.missing] == ["P-2"]
    assert (tmp_path / "P" / "P-1.txt").read_text() == "t"
    assert not list((tmp_path / "P").glob(".tmp-*"))
