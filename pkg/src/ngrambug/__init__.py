"""Bug vs non-bug classification of issue reports using N-gram IDF key terms."""

from ngrambug.corpus import (
    BUG,
    NONBUG,
    Corpus,
    Document,
    LabelRecord,
    build_corpus,
    load_corpus,
    merge_corpora,
    parse_labels,
    tokenize,
)
from ngrambug.ngram import (
    Dictionary,
    NGramEntry,
    build_dictionary,
    build_suffix_index,
    compute_sdf,
    enumerate_ngrams,
    read_dictionary,
    weight,
    write_dictionary,
)

__version__ = "0.1.0"

__all__ = [
    "BUG",
    "NONBUG",
    "Corpus",
    "Dictionary",
    "Document",
    "LabelRecord",
    "NGramEntry",
    "build_corpus",
    "build_dictionary",
    "build_suffix_index",
    "compute_sdf",
    "enumerate_ngrams",
    "load_corpus",
    "merge_corpora",
    "parse_labels",
    "read_dictionary",
    "tokenize",
    "weight",
    "write_dictionary",
]
