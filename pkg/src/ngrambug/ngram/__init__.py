from ngrambug.ngram.dictionary import (
    DEFAULT_NMAX,
    Dictionary,
    NGramEntry,
    build_dictionary,
    compute_sdf,
    enumerate_ngrams,
    read_dictionary,
    weight,
    write_dictionary,
)
from ngrambug.ngram.suffix import SuffixIndex, build_suffix_index, lcp_array, suffix_array

__all__ = [
    "DEFAULT_NMAX",
    "Dictionary",
    "NGramEntry",
    "SuffixIndex",
    "build_dictionary",
    "build_suffix_index",
    "compute_sdf",
    "enumerate_ngrams",
    "lcp_array",
    "read_dictionary",
    "suffix_array",
    "weight",
    "write_dictionary",
]
