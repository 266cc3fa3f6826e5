"""LDA topic-membership baseline trained by collapsed Gibbs sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from ngrambug.corpus import Corpus
from ngrambug.errors import EmptyCorpus
from ngrambug.features import SparseFeatureMatrix

DEFAULT_TOPICS = 50
DEFAULT_BETA = 0.01
DEFAULT_ITERS = 1000


@dataclass(eq=False)
class LdaModel:
    K: int
    alpha: float
    beta: float
    vocab: dict
    words: np.ndarray          # word index of every token, documents concatenated
    docs: np.ndarray           # document index of every token
    assignments: np.ndarray    # topic of every token
    doc_topic: np.ndarray      # D x K
    topic_word: np.ndarray     # K x V
    topic_totals: np.ndarray   # K
    doc_lengths: np.ndarray
    doc_ids: list
    labels: np.ndarray
    log_joint: list = field(default_factory=list)

    @property
    def num_docs(self) -> int:
        return self.doc_topic.shape[0]


@numba.njit(cache=True)
def _sweep(words, docs, z, ndk, nkw, nk, alpha, beta, vbeta, uniforms):
    K = nk.shape[0]
    p = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            p[t] = total
        u = uniforms[i] * total
        k = 0
        while k < K - 1 and p[k] <= u:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


def log_joint(model: LdaModel) -> float:
    """log p(w, z | alpha, beta) of the current assignment."""
    K, V = model.topic_word.shape
    a, b = model.alpha, model.beta
    lw = (K * (gammaln(V * b) - V * gammaln(b))
          + gammaln(model.topic_word + b).sum() - gammaln(model.topic_totals + V * b).sum())
    D = model.num_docs
    lz = (D * (gammaln(K * a) - K * gammaln(a))
          + gammaln(model.doc_topic + a).sum() - gammaln(model.doc_lengths + K * a).sum())
    return float(lw + lz)


def train_lda(corpus: Corpus, K: int = DEFAULT_TOPICS, alpha: float | None = None,
              beta: float = DEFAULT_BETA, iters: int = DEFAULT_ITERS, seed: int = 42,
              log_every: int = 10) -> LdaModel:
    """Collapsed Gibbs LDA over unigram tokens; ``alpha`` defaults to 50/K.

    Each token's topic is resampled with probability proportional to
    (n_dk + alpha)(n_kw + beta)/(n_k + V*beta), its own assignment excluded.
    """
    if corpus.num_docs == 0:
        raise EmptyCorpus("cannot fit LDA on an empty corpus")
    if K < 2:
        raise ValueError("K must be >= 2")
    if alpha is None:
        alpha = 50.0 / K
    vocab = {t: i for i, t in enumerate(corpus.vocab)}
    V = max(len(vocab), 1)
    lengths = np.array([len(d.tokens) for d in corpus.documents], dtype=np.int64)
    words = np.array([vocab[t] for d in corpus.documents for t in d.tokens], dtype=np.int64)
    docs = np.repeat(np.arange(corpus.num_docs, dtype=np.int64), lengths)
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=len(words)).astype(np.int64)
    ndk = np.zeros((corpus.num_docs, K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(axis=1)
    model = LdaModel(K, float(alpha), float(beta), vocab, words, docs, z, ndk, nkw, nk,
                     lengths, corpus.doc_ids, corpus.labels)
    for it in range(iters):
        _sweep(words, docs, z, ndk, nkw, nk, float(alpha), float(beta), V * float(beta),
               rng.random(len(words)))
        if log_every and (it % log_every == 0 or it == iters - 1):
            model.log_joint.append((it, log_joint(model)))
    return model


def membership_vectors(model: LdaModel) -> SparseFeatureMatrix:
    """Per-document (n_dk + alpha) / (len_d + K*alpha), all K columns stored."""
    theta = (model.doc_topic + model.alpha) / (model.doc_lengths[:, None] + model.K * model.alpha)
    rows, cols = np.indices(theta.shape)
    X = sp.csr_matrix((theta.ravel(), (rows.ravel(), cols.ravel())), shape=theta.shape)
    names = [(f"topic{k}",) for k in range(model.K)]
    return SparseFeatureMatrix(X, model.labels, list(model.doc_ids), names)
