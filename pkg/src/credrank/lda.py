"""Latent Dirichlet Allocation fitted by collapsed Gibbs sampling.

The sampler keeps the usual three count tables (topic-word, document-topic,
topic totals) and resamples every token once per sweep from

    p(z = k | rest) ∝ (n_dk[d, k] + alpha) * (n_kw[k, w] + beta) / (n_k[k] + V * beta)

with the token's own assignment removed. The per-sweep uniforms are drawn
from a numpy ``Generator`` seeded from the config, so a run is fully
determined by (bags, config).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import gammaln

from . import binio
from .errors import CredrankError, ParseError
from .lexicon import BagOfWords

MAGIC = b"CRLDA\x00\x00\x00"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    term_of: tuple
    id_of: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.id_of is None:
            object.__setattr__(self, "id_of", {t: i for i, t in enumerate(self.term_of)})
        if len(self.id_of) != len(self.term_of):
            raise ValueError("vocabulary terms must be distinct")

    @classmethod
    def from_bags(cls, bags: Sequence[BagOfWords]) -> "Vocabulary":
        terms = set()
        for bag in bags:
            terms.update(bag.counts)
        return cls(tuple(sorted(terms)))

    @property
    def V(self) -> int:
        return len(self.term_of)

    def __len__(self):
        return len(self.term_of)


@dataclass(frozen=True)
class GibbsConfig:
    K: int = 15
    alpha: float | None = None  # None means 50 / K
    beta: float = 0.01
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if not self.prior_alpha > 0 or not self.beta > 0:
            raise ValueError("alpha and beta must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")

    @property
    def prior_alpha(self) -> float:
        return 50.0 / self.K if self.alpha is None else float(self.alpha)


@dataclass
class TopicModel:
    K: int
    vocab: Vocabulary
    n_kw: np.ndarray  # (K, V)
    n_k: np.ndarray  # (K,)
    n_dk: np.ndarray  # (D, K)
    words: np.ndarray  # flat token word ids, documents concatenated
    offsets: np.ndarray  # (D + 1,) token offsets per document
    z: np.ndarray  # flat topic assignment per token
    alpha: float
    beta: float
    seed: int = 0
    iterations: int = 0
    ll_trace: list = field(default_factory=list, compare=False)

    @property
    def D(self) -> int:
        return self.n_dk.shape[0]

    @property
    def V(self) -> int:
        return self.vocab.V

    def z_of(self, d: int) -> np.ndarray:
        return self.z[self.offsets[d]:self.offsets[d + 1]]


class EmptyCorpusError(CredrankError, ValueError):
    pass


def expand_tokens(docs: Sequence[BagOfWords], vocab: Vocabulary):
    """Flatten bags to (word ids, doc ids, offsets); ascending word id within each doc."""
    words, doc_ids, offsets = [], [], [0]
    for d, bag in enumerate(docs):
        ids = sorted((vocab.id_of[t], c) for t, c in bag.counts.items())
        for w, c in ids:
            words.extend([w] * c)
            doc_ids.extend([d] * c)
        offsets.append(len(words))
    return (np.asarray(words, dtype=np.int64), np.asarray(doc_ids, dtype=np.int64),
            np.asarray(offsets, dtype=np.int64))


def count_tables(words, doc_ids, z, K, V, D):
    n_kw = np.zeros((K, V), dtype=np.int64)
    n_dk = np.zeros((D, K), dtype=np.int64)
    np.add.at(n_kw, (z, words), 1)
    np.add.at(n_dk, (doc_ids, z), 1)
    return n_kw, n_dk, n_kw.sum(axis=1)


@njit(cache=True)
def _sweep(words, doc_ids, z, n_wk, n_dk, n_k, alpha, beta, vbeta, u):
    K = n_k.shape[0]
    cum = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = doc_ids[i]
        k = z[i]
        n_wk[w, k] -= 1
        n_dk[d, k] -= 1
        n_k[k] -= 1
        total = 0.0
        for t in range(K):
            total += (n_dk[d, t] + alpha) * (n_wk[w, t] + beta) / (n_k[t] + vbeta)
            cum[t] = total
        r = u[i] * total
        k = 0
        while k < K - 1 and cum[k] <= r:
            k += 1
        z[i] = k
        n_wk[w, k] += 1
        n_dk[d, k] += 1
        n_k[k] += 1


def fit_lda(docs: Sequence[BagOfWords], config: GibbsConfig, vocab: Vocabulary | None = None,
            monitor_every: int = 0) -> TopicModel:
    """Run ``config.iterations`` Gibbs sweeps and return the final state.

    With ``monitor_every > 0`` the collapsed log joint is recorded every that
    many sweeps in ``model.ll_trace`` as ``(sweep, value)`` pairs.
    """
    if len(docs) == 0:
        raise EmptyCorpusError("no documents to fit")
    if vocab is None:
        vocab = Vocabulary.from_bags(docs)
    words, doc_ids, offsets = expand_tokens(docs, vocab)
    if words.size == 0:
        raise EmptyCorpusError("corpus contains no tokens")

    K, V, D = config.K, vocab.V, len(docs)
    rng = np.random.default_rng(config.seed)
    z = rng.integers(0, K, size=words.size).astype(np.int64)
    n_kw, n_dk, n_k = count_tables(words, doc_ids, z, K, V, D)
    n_wk = np.ascontiguousarray(n_kw.T)

    model = TopicModel(K, vocab, n_kw, n_k, n_dk, words, offsets, z,
                       config.prior_alpha, float(config.beta), config.seed, 0)
    for sweep in range(1, config.iterations + 1):
        u = rng.random(words.size)
        _sweep(words, doc_ids, z, n_wk, n_dk, n_k, model.alpha, model.beta, V * model.beta, u)
        if monitor_every and sweep % monitor_every == 0:
            model.n_kw = np.ascontiguousarray(n_wk.T)
            model.ll_trace.append((sweep, log_likelihood(model)))
    model.n_kw = np.ascontiguousarray(n_wk.T)
    model.iterations = config.iterations
    return model


def _doc_ids(model: TopicModel) -> np.ndarray:
    return np.repeat(np.arange(model.D), np.diff(model.offsets))


def check_counts(model: TopicModel) -> None:
    """Raise AssertionError unless the count tables match a rebuild from ``z``."""
    n_kw, n_dk, n_k = count_tables(model.words, _doc_ids(model), model.z, model.K, model.V, model.D)
    assert np.array_equal(n_kw, model.n_kw), "n_kw inconsistent with z"
    assert np.array_equal(n_dk, model.n_dk), "n_dk inconsistent with z"
    assert np.array_equal(n_k, model.n_k), "n_k inconsistent with z"


def topic_word_dist(model: TopicModel, k: int) -> np.ndarray:
    if not 0 <= k < model.K:
        raise IndexError(f"topic {k} out of range [0, {model.K})")
    row = model.n_kw[k].astype(np.float64) + model.beta
    return row / (model.n_k[k] + model.V * model.beta)


def top_keywords(model: TopicModel, k: int, n: int = 10) -> list[str]:
    """The ``n`` most probable terms of topic ``k``, ties to the lower vocabulary index."""
    if n > model.V:
        raise ValueError(f"asked for {n} keywords but vocabulary has {model.V} terms")
    if n < 0:
        raise ValueError("n must be non-negative")
    phi = topic_word_dist(model, k)
    # stable sort on -phi keeps ascending index order among equal values
    order = np.argsort(-phi, kind="stable")[:n]
    return [model.vocab.term_of[i] for i in order]


def keyword_grid(model: TopicModel, n: int = 10) -> list[list[str]]:
    return [top_keywords(model, k, n) for k in range(model.K)]


def dominant_topic(model: TopicModel, d: int) -> int:
    if not 0 <= d < model.D:
        raise IndexError(f"document {d} out of range [0, {model.D})")
    return int(np.argmax(model.n_dk[d]))


def dominant_topics(model: TopicModel) -> np.ndarray:
    return np.argmax(model.n_dk, axis=1)


def log_likelihood(model: TopicModel, docs: Sequence[BagOfWords] | None = None) -> float:
    """Collapsed log p(w, z) under the model's symmetric priors."""
    if docs is not None:
        lengths = np.diff(model.offsets)
        if len(docs) != model.D or any(b.total != n for b, n in zip(docs, lengths)):
            raise ValueError("documents do not match the fitted model")
    K, V = model.K, model.V
    a, b = model.alpha, model.beta
    n_kw = model.n_kw
    n_k = n_kw.sum(axis=1)
    words_part = (K * (gammaln(V * b) - V * gammaln(b))
                  + gammaln(n_kw + b).sum() - gammaln(n_k + V * b).sum())
    n_d = model.n_dk.sum(axis=1)
    docs_part = (model.D * (gammaln(K * a) - K * gammaln(a))
                 + gammaln(model.n_dk + a).sum() - gammaln(n_d + K * a).sum())
    return float(words_part + docs_part)


def permute_topics(model: TopicModel, perm: Sequence[int]) -> TopicModel:
    """Relabel topics so that new topic ``i`` is old topic ``perm[i]``."""
    perm = np.asarray(perm)
    inverse = np.argsort(perm)
    return TopicModel(model.K, model.vocab, model.n_kw[perm].copy(), model.n_k[perm].copy(),
                      model.n_dk[:, perm].copy(), model.words.copy(), model.offsets.copy(),
                      inverse[model.z], model.alpha, model.beta, model.seed, model.iterations)


def save_model(model: TopicModel, path: str | os.PathLike, extra: dict | None = None) -> None:
    header = {
        "K": model.K, "alpha": model.alpha, "beta": model.beta, "seed": model.seed,
        "iterations": model.iterations, "vocab": list(model.vocab.term_of),
    }
    if extra:
        header["extra"] = extra
    arrays = {"words": model.words, "offsets": model.offsets, "z": model.z,
              "n_kw": model.n_kw, "n_dk": model.n_dk}
    binio.write(path, MAGIC, FORMAT_VERSION, header, arrays)


def load_model(path: str | os.PathLike) -> tuple[TopicModel, dict]:
    header, arrays = binio.read(path, MAGIC, FORMAT_VERSION)
    vocab = Vocabulary(tuple(header["vocab"]))
    n_kw = arrays["n_kw"]
    model = TopicModel(header["K"], vocab, n_kw, n_kw.sum(axis=1), arrays["n_dk"], arrays["words"],
                       arrays["offsets"], arrays["z"], header["alpha"], header["beta"],
                       header["seed"], header["iterations"])
    try:
        check_counts(model)
    except AssertionError as exc:
        raise ParseError(f"corrupt topic model dump: {exc}") from exc
    return model, header.get("extra", {})
