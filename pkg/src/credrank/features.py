"""Per-company aggregates and the grayscale feature image built from them.

For a company mentioned by articles ``A`` (document indices into the topic
model):

* ``data1`` is ``|A|``;
* ``data2[k]`` is the share of ``A`` whose dominant topic is ``k``;
* ``data3[k, j]`` is how often the ``j``-th keyword of topic ``k`` occurs
  across ``A``.

The image is ``data2`` as column 0 followed by ``tanh(c * data3 / data1)``,
one row per topic.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ParseError, ZeroMentionError
from .lda import TopicModel, dominant_topics
from .lexicon import BagOfWords

N_KEYWORDS = 10
# tanh reaches 1.0 in double precision near 19.06; the keyword block stays below it
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class FeatureConfig:
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("scaling constant c must be positive")


@dataclass(frozen=True)
class CompanyFeatures:
    company_id: str
    data1: int
    data2: np.ndarray  # (K,)
    data3: np.ndarray  # (K, 10) int

    @property
    def K(self):
        return self.data2.shape[0]


def keyword_counts(bags: Sequence[BagOfWords], keywords: Sequence[Sequence[str]]) -> np.ndarray:
    """(D, K, n) occurrence counts of every keyword in every bag."""
    K, n = len(keywords), len(keywords[0]) if keywords else 0
    out = np.zeros((len(bags), K, n), dtype=np.int64)
    for k, row in enumerate(keywords):
        for j, term in enumerate(row):
            out[:, k, j] = [bag.counts.get(term, 0) for bag in bags]
    return out


def _aggregate(company_id, dominant, counts, K) -> CompanyFeatures:
    data1 = len(dominant)
    if data1 == 0:
        raise ZeroMentionError(f"company {company_id} is mentioned by no article")
    hist = np.bincount(dominant, minlength=K)
    return CompanyFeatures(company_id, data1, hist / data1, counts.sum(axis=0))


def aggregate_company(company_id: str, doc_ids: Sequence[int], model: TopicModel,
                      keywords: Sequence[Sequence[str]], bags: Sequence[BagOfWords]) -> CompanyFeatures:
    doc_ids = list(doc_ids)
    if not doc_ids:
        raise ZeroMentionError(f"company {company_id} is mentioned by no article")
    dominant = dominant_topics(model)[doc_ids]
    counts = keyword_counts([bags[d] for d in doc_ids], keywords)
    return _aggregate(company_id, dominant, counts, model.K)


def featurize_companies(mentions: Mapping[str, Sequence[int]], model: TopicModel,
                        keywords: Sequence[Sequence[str]], bags: Sequence[BagOfWords]) -> list[CompanyFeatures]:
    """Features for every company with at least one mention, sorted by id.

    ``mentions`` maps company id to document indices. Zero-mention companies
    are skipped.
    """
    dominant = dominant_topics(model)
    counts = keyword_counts(bags, keywords)
    out = []
    for cid in sorted(mentions):
        docs = np.asarray(mentions[cid], dtype=np.int64)
        if docs.size:
            out.append(_aggregate(cid, dominant[docs], counts[docs], model.K))
    return out


def construct_image(f: CompanyFeatures, cfg: FeatureConfig) -> np.ndarray:
    """K x 11 float64 image: data2 column, then tanh(c * data3 / data1).

    Saturated keyword pixels are held at the largest double below 1.
    """
    # divide before scaling so replicated article sets give identical bits
    rates = f.data3 / float(f.data1)
    return np.column_stack([f.data2, np.minimum(np.tanh(cfg.c * rates), _BELOW_ONE)])


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(img * 255.0), 0, 255).astype(np.uint8)


def pgm_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be two-dimensional")
    height, width = img.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + to_bytes(img).tobytes(order="C")


def export_pgm(img: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Load a P5 file written by :func:`export_pgm` as a uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ParseError("not a binary PGM (P5) file")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}")
    pixels = data[len(data) - width * height:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def rescale_unit(mat: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; a constant matrix maps to zeros."""
    lo, hi = float(mat.min()), float(mat.max())
    if hi == lo:
        return np.zeros_like(mat, dtype=np.float64)
    return (mat - lo) / (hi - lo)


def data1_norm(data1, reference_max) -> float:
    """log(1 + data1) / log(1 + reference_max), clamped to [0, 1]."""
    if reference_max < 1:
        raise ValueError("reference_max must be at least 1")
    value = math.log1p(data1) / math.log1p(reference_max)
    return min(max(value, 0.0), 1.0)


def dump_features(features: Sequence[CompanyFeatures]) -> str:
    """CSV rows: company_id, data1, data2[0..K), data3 row-major. Floats use repr."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for f in features:
        writer.writerow([f.company_id, f.data1, *(repr(float(v)) for v in f.data2),
                         *(int(v) for v in f.data3.ravel())])
    return buf.getvalue()


def load_features(text: str, K: int) -> list[CompanyFeatures]:
    out = []
    width = 2 + K + K * N_KEYWORDS
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or row[0].startswith("#"):
            continue
        if len(row) != width:
            raise ParseError(f"expected {width} columns, got {len(row)}", line=lineno)
        try:
            data1 = int(row[1])
            data2 = np.array([float(v) for v in row[2:2 + K]])
            data3 = np.array([int(v) for v in row[2 + K:]], dtype=np.int64).reshape(K, N_KEYWORDS)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        out.append(CompanyFeatures(row[0], data1, data2, data3))
    return out
