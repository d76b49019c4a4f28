"""Ratings, SGD training of the scorer, and ranking of companies."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
from numba import njit

from .errors import CredrankError, DegenerateNormalizationError, ParseError, UnknownCompanyError
from .features import data1_norm
from .network import (NetworkHyper, NetworkParams, flat_layout, init_params, loss_and_grad_flat,
                      params_from_flat, score_flat)


class FeatureTargetMismatch(CredrankError, ValueError):
    pass


@dataclass(frozen=True)
class RatingSet:
    ratings: dict  # company id -> rating in [0, 1]
    provenance: dict  # company id -> number of raw evaluations averaged

    def __len__(self):
        return len(self.ratings)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.05
    seed: int = 0
    shuffle: bool = True
    holdout_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")


def minmax(values: Mapping[str, float], what: str = "values") -> dict:
    lo, hi = min(values.values()), max(values.values())
    if hi == lo:
        raise DegenerateNormalizationError(f"all {what} are equal ({lo!r}); cannot min-max normalize")
    span = hi - lo
    return {k: (v - lo) / span for k, v in values.items()}


def load_ratings(source: str | os.PathLike | TextIO, company_ids: Iterable[str] | None = None) -> RatingSet:
    """Average raw scores per company, then min-max normalize across companies.

    Rows are ``company_id, rater_id, raw_score``; a header row starting with
    ``company_id`` is skipped.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            return load_ratings(fh, company_ids)
    known = set(company_ids) if company_ids is not None else None
    sums, counts = {}, {}
    for lineno, row in enumerate(csv.reader(source), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and row[0].strip() == "company_id":
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 columns, got {len(row)}", line=lineno)
        cid, _rater, raw = (c.strip() for c in row)
        if known is not None and cid not in known:
            raise UnknownCompanyError(f"line {lineno}: unknown company id {cid!r}")
        try:
            score = float(raw)
        except ValueError:
            raise ParseError(f"non-numeric score {raw!r}", line=lineno, field="raw_score") from None
        if not math.isfinite(score):
            raise ParseError(f"non-finite score {raw!r}", line=lineno, field="raw_score")
        sums[cid] = sums.get(cid, 0.0) + score
        counts[cid] = counts.get(cid, 0) + 1
    if not sums:
        raise ParseError("no ratings found")
    means = {cid: sums[cid] / counts[cid] for cid in sorted(sums)}
    return RatingSet(minmax(means, "mean ratings"), counts)


def holdout_split(ids: Sequence[str], cfg: TrainConfig) -> tuple[list, list]:
    """Split sorted ``ids`` into (train, holdout) using the config seed."""
    ids = sorted(ids)
    n_hold = int(math.floor(cfg.holdout_fraction * len(ids)))
    if n_hold == 0:
        return ids, []
    split_seq = np.random.SeedSequence(cfg.seed).spawn(2)[0]
    perm = np.random.default_rng(split_seq).permutation(len(ids))
    held = {ids[i] for i in perm[:n_hold]}
    return [i for i in ids if i not in held], sorted(held)


@njit(cache=True)
def _sgd_epoch(theta, offs, dims, X, m, y, order, lr):
    grad = np.empty_like(theta)
    total = 0.0
    for idx in order:
        _, l = loss_and_grad_flat(theta, grad, offs, dims, X[idx], m[idx], y[idx])
        total += l
        for i in range(theta.shape[0]):
            theta[i] -= lr * grad[i]
    return total / order.shape[0]


def _stack(features, ids):
    X = np.ascontiguousarray(np.stack([np.asarray(features[i][0], dtype=np.float64).ravel() for i in ids]))
    m = np.asarray([float(features[i][1]) for i in ids], dtype=np.float64)
    return X, m


def train(features: Mapping[str, tuple], targets: Mapping[str, float], hyper: NetworkHyper,
          cfg: TrainConfig) -> tuple[NetworkParams, list]:
    """Per-example SGD on squared error.

    ``features`` maps company id to ``(image, data1_norm)``; ``targets`` maps
    company id to a value in [0, 1]. Returns the final parameters and the mean
    training loss of each epoch (losses are taken before each update).
    """
    missing = sorted(set(targets) - set(features))
    if missing:
        raise FeatureTargetMismatch(f"no features for {len(missing)} target companies, e.g. {missing[:3]}")
    train_ids, _ = holdout_split(list(targets), cfg)
    if len(train_ids) < 2:
        raise FeatureTargetMismatch("need at least two training companies")
    for cid in train_ids:
        if np.asarray(features[cid][0]).shape != (hyper.image_rows, hyper.image_cols):
            raise FeatureTargetMismatch(f"image for {cid} does not match the network input shape")

    X, m = _stack(features, train_ids)
    y = np.asarray([float(targets[i]) for i in train_ids], dtype=np.float64)
    offs, dims = flat_layout(hyper)
    theta = init_params(hyper).flat()
    order_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    history = []
    for _ in range(cfg.epochs):
        order = order_rng.permutation(len(train_ids)) if cfg.shuffle else np.arange(len(train_ids))
        history.append(float(_sgd_epoch(theta, offs, dims, X, m, y, order.astype(np.int64), cfg.learning_rate)))
    return params_from_flat(hyper, theta), history


@dataclass(frozen=True)
class Ranking:
    """Companies ordered by score descending, ties by id ascending."""

    entries: tuple  # ((company_id, score), ...)

    @classmethod
    def from_scores(cls, scores: Mapping[str, float]) -> "Ranking":
        return cls(tuple(sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))))

    def __len__(self):
        return len(self.entries)

    def ids(self) -> list:
        return [cid for cid, _ in self.entries]

    def scores(self) -> dict:
        return dict(self.entries)

    def positions(self) -> dict:
        """company id -> 1-based rank."""
        return {cid: i for i, (cid, _) in enumerate(self.entries, start=1)}

    def to_csv(self) -> str:
        return "".join(f"{i},{cid},{score:.6f}\n" for i, (cid, score) in enumerate(self.entries, start=1))


def load_ranking(text: str) -> Ranking:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError("expected rank,company_id,score", line=lineno)
        entries.append((parts[1], float(parts[2])))
    return Ranking(tuple(entries))


def score_all(params: NetworkParams, features: Mapping[str, tuple]) -> dict:
    offs, dims = flat_layout(params.hyper)
    theta = params.flat()
    ids = sorted(features)
    if not ids:
        return {}
    X, m = _stack(features, ids)
    return {cid: float(score_flat(theta, offs, dims, X[i], m[i])) for i, cid in enumerate(ids)}


def predict_all(params: NetworkParams, features: Mapping[str, tuple]) -> Ranking:
    return Ranking.from_scores(score_all(params, features))


@dataclass
class TrainedScorer:
    """Trained parameters plus the mention-count reference used to normalize data1."""

    params: NetworkParams
    data1_ref: int
    loss_history: list

    def inputs(self, images: Mapping[str, np.ndarray], data1: Mapping[str, int]) -> dict:
        return {cid: (images[cid], data1_norm(data1[cid], self.data1_ref)) for cid in images}


def fit_scorer(images: Mapping[str, np.ndarray], data1: Mapping[str, int], targets: Mapping[str, float],
               hyper: NetworkHyper, cfg: TrainConfig) -> TrainedScorer:
    """Train on raw mention counts: data1 is scaled by the largest count among training companies."""
    missing = sorted(set(targets) - set(images))
    if missing:
        raise FeatureTargetMismatch(f"no features for {len(missing)} target companies, e.g. {missing[:3]}")
    train_ids, _ = holdout_split(list(targets), cfg)
    ref = max(int(data1[c]) for c in train_ids) if train_ids else 1
    inputs = {c: (images[c], data1_norm(data1[c], ref)) for c in targets}
    params, history = train(inputs, targets, hyper, cfg)
    return TrainedScorer(params, ref, history)


def rank_with(scorer: TrainedScorer, images: Mapping[str, np.ndarray], data1: Mapping[str, int]) -> Ranking:
    return predict_all(scorer.params, scorer.inputs(images, data1))
