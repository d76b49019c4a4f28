"""Negative ratings from regulator investigations and rank-agreement checks.

A second scorer is trained on investigation counts (high = less credible).
If both scorers read credibility from the news, the credibility ranking read
backwards should line up with the investigation ranking; agreement is the
share of companies whose two positions differ by at most ``window``.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, TextIO

import numpy as np

from .errors import CredrankError, ParseError, UnknownCompanyError
from .network import NetworkHyper
from .training import Ranking, TrainConfig, fit_scorer, minmax, rank_with


class DisjointRankingsError(CredrankError, ValueError):
    pass


@dataclass(frozen=True)
class InvestigationRecord:
    company_id: str
    date: dt.date


@dataclass(frozen=True)
class NegativeTargets:
    targets: dict  # company id -> [0, 1], higher = investigated more often
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.targets)


def load_investigations(source: str | os.PathLike | TextIO, company_ids=None) -> list[InvestigationRecord]:
    """Rows ``company_id,date``; a ``company_id`` header row is skipped."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            return load_investigations(fh, company_ids)
    known = set(company_ids) if company_ids is not None else None
    records = []
    for lineno, row in enumerate(csv.reader(source), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and row[0].strip() == "company_id":
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns, got {len(row)}", line=lineno)
        cid, raw = row[0].strip(), row[1].strip()
        if known is not None and cid not in known:
            raise UnknownCompanyError(f"line {lineno}: unknown company id {cid!r}")
        try:
            date = dt.date.fromisoformat(raw)
        except ValueError:
            raise ParseError(f"bad date {raw!r}", line=lineno, field="date") from None
        records.append(InvestigationRecord(cid, date))
    return records


def build_negative_targets(records: Sequence[InvestigationRecord], company_ids: Sequence[str] | None = None,
                           window: tuple | None = None) -> NegativeTargets:
    """Count records per company inside ``window`` (inclusive dates), then min-max normalize.

    Companies without a record in the window are left out. ``company_ids``
    restricts the result to those companies when given.
    """
    allowed = set(company_ids) if company_ids is not None else None
    counts = {}
    for rec in records:
        if allowed is not None and rec.company_id not in allowed:
            continue
        if window is not None and not window[0] <= rec.date <= window[1]:
            continue
        counts[rec.company_id] = counts.get(rec.company_id, 0) + 1
    if not counts:
        return NegativeTargets({}, {})
    counts = dict(sorted(counts.items()))
    return NegativeTargets(minmax(counts, "investigation counts"), counts)


def _common_positions(pos: Ranking, neg: Ranking):
    common = set(pos.ids()) & set(neg.ids())
    if not common:
        raise DisjointRankingsError("rankings share no companies")
    pos_ids = [c for c in pos.ids() if c in common]
    neg_ids = [c for c in neg.ids() if c in common]
    return common, {c: i for i, c in enumerate(pos_ids, 1)}, {c: i for i, c in enumerate(neg_ids, 1)}


def rank_agreement(pos: Ranking, neg: Ranking, window: int, among: Sequence[str] | None = None) -> float:
    """Share of companies with ``|rank_neg - rank_pos_reversed| <= window``.

    Ranks are 1-based over the companies both rankings contain. ``among``
    restricts which companies are counted without changing their ranks.
    """
    if window < 0:
        raise ValueError("window must be non-negative")
    common, p, q = _common_positions(pos, neg)
    n = len(common)
    members = sorted(common) if among is None else [c for c in among if c in common]
    if not members:
        raise DisjointRankingsError("no evaluated company appears in both rankings")
    hits = sum(1 for c in members if abs(q[c] - (n + 1 - p[c])) <= window)
    return hits / len(members)


def uniform_agreement_baseline(n: int, window: int) -> float:
    """P(|U - V| <= window) for independent uniform ranks U, V on 1..n."""
    w = min(window, n - 1)
    pairs = n + 2 * (w * n - w * (w + 1) // 2)
    return pairs / (n * n)


def spearman(r1: Ranking, r2: Ranking) -> float:
    """Spearman correlation of two strict orderings over their common companies."""
    common, p, q = _common_positions(r1, r2)
    n = len(common)
    if n < 2:
        raise DisjointRankingsError("need at least two common companies")
    d2 = sum((p[c] - q[c]) ** 2 for c in common)
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


@dataclass
class CVResult:
    fractions: list
    folds: list  # held-out company ids per fold

    @property
    def mean(self) -> float:
        return float(np.mean(self.fractions))


def fold_assignment(ids: Sequence[str], folds: int, seed: int) -> list[list]:
    ids = sorted(ids)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > len(ids):
        raise ValueError(f"{folds} folds requested for {len(ids)} labeled companies")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [sorted(ids[i] for i in part) for part in np.array_split(perm, folds)]


def cross_validate(images: Mapping[str, np.ndarray], data1: Mapping[str, int],
                   pos_targets: Mapping[str, float], neg_targets: Mapping[str, float], folds: int,
                   hyper: NetworkHyper, pos_cfg: TrainConfig, neg_cfg: TrainConfig, window: int,
                   seed: int = 0, disjoint: bool = True) -> CVResult:
    """k-fold rank agreement.

    Every labeled company (rated or investigated) is assigned to one fold. For
    each fold both scorers are trained without that fold's companies, every
    company is ranked, and agreement is measured on the held-out ones.

    With ``disjoint`` the negative scorer never trains on a rated company, so
    any agreement has to come through the features rather than through labels
    the two scorers share.
    """
    labeled = sorted(set(pos_targets) | set(neg_targets))
    parts = fold_assignment(labeled, folds, seed)
    neg_hyper = negative_hyper(hyper)
    if disjoint:
        neg_targets = negative_only(neg_targets, pos_targets)
    fractions = []
    for held in parts:
        out = set(held)
        pos_train = {c: v for c, v in pos_targets.items() if c not in out}
        neg_train = {c: v for c, v in neg_targets.items() if c not in out}
        pos_model = fit_scorer(images, data1, pos_train, hyper, pos_cfg)
        neg_model = fit_scorer(images, data1, neg_train, neg_hyper, neg_cfg)
        fractions.append(rank_agreement(rank_with(pos_model, images, data1),
                                        rank_with(neg_model, images, data1), window, among=held))
    return CVResult(fractions, parts)


def negative_only(neg_targets: Mapping[str, float], pos_targets: Mapping[str, float]) -> dict:
    """Negative targets restricted to companies without a credibility rating."""
    return {c: v for c, v in neg_targets.items() if c not in pos_targets}


def negative_hyper(hyper: NetworkHyper) -> NetworkHyper:
    """Same architecture, different initialization seed."""
    return replace(hyper, seed=hyper.seed + 1)


def report_json(report: Mapping) -> str:
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
