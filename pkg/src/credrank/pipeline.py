"""The pipeline stages as plain in-memory functions.

The command line wraps each of these with artifact reading and writing; the
acceptance tests call them directly on generated worlds.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

from .config import PipelineConfig
from .corpus import Article, Company, build_mention_index
from .features import CompanyFeatures, FeatureConfig, construct_image, featurize_companies
from .lda import GibbsConfig, TopicModel, fit_lda, keyword_grid
from .lexicon import BagOfWords, Lexicon, extract_bag
from .network import NetworkHyper
from .training import Ranking, RatingSet, TrainConfig, TrainedScorer, fit_scorer, load_ratings, rank_with
from .verify import (InvestigationRecord, NegativeTargets, build_negative_targets, cross_validate,
                     load_investigations, negative_hyper, negative_only, rank_agreement, spearman, uniform_agreement_baseline)


@dataclass
class Ingested:
    article_ids: list
    bags: list  # BagOfWords per article, same order as article_ids
    mentions: dict  # company id -> sorted article indices
    date_window: tuple  # (first, last) article date

    @property
    def company_ids(self):
        return sorted(self.mentions)


@dataclass
class Featurized:
    features: list  # CompanyFeatures for every mentioned company, sorted by id
    images: dict = field(default_factory=dict)
    data1: dict = field(default_factory=dict)


def ingest(lexicon: Lexicon, articles: Sequence[Article], companies: Sequence[Company]) -> Ingested:
    if not articles:
        raise ValueError("no articles to ingest")
    bags = [extract_bag(a.title + "\n" + a.body, lexicon) for a in articles]
    index = build_mention_index(articles, companies)
    position = {a.id: i for i, a in enumerate(articles)}
    mentions = {cid: sorted(position[aid] for aid in ids) for cid, ids in sorted(index.by_company.items())}
    dates = [a.date for a in articles]
    return Ingested([a.id for a in articles], bags, mentions, (min(dates), max(dates)))


def fit_topics(ing: Ingested, cfg: GibbsConfig) -> tuple[TopicModel, list]:
    model = fit_lda(ing.bags, cfg)
    return model, keyword_grid(model)


def featurize(ing: Ingested, model: TopicModel, keywords, cfg: FeatureConfig) -> Featurized:
    feats = featurize_companies(ing.mentions, model, keywords, ing.bags)
    return images_from(feats, cfg)


def images_from(feats: Sequence[CompanyFeatures], cfg: FeatureConfig) -> Featurized:
    return Featurized(list(feats), {f.company_id: construct_image(f, cfg) for f in feats},
                      {f.company_id: f.data1 for f in feats})


def train_credibility(fz: Featurized, ratings: RatingSet, hyper: NetworkHyper, cfg: TrainConfig) -> TrainedScorer:
    return fit_scorer(fz.images, fz.data1, ratings.ratings, hyper, cfg)


def rank(fz: Featurized, scorer: TrainedScorer) -> Ranking:
    return rank_with(scorer, fz.images, fz.data1)


def negative_targets(records: Sequence[InvestigationRecord], fz: Featurized,
                     date_window: tuple | None) -> NegativeTargets:
    return build_negative_targets(records, sorted(fz.images), date_window)


def verification_report(fz: Featurized, ratings: RatingSet, negatives: NegativeTargets,
                        cfg: PipelineConfig, positive_ranking: Ranking | None = None) -> dict:
    """Train the negative scorer, compare rankings, and cross-validate the agreement."""
    vc = cfg.verify
    hyper, pos_cfg, neg_cfg = cfg.network, cfg.train, cfg.negative_train()
    if positive_ranking is None:
        positive_ranking = rank(fz, train_credibility(fz, ratings, hyper, pos_cfg))
    neg_train = negative_only(negatives.targets, ratings.ratings) if vc.disjoint else negatives.targets
    neg_scorer = fit_scorer(fz.images, fz.data1, neg_train, negative_hyper(hyper), neg_cfg)
    neg_ranking = rank(fz, neg_scorer)
    cv = cross_validate(fz.images, fz.data1, ratings.ratings, negatives.targets, vc.folds, hyper,
                        pos_cfg, neg_cfg, vc.window, seed=vc.seed, disjoint=vc.disjoint)
    n = len(positive_ranking)
    return {
        "window": vc.window,
        "folds": vc.folds,
        "fold_fractions": [round(f, 12) for f in cv.fractions],
        "cv_mean": round(cv.mean, 12),
        "full_agreement": round(rank_agreement(positive_ranking, neg_ranking, vc.window), 12),
        "spearman": round(spearman(positive_ranking, neg_ranking), 12),
        "uniform_baseline": round(uniform_agreement_baseline(n, vc.window), 12),
        "n_ranked": n,
        "n_rated": len(ratings),
        "n_investigated": len(negatives),
    }


@dataclass
class WorldRun:
    ingested: Ingested
    model: TopicModel
    featurized: Featurized
    ranking: Ranking
    report: dict


def run_world(world, cfg: PipelineConfig) -> WorldRun:
    """Every stage on an in-memory synthetic world, reading ratings and
    investigations through the same loaders the command line uses."""
    lexicon = Lexicon.from_terms(world.lexicon_terms)
    ing = ingest(lexicon, world.articles, world.companies)
    model, keywords = fit_topics(ing, cfg.lda)
    fz = featurize(ing, model, keywords, cfg.features)
    company_ids = [c.id for c in world.companies]
    ratings = load_ratings(io.StringIO(world.ratings_text()), company_ids)
    records = load_investigations(io.StringIO(world.investigations_text()), company_ids)
    ranking = rank(fz, train_credibility(fz, ratings, cfg.network, cfg.train))
    negatives = negative_targets(records, fz, ing.date_window)
    report = verification_report(fz, ratings, negatives, cfg, ranking)
    return WorldRun(ing, model, fz, ranking, report)
