"""Seeded synthetic worlds with planted structure.

Two generators live here. ``planted_lda_corpus`` draws bag-of-words documents
straight from an LDA generative process and keeps the true topic-word and
document-topic parameters. ``generate`` builds a whole market: lexicon,
articles, companies, analyst ratings and regulator investigations, with each
company's credibility planted into the text it is mentioned in.

All randomness comes from one ``numpy.random.Generator`` per call, consumed
in a fixed order, so equal seeds give byte-identical output.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import Article, Company, dump_articles, dump_companies
from .lexicon import BagOfWords

# Character pools. They are pairwise disjoint, so lexicon terms, company
# names and filler text can never run together into a false match.
_TERM_CHARS = (
    "银行保险金融市场证券基金股票债券投资资本利润收益风险监管审计财务报告"
    "公告披露信息透明信用评级违规处罚调查诉讼担保质押贷款负债资产现金流量"
    "增长下降亏损盈利分红回购并购重组上市退市停牌复牌董事会管理层高管薪酬"
    "控股股东减持增持发行融资期货外汇汇率利率通胀经济政策改革创新科技能源"
    "地产制造消费零售医药汽车电力钢铁煤炭化工农业物流航空港口电信网络平台"
)
_NAME_CHARS = "甲乙丙丁戊己庚辛壬癸子丑寅卯辰巳午未申酉戌亥鹏南西北春夏秋冬梅兰竹菊松柏桃李江河湖海山川星辰龙凤麒麟鹤雁鹰燕"
_FILLER_CHARS = "的了在是和与及对将其也都就而被从向于乃或等，。、；："

CORPUS_START = dt.date(2017, 1, 1)
CORPUS_END = dt.date(2017, 9, 30)


def _unique_chars(s):
    return list(dict.fromkeys(s))


def planted_lda_corpus(n_topics, vocab_size, n_docs, doc_length, alpha, topic_prior, seed):
    """Sample bags from LDA with symmetric priors.

    Returns ``(bags, phi, theta)`` where ``phi`` is (K, V), ``theta`` is (D, K)
    and terms are the strings ``w0000``, ``w0001``, ...
    """
    rng = np.random.default_rng(seed)
    phi = rng.dirichlet(np.full(vocab_size, topic_prior), size=n_topics)
    theta = rng.dirichlet(np.full(n_topics, alpha), size=n_docs)
    width = len(str(vocab_size - 1))
    terms = [f"w{i:0{width}d}" for i in range(vocab_size)]
    bags = []
    for d in range(n_docs):
        topics = rng.choice(n_topics, size=doc_length, p=theta[d])
        counts = {}
        for k in topics:
            w = rng.choice(vocab_size, p=phi[k])
            counts[terms[w]] = counts.get(terms[w], 0) + 1
        bags.append(BagOfWords(counts))
    return bags, phi, theta


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_topics: int = 15
    vocab_size: int = 800
    n_docs: int = 30650
    doc_length: int = 60
    n_companies: int = 3065
    n_rated: int = 220
    credibility_signal_strength: float = 1.0
    # share of each company article drawn from the positive/negative topic pair
    signal_mass: float = 0.7
    topic_prior: float = 0.01
    background_alpha: float = 0.1
    # fraction of articles that mention no company
    unlinked_fraction: float = 0.05
    rating_noise: float = 0.05
    raters_per_company: tuple = (3, 6)
    n_raters: int = 60
    max_investigations: int = 12
    # records dated outside the corpus window, which the date filter must drop
    stray_investigations: int = 25

    def __post_init__(self):
        counts = (self.n_topics, self.vocab_size, self.n_docs, self.doc_length,
                  self.n_companies, self.n_rated)
        if any(c <= 0 for c in counts):
            raise ValueError("all counts must be positive")
        if self.n_topics < 3:
            raise ValueError("need at least 3 topics (positive, negative, background)")
        if self.n_rated > self.n_companies:
            raise ValueError("n_rated exceeds n_companies")
        if not 0.0 <= self.credibility_signal_strength <= 1.0:
            raise ValueError("credibility_signal_strength must lie in [0, 1]")
        if self.vocab_size < self.n_topics * 10:
            raise ValueError(
                f"vocab_size {self.vocab_size} too small for {self.n_topics} x 10 distinct keywords")
        linked = self.n_docs - int(round(self.unlinked_fraction * self.n_docs))
        if linked < self.n_companies:
            raise ValueError("n_docs too small to mention every company at least once")


POSITIVE_TOPIC = 0
NEGATIVE_TOPIC = 1


@dataclass
class SynthWorld:
    config: SynthConfig
    lexicon_terms: list
    articles: list
    companies: list
    planted_topic_word: np.ndarray  # (K, V) over lexicon_terms order
    planted_doc_theta: np.ndarray  # (D, K)
    planted_credibility: dict
    article_company: dict  # article id -> company id, unlinked articles absent
    rating_rows: list  # (company_id, rater_id, raw_score)
    investigation_rows: list  # (company_id, date)
    planted_doc_topic: np.ndarray = field(init=False)

    def __post_init__(self):
        self.planted_doc_topic = np.argmax(self.planted_doc_theta, axis=1)

    @property
    def rated_ids(self):
        return sorted({row[0] for row in self.rating_rows})

    def lexicon_text(self) -> str:
        return "".join(t + "\n" for t in self.lexicon_terms)

    def articles_text(self) -> str:
        return dump_articles(self.articles)

    def companies_text(self) -> str:
        return "id,canonical_name,aliases\n" + dump_companies(self.companies)

    def ratings_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["company_id", "rater_id", "raw_score"])
        for cid, rater, score in self.rating_rows:
            writer.writerow([cid, rater, repr(score)])
        return buf.getvalue()

    def investigations_text(self) -> str:
        lines = ["company_id,date\n"]
        lines.extend(f"{cid},{date.isoformat()}\n" for cid, date in self.investigation_rows)
        return "".join(lines)

    FILES = {
        "lexicon": ("lexicon.txt", "lexicon_text"),
        "articles": ("articles.jsonl", "articles_text"),
        "companies": ("companies.csv", "companies_text"),
        "ratings": ("ratings.csv", "ratings_text"),
        "investigations": ("investigations.csv", "investigations_text"),
    }

    def write(self, directory) -> dict:
        """Write all five input files; returns ``{kind: path}``."""
        os.makedirs(directory, exist_ok=True)
        paths = {}
        for kind, (name, method) in self.FILES.items():
            path = os.path.join(directory, name)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(getattr(self, method)())
            paths[kind] = path
        return paths


def _make_terms(rng, n):
    chars = _unique_chars(_TERM_CHARS)
    terms = set()
    while len(terms) < n:
        size = 2 if rng.random() < 0.85 else 3
        picks = rng.choice(len(chars), size=size, replace=False)
        terms.add("".join(chars[i] for i in picks))
    return sorted(terms)


def _make_names(rng, n):
    chars = _unique_chars(_NAME_CHARS)
    names = []
    seen = set()
    while len(names) < n:
        name = "".join(chars[i] for i in rng.integers(0, len(chars), size=4))
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def _random_dates(rng, n, start, end):
    span = (end - start).days
    return [start + dt.timedelta(days=int(d)) for d in rng.integers(0, span + 1, size=n)]


def generate(cfg: SynthConfig) -> SynthWorld:
    """Build a synthetic market.

    Company articles put ``signal_mass`` of their topic mixture on the
    positive/negative topic pair, split ``w : 1 - w`` with
    ``w = s * credibility + (1 - s) / 2`` for signal strength ``s``; the rest
    goes to a Dirichlet draw over the background topics. Less credible
    companies also get proportionally more coverage when ``s > 0``.
    Investigation counts fall linearly with credibility.
    """
    rng = np.random.default_rng(cfg.seed)
    K, V, s = cfg.n_topics, cfg.vocab_size, cfg.credibility_signal_strength
    fillers = _unique_chars(_FILLER_CHARS)

    terms = _make_terms(rng, V)
    phi = rng.dirichlet(np.full(V, cfg.topic_prior), size=K)

    names = _make_names(rng, cfg.n_companies)
    companies = []
    for i, name in enumerate(names):
        cid = f"{600000 + i:06d}"
        companies.append(Company(cid, name, (f"SH{cid}",)))
    credibility = rng.random(cfg.n_companies)

    # article -> company assignment: one guaranteed article each, the rest by weight
    n_unlinked = int(round(cfg.unlinked_fraction * cfg.n_docs))
    n_linked = cfg.n_docs - n_unlinked
    weights = 1.0 + s * (1.0 - credibility)
    extra = rng.multinomial(n_linked - cfg.n_companies, weights / weights.sum())
    owners = np.repeat(np.arange(cfg.n_companies), extra + 1)
    owners = np.concatenate([owners, np.full(n_unlinked, -1)])
    owners = owners[rng.permutation(owners.size)]

    linked = owners >= 0
    w = np.where(linked, s * credibility[np.maximum(owners, 0)] + (1.0 - s) * 0.5, 0.0)
    background = rng.dirichlet(np.full(K - 2, cfg.background_alpha), size=cfg.n_docs)
    theta = np.zeros((cfg.n_docs, K))
    theta[:, POSITIVE_TOPIC] = np.where(linked, cfg.signal_mass * w, 0.0)
    theta[:, NEGATIVE_TOPIC] = np.where(linked, cfg.signal_mass * (1.0 - w), 0.0)
    theta[:, 2:] = np.where(linked, 1.0 - cfg.signal_mass, 1.0)[:, None] * background
    theta /= theta.sum(axis=1, keepdims=True)

    # tokens: topic counts per article, then one inverse-CDF lookup per token
    # against the topic-word CDFs stacked as k + cdf_k
    L = cfg.doc_length
    topic_counts = rng.multinomial(L, theta)
    token_topic = np.repeat(np.tile(np.arange(K), cfg.n_docs), topic_counts.ravel())
    cdf = np.cumsum(phi, axis=1)
    cdf[:, -1] = 1.0
    stacked = (cdf + np.arange(K)[:, None]).ravel()
    u = rng.random(token_topic.size)
    flat_ids = np.searchsorted(stacked, token_topic + u, side="right")
    word_ids = np.minimum(flat_ids - token_topic * V, V - 1).reshape(cfg.n_docs, L)
    word_ids = rng.permuted(word_ids, axis=1)
    seps = rng.integers(0, len(fillers), size=(cfg.n_docs, L + 1))
    name_slot = rng.integers(0, L + 1, size=cfg.n_docs)
    use_alias = rng.random(cfg.n_docs) < 0.5
    title_fill = rng.integers(0, len(fillers), size=(cfg.n_docs, 4))
    dates = _random_dates(rng, cfg.n_docs, CORPUS_START, CORPUS_END)

    articles = []
    article_company = {}
    for d in range(cfg.n_docs):
        sep = [fillers[i] for i in seps[d]]
        toks = [terms[i] for i in word_ids[d]]
        pieces = [a + b for a, b in zip(sep, toks)]
        pieces.append(sep[-1])
        aid = f"a{d:07d}"
        owner = owners[d]
        if owner >= 0:
            company = companies[owner]
            article_company[aid] = company.id
            # canonical name in the body; half of the titles use the alias instead
            pieces.insert(int(name_slot[d]), company.canonical_name + fillers[0])
            ref = company.aliases[0] if use_alias[d] else company.canonical_name
            title = ref + "".join(fillers[i] for i in title_fill[d, :3])
        else:
            title = "".join(fillers[i] for i in title_fill[d])
        articles.append(Article(aid, dates[d], title, "".join(pieces)))

    rated = np.sort(rng.choice(cfg.n_companies, size=cfg.n_rated, replace=False))
    lo, hi = cfg.raters_per_company
    rater_ids = [f"r{i:04d}" for i in range(cfg.n_raters)]
    rating_rows = []
    for c in rated:
        n = int(rng.integers(lo, hi + 1))
        for r in rng.choice(cfg.n_raters, size=min(n, cfg.n_raters), replace=False):
            noisy = credibility[c] + rng.uniform(-cfg.rating_noise, cfg.rating_noise)
            score = 1.0 + 4.0 * min(max(noisy, 0.0), 1.0)
            rating_rows.append((companies[c].id, rater_ids[r], float(score)))

    first, last = min(dates), max(dates)
    investigation_rows = []
    for c in range(cfg.n_companies):
        count = 1 + int(round((1.0 - credibility[c]) * (cfg.max_investigations - 1)))
        for date in sorted(_random_dates(rng, count, first, last)):
            investigation_rows.append((companies[c].id, date))
    strays = rng.choice(cfg.n_companies, size=cfg.stray_investigations)
    stray_dates = _random_dates(rng, cfg.stray_investigations, dt.date(2015, 1, 1), dt.date(2016, 12, 31))
    for c, date in zip(strays, stray_dates):
        investigation_rows.append((companies[c].id, date))

    planted = {companies[c].id: float(credibility[c]) for c in range(cfg.n_companies)}
    return SynthWorld(cfg, terms, articles, companies, phi, theta, planted, article_company,
                      rating_rows, investigation_rows)
