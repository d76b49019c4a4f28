"""Loading articles and company lists, and linking articles to companies."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

from .errors import DuplicateKeyError, ParseError

ARTICLE_FIELDS = ("id", "date", "title", "body")


@dataclass(frozen=True)
class Article:
    id: str
    date: dt.date
    title: str
    body: str

    def to_json(self) -> str:
        record = {"id": self.id, "date": self.date.isoformat(), "title": self.title, "body": self.body}
        return json.dumps(record, ensure_ascii=False)


@dataclass(frozen=True)
class Company:
    id: str
    canonical_name: str
    aliases: tuple = ()

    @property
    def names(self):
        return (self.canonical_name,) + tuple(self.aliases)


@dataclass
class MentionIndex:
    by_company: dict = field(default_factory=dict)

    def __getitem__(self, company_id):
        return self.by_company[company_id]

    def counts(self) -> dict:
        return {cid: len(ids) for cid, ids in self.by_company.items()}


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8", newline=""), True
    return source, False


def load_articles(source: str | os.PathLike | TextIO) -> list[Article]:
    """Parse one JSON object per line with string fields id, date, title, body."""
    fh, owned = _open_text(source)
    articles = []
    first_seen = {}
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed record: {exc.msg}", line=lineno) from exc
            if not isinstance(record, dict):
                raise ParseError("record is not an object", line=lineno)
            for name in ARTICLE_FIELDS:
                if name not in record:
                    raise ParseError(f"missing field {name!r}", line=lineno, field=name)
                if not isinstance(record[name], str):
                    raise ParseError(f"field {name!r} must be a string", line=lineno, field=name)
            try:
                date = dt.date.fromisoformat(record["date"])
            except ValueError as exc:
                raise ParseError(f"bad date {record['date']!r}", line=lineno, field="date") from exc
            aid = record["id"]
            if aid in first_seen:
                raise DuplicateKeyError(aid, (first_seen[aid], lineno))
            first_seen[aid] = lineno
            articles.append(Article(aid, date, record["title"], record["body"]))
    finally:
        if owned:
            fh.close()
    return articles


def dump_articles(articles: Iterable[Article]) -> str:
    return "".join(a.to_json() + "\n" for a in articles)


def load_companies(source: str | os.PathLike | TextIO) -> list[Company]:
    """Rows of ``id,canonical_name[,alias...]``; an optional ``id,...`` header row is skipped."""
    fh, owned = _open_text(source)
    companies = []
    first_seen = {}
    try:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "id":
                continue
            if len(row) < 2:
                raise ParseError("expected at least id and canonical_name", line=lineno)
            cid, name = row[0].strip(), row[1].strip()
            if not cid:
                raise ParseError("empty company id", line=lineno, field="id")
            if not name:
                raise ParseError("empty canonical_name", line=lineno, field="canonical_name")
            if cid in first_seen:
                raise DuplicateKeyError(cid, (first_seen[cid], lineno))
            first_seen[cid] = lineno
            aliases = tuple(a.strip() for a in row[2:] if a.strip())
            companies.append(Company(cid, name, aliases))
    finally:
        if owned:
            fh.close()
    return companies


def dump_companies(companies: Iterable[Company]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for c in companies:
        writer.writerow([c.id, c.canonical_name, *c.aliases])
    return buf.getvalue()


class NameMatcher:
    """Finds every company whose name or alias is a substring of a text.

    Names are bucketed by length so each text position needs one dict lookup
    per distinct name length instead of one ``in`` test per company.
    """

    def __init__(self, companies: Sequence[Company]):
        self._by_len = {}
        for c in companies:
            for name in c.names:
                if name:
                    self._by_len.setdefault(len(name), {}).setdefault(name, set()).add(c.id)
        self._lengths = sorted(self._by_len)

    def find(self, text: str) -> set:
        found = set()
        n = len(text)
        for size in self._lengths:
            table = self._by_len[size]
            for i in range(n - size + 1):
                hit = table.get(text[i:i + size])
                if hit:
                    found |= hit
        return found


def detect_mentions(article: Article, companies: Sequence[Company], matcher: NameMatcher | None = None) -> set:
    if matcher is None:
        matcher = NameMatcher(companies)
    return matcher.find(article.title) | matcher.find(article.body)


def build_mention_index(articles: Sequence[Article], companies: Sequence[Company]) -> MentionIndex:
    matcher = NameMatcher(companies)
    by_company = {c.id: [] for c in companies}
    for article in articles:
        for cid in detect_mentions(article, companies, matcher):
            by_company[cid].append(article.id)
    return MentionIndex({cid: sorted(set(ids)) for cid, ids in by_company.items()})
