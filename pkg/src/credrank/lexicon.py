"""Dictionary-driven term extraction for unsegmented Chinese text.

Articles are reduced to a bag of the lexicon terms they contain, found by
greedy forward maximum matching. Everything not in the lexicon is dropped.
"""

from __future__ import annotations

import io
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Mapping

from .errors import EmptyLexiconError, ParseError


@dataclass(frozen=True)
class Lexicon:
    terms: frozenset
    max_term_len: int
    # lengths present in the lexicon, longest first; used to skip impossible slices
    _lengths: tuple = field(default=(), repr=False, compare=False)

    @classmethod
    def from_terms(cls, terms: Iterable[str]) -> "Lexicon":
        cleaned = frozenset(t for t in terms if t)
        if not cleaned:
            raise EmptyLexiconError("lexicon contains no terms")
        lengths = tuple(sorted({len(t) for t in cleaned}, reverse=True))
        return cls(cleaned, lengths[0], lengths)

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self.terms


@dataclass(frozen=True)
class BagOfWords:
    counts: Mapping[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __len__(self):
        return len(self.counts)


def load_lexicon(source: str | os.PathLike | BinaryIO) -> Lexicon:
    """Read one term per line. Blank lines are skipped, CRLF is accepted.

    ``source`` is a path or a binary stream; decoding happens line by line so
    a bad byte sequence is reported with its line number.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return load_lexicon(fh)
    if isinstance(source, io.TextIOBase):
        raise TypeError("load_lexicon expects a binary stream or a path")

    terms = set()
    for lineno, raw in enumerate(source, start=1):
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8 ({exc.reason})", line=lineno) from exc
        term = line.strip()
        if term:
            terms.add(term)
    return Lexicon.from_terms(terms)


def extract_bag(text: str, lex: Lexicon) -> BagOfWords:
    """Count lexicon terms in ``text`` by forward maximum matching.

    At each position the longest term starting there is taken and the scan
    jumps past it; with no match the scan moves one codepoint on.
    """
    counts = Counter()
    terms = lex.terms
    lengths = lex._lengths or tuple(range(lex.max_term_len, 0, -1))
    n = len(text)
    i = 0
    while i < n:
        for size in lengths:
            if i + size > n:
                continue
            piece = text[i:i + size]
            if piece in terms:
                counts[piece] += 1
                i += size
                break
        else:
            i += 1
    return BagOfWords(dict(counts))


def format_bag(bag: BagOfWords) -> str:
    """Slash-joined token listing, e.g. ``银行/银行/保险``; terms in sorted order."""
    return "/".join(term for term in sorted(bag.counts) for _ in range(bag.counts[term]))
