"""Rule-based sentence splitting, tokenization and token-length statistics."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Iterable, NamedTuple, Sequence

from .corpus import char_to_byte_offsets

_TOKEN_RE = re.compile(r"(?:[^\W_]|(?<=\d)\.(?=\d))+|\S")
_TERMINAL_RE = re.compile(r"[.!?]+[\"')\]]*")
_CLOSERS = "\"')]"


class Sentence(NamedTuple):
    index: int
    start: int
    end: int


class Token(NamedTuple):
    start: int
    end: int


@dataclass(frozen=True)
class TruncationConfig:
    percentile: float = 0.95
    input_limit: int | None = None
    output_limit: int | None = None

    def __post_init__(self):
        if not 0 < self.percentile <= 1:
            raise ValueError(f"percentile must be in (0, 1], got {self.percentile}")
        for name in ("input_limit", "output_limit"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1")


def load_abbreviations(path=None) -> frozenset[str]:
    """Read an abbreviation list (one per line). ``None`` loads the bundled clinical default."""
    if path is None:
        raw = resources.files("clinforge").joinpath("resources/abbreviations.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    return frozenset(line.strip().lower() for line in raw.splitlines() if line.strip())


@lru_cache(maxsize=1)
def default_abbreviations() -> frozenset[str]:
    return load_abbreviations()


def _line_sentences(text: str, lo: int, hi: int, abbrevs: frozenset[str]) -> Iterable[tuple[int, int]]:
    i = lo
    while i < hi and text[i].isspace():
        i += 1
    start = i
    if start >= hi:
        return
    for m in _TERMINAL_RE.finditer(text, start, hi):
        end = m.end()
        j = end
        while j < hi and text[j].isspace():
            j += 1
        if j == end or j >= hi or not (text[j].isupper() or text[j].isdigit()):
            continue
        if m.group().rstrip(_CLOSERS) == ".":
            w = m.start()
            while w > start and not text[w - 1].isspace():
                w -= 1
            if text[w:end].rstrip(_CLOSERS).lower() in abbrevs:
                continue
        if end > start:
            yield start, end
        start = j
    end = hi
    while end > start and text[end - 1].isspace():
        end -= 1
    if end > start:
        yield start, end


def split_sentences(text: str, abbreviations: frozenset[str] | None = None) -> list[Sentence]:
    """Split ``text`` into sentences with byte-offset ranges.

    A sentence ends at a run of ``.``/``!``/``?`` (plus closing quotes or
    brackets) that is followed by whitespace and an uppercase letter or a
    digit, unless the word ending in a single period is a known
    abbreviation. A newline always ends a sentence. Leading and trailing
    whitespace is never part of a sentence.
    """
    if not text:
        return []
    abbrevs = default_abbreviations() if abbreviations is None else abbreviations
    offsets = char_to_byte_offsets(text)
    out: list[Sentence] = []
    lo = 0
    n = len(text)
    while lo <= n:
        hi = text.find("\n", lo)
        if hi < 0:
            hi = n
        for s, e in _line_sentences(text, lo, hi, abbrevs):
            out.append(Sentence(len(out), int(offsets[s]), int(offsets[e])))
        lo = hi + 1
    return out


def _char_tokens(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def tokenize(text: str) -> list[Token]:
    spans = _char_tokens(text)
    if not spans:
        return []
    if text.isascii():
        return [Token(s, e) for s, e in spans]
    offsets = char_to_byte_offsets(text)
    return [Token(int(offsets[s]), int(offsets[e])) for s, e in spans]


def token_strings(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def words(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; punctuation tokens are dropped."""
    return [t.lower() for t in _TOKEN_RE.findall(text) if t[0].isalnum()]


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def _as_fraction(p) -> Fraction:
    if isinstance(p, float):
        return Fraction(repr(p))
    return Fraction(p)


def length_percentile(lengths: Sequence[int], p: float) -> int:
    """Nearest-rank percentile: the ``ceil(p * n)``-th smallest value."""
    if len(lengths) == 0:
        raise ValueError("length_percentile of an empty sample")
    frac = _as_fraction(p)
    if not 0 < frac <= 1:
        raise ValueError(f"percentile fraction must be in (0, 1], got {p}")
    rank = max(1, math.ceil(frac * len(lengths)))
    return sorted(lengths)[rank - 1]


def truncate_tokens(text: str, limit: int) -> str:
    if limit < 1:
        raise ValueError("token limit must be >= 1")
    for i, m in enumerate(_TOKEN_RE.finditer(text), 1):
        if i == limit:
            end = m.end()
            return text if _TOKEN_RE.search(text, end) is None else text[:end]
    return text
