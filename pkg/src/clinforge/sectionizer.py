"""All-caps header heuristics for clinical notes.

A line counts as a header when every letter on it is uppercase, it has at
least ``min_letters`` letters and at most ``max_chars`` characters once
surrounding whitespace is removed.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .corpus import Document, NoteSection, char_to_byte_offsets

MIN_LETTERS = 2
MAX_CHARS = 60


def _lines(text: str) -> Iterator[tuple[int, int, str]]:
    """(char_start, char_end_including_newline, line_without_newline)"""
    pos = 0
    n = len(text)
    while pos < n:
        nl = text.find("\n", pos)
        end = n if nl < 0 else nl + 1
        yield pos, end, text[pos:end].rstrip("\n")
        pos = end


def header_of(line: str, min_letters: int = MIN_LETTERS, max_chars: int = MAX_CHARS) -> str | None:
    """The header a line declares, without trailing colon, or ``None``."""
    s = line.strip()
    if not s or len(s) > max_chars:
        return None
    letters = 0
    for c in s:
        if c.isalpha():
            if not c.isupper():
                return None
            letters += 1
    if letters < min_letters:
        return None
    return s.rstrip(":").rstrip()


def normalize_header(h: str) -> str:
    return " ".join(h.strip().rstrip(":").split())


def extract_headers(note_text: str, min_letters: int = MIN_LETTERS, max_chars: int = MAX_CHARS) -> list[str]:
    out = []
    for _, _, line in _lines(note_text):
        h = header_of(line, min_letters, max_chars)
        if h is not None:
            out.append(h)
    return out


@dataclass
class HeaderLexicon:
    counts: Counter = field(default_factory=Counter)

    @property
    def headers(self) -> frozenset[str]:
        return frozenset(self.counts)

    def __contains__(self, header: str) -> bool:
        return normalize_header(header) in self.counts

    def __len__(self) -> int:
        return len(self.counts)

    def merge(self, other: "HeaderLexicon") -> "HeaderLexicon":
        return HeaderLexicon(self.counts + other.counts)

    @classmethod
    def from_headers(cls, headers: Iterable[str]) -> "HeaderLexicon":
        c = Counter(h for h in map(normalize_header, headers) if h)
        return cls(c)


def build_header_lexicon(notes: Iterable[Document | str]) -> HeaderLexicon:
    counts: Counter = Counter()
    for note in notes:
        text = note.text if isinstance(note, Document) else note
        counts.update(h for h in map(normalize_header, extract_headers(text)) if h)
    return HeaderLexicon(counts)


def score_note(note_text: str, lexicon: HeaderLexicon) -> int:
    """Distinct lexicon headers that occur as header lines in the note."""
    if not lexicon.counts:
        return 0
    found = {normalize_header(h) for h in extract_headers(note_text)}
    return sum(1 for h in found if h in lexicon.counts)


@dataclass(frozen=True)
class ScoredCandidate:
    doc_id: str
    score: int
    rank: int = 0

    def to_json(self, selected: bool) -> dict:
        return {"doc_id": self.doc_id, "score": self.score, "rank": self.rank, "selected": selected}


def rank_candidates(scores: Mapping[str, int] | Iterable[tuple[str, int]]) -> list[ScoredCandidate]:
    """Order by score descending then doc id ascending; ranks are 1..N."""
    items = scores.items() if isinstance(scores, Mapping) else scores
    ordered = sorted(items, key=lambda kv: (-kv[1], kv[0]))
    return [ScoredCandidate(doc_id, score, r) for r, (doc_id, score) in enumerate(ordered, 1)]


def score_candidates(notes: Iterable[Document], lexicon: HeaderLexicon) -> list[ScoredCandidate]:
    return rank_candidates([(d.id, score_note(d.text, lexicon)) for d in notes])


def select_top_n(scored: Sequence[ScoredCandidate], n: int) -> list[ScoredCandidate]:
    if n < 0:
        raise ValueError("n must be >= 0")
    return sorted(scored, key=lambda c: (-c.score, c.doc_id))[:n]


def split_sections(note_text: str, lexicon: HeaderLexicon) -> list[NoteSection]:
    """Cut the note at every header line whose header is in ``lexicon``.

    Text before the first such line becomes a section with ``header=None``.
    Offsets are bytes; the sections tile the whole note.
    """
    data_len = char_to_byte_offsets(note_text).tolist()
    cuts: list[tuple[int, int, str]] = []  # (line_start, body_start, header)
    for start, end, line in _lines(note_text):
        h = header_of(line)
        if h is not None and normalize_header(h) in lexicon.counts:
            cuts.append((start, end, h))
    out: list[NoteSection] = []
    n = len(note_text)
    first = cuts[0][0] if cuts else n
    if first > 0:
        out.append(NoteSection(None, note_text[:first].strip(), 0, data_len[first]))
    for i, (start, body_start, h) in enumerate(cuts):
        end = cuts[i + 1][0] if i + 1 < len(cuts) else n
        out.append(NoteSection(h, note_text[body_start:end].strip(), data_len[start], data_len[end]))
    return out
