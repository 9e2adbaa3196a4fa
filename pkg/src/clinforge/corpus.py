"""Shared record types and the JSONL corpus formats.

All span coordinates in this package are byte offsets into the UTF-8
encoding of a document's text.
"""
from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence


class CorpusError(ValueError):
    """Malformed or inconsistent corpus data."""


class SpanError(CorpusError):
    pass


class SpanRangeError(SpanError):
    pass


class SpanBoundaryError(SpanError):
    pass


class SpanSource(enum.Enum):
    LEXICON = "lexicon"
    NER = "ner"


class Speaker(enum.Enum):
    DOCTOR = "doctor"
    PATIENT = "patient"


class Provenance(enum.Enum):
    NATURAL = "natural"
    SYNTHETIC_STAGE1 = "synthetic_stage1"
    SYNTHETIC_STAGE2 = "synthetic_stage2"

    @property
    def synthetic(self) -> bool:
        return self is not Provenance.NATURAL


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("document id must be a non-empty string")
        if not isinstance(self.text, str):
            raise CorpusError(f"document {self.id!r}: text must be a string")

    @property
    def data(self) -> bytes:
        return self.text.encode("utf-8")

    def to_json(self) -> dict:
        return {"id": self.id, "text": self.text, "meta": dict(self.meta)}


@dataclass(frozen=True)
class AnnotationSpan:
    start: int
    end: int
    label: str = "TERM"
    source: SpanSource = SpanSource.LEXICON

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise SpanRangeError(f"invalid span [{self.start},{self.end})")

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "label": self.label,
                "source": self.source.value}

    @classmethod
    def from_json(cls, obj: Mapping) -> "AnnotationSpan":
        return cls(int(obj["start"]), int(obj["end"]), str(obj.get("label", "TERM")),
                   SpanSource(obj.get("source", "lexicon")))


@dataclass(frozen=True)
class Turn:
    speaker: Speaker
    text: str


@dataclass(frozen=True)
class Dialogue:
    note_id: str
    turns: tuple[Turn, ...]
    provenance: Provenance = Provenance.NATURAL
    rank_score: float | None = None

    def __post_init__(self):
        if not self.turns:
            raise CorpusError(f"dialogue {self.note_id!r} has no turns")
        if self.rank_score is not None:
            if not self.provenance.synthetic:
                raise CorpusError("rank_score is only defined for synthetic dialogues")
            if not 0.0 <= self.rank_score <= 1.0:
                raise CorpusError(f"rank_score {self.rank_score} outside [0, 1]")

    def flatten(self) -> str:
        return "\n".join(f"{t.speaker.value.capitalize()}: {t.text}" for t in self.turns)

    def to_json(self) -> dict:
        return {
            "note_id": self.note_id,
            "turns": [{"speaker": t.speaker.value, "text": t.text} for t in self.turns],
            "provenance": self.provenance.value,
            "rank_score": self.rank_score,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Dialogue":
        turns = tuple(Turn(Speaker(t["speaker"]), str(t["text"])) for t in obj["turns"])
        score = obj.get("rank_score")
        return cls(str(obj["note_id"]), turns, Provenance(obj.get("provenance", "natural")),
                   None if score is None else float(score))


@dataclass(frozen=True)
class NoteSection:
    header: str | None
    body: str
    start: int
    end: int


# --- byte offsets -------------------------------------------------------------

def is_char_boundary(data: bytes, offset: int) -> bool:
    if offset == 0 or offset == len(data):
        return True
    return (data[offset] & 0xC0) != 0x80


def char_to_byte_offsets(text: str):
    """Array ``o`` of length ``len(text) + 1`` with ``o[i]`` the byte offset of char ``i``."""
    import numpy as np

    cps = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
    widths = 1 + (cps >= 0x80).astype(np.int64) + (cps >= 0x800) + (cps >= 0x10000)
    out = np.zeros(len(cps) + 1, dtype=np.int64)
    np.cumsum(widths, out=out[1:])
    return out


def validate_spans(doc: Document, spans: Iterable[AnnotationSpan]) -> list[AnnotationSpan]:
    """Check spans against ``doc`` and return them sorted by (start, end)."""
    data = doc.data
    out = sorted(spans, key=lambda s: (s.start, s.end))
    for s in out:
        if s.end > len(data):
            raise SpanRangeError(
                f"document {doc.id!r}: span [{s.start},{s.end}) exceeds text length {len(data)}")
        if not (is_char_boundary(data, s.start) and is_char_boundary(data, s.end)):
            raise SpanBoundaryError(
                f"document {doc.id!r}: span [{s.start},{s.end}) splits a multi-byte character")
    return out


# --- JSONL --------------------------------------------------------------------

def iter_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(records: Iterable[Mapping], path: str | os.PathLike) -> int:
    path = Path(path)
    n = 0
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(dumps(rec))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return n


def load_corpus(path: str | os.PathLike) -> list[Document]:
    docs: list[Document] = []
    seen: dict[str, int] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            meta = obj.get("meta") or {}
            if not isinstance(meta, dict):
                raise CorpusError("meta must be an object")
            doc = Document(obj["id"], obj["text"], {str(k): str(v) for k, v in meta.items()})
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        if doc.id in seen:
            raise CorpusError(
                f"{path}:{lineno}: duplicate document id {doc.id!r} (first seen on line {seen[doc.id]})")
        seen[doc.id] = lineno
        docs.append(doc)
    return docs


def write_corpus(docs: Sequence[Document], path: str | os.PathLike) -> int:
    return write_jsonl((d.to_json() for d in docs), path)


def load_dialogues(path: str | os.PathLike) -> list[Dialogue]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(Dialogue.from_json(obj))
        except (KeyError, ValueError, TypeError) as exc:
            raise CorpusError(f"{path}:{lineno}: bad dialogue record ({exc})") from None
    return out


def write_dialogues(dialogues: Iterable[Dialogue], path: str | os.PathLike) -> int:
    return write_jsonl((d.to_json() for d in dialogues), path)
