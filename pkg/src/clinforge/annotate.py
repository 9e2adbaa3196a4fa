"""Entity spans from a term lexicon or from external NER output files."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import (AnnotationSpan, CorpusError, Document, SpanError, SpanSource,
                     char_to_byte_offsets, iter_jsonl, validate_spans)
from .segmenter import _char_tokens


class SpanAnnotator(Protocol):
    def annotate(self, doc: Document) -> list[AnnotationSpan]: ...


def _normalize(phrase: str) -> tuple[str, ...]:
    norm = " ".join(phrase.lower().split())
    return tuple(norm[s:e] for s, e in _char_tokens(norm))


@dataclass(frozen=True)
class TermLexicon:
    phrases: frozenset[tuple[str, ...]]
    max_phrase_len: int

    @classmethod
    def from_terms(cls, terms: Iterable[str]) -> "TermLexicon":
        phrases = frozenset(p for p in map(_normalize, terms) if p)
        if not phrases:
            raise ValueError("lexicon has no phrases")
        return cls(phrases, max(map(len, phrases)))

    def __len__(self) -> int:
        return len(self.phrases)

    def __contains__(self, phrase) -> bool:
        if isinstance(phrase, str):
            phrase = _normalize(phrase)
        return tuple(phrase) in self.phrases


def build_lexicon(path: str | os.PathLike) -> TermLexicon:
    with open(path, encoding="utf-8") as fh:
        terms = [line for line in fh if line.strip()]
    if not terms:
        raise ValueError(f"{path}: term file is empty")
    return TermLexicon.from_terms(terms)


def annotate_lexicon(doc: Document, lex: TermLexicon, label: str = "TERM") -> list[AnnotationSpan]:
    """Greedy left-to-right longest match of lexicon phrases over the document tokens."""
    text = doc.text
    spans = _char_tokens(text)
    if not spans:
        return []
    toks = [text[s:e].lower() for s, e in spans]
    offsets = char_to_byte_offsets(text)
    out = []
    i, n = 0, len(toks)
    while i < n:
        for k in range(min(lex.max_phrase_len, n - i), 0, -1):
            if tuple(toks[i:i + k]) in lex.phrases:
                start, end = spans[i][0], spans[i + k - 1][1]
                out.append(AnnotationSpan(int(offsets[start]), int(offsets[end]), label,
                                          SpanSource.LEXICON))
                i += k
                break
        else:
            i += 1
    return out


class LexiconAnnotator:
    def __init__(self, lexicon: TermLexicon, label: str = "TERM"):
        self.lexicon = lexicon
        self.label = label

    def annotate(self, doc: Document) -> list[AnnotationSpan]:
        return annotate_lexicon(doc, self.lexicon, self.label)


def load_ner_annotations(path: str | os.PathLike) -> dict[str, list[AnnotationSpan]]:
    out: dict[str, list[AnnotationSpan]] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            doc_id = obj["doc_id"]
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusError("doc_id must be a non-empty string")
            spans = [AnnotationSpan(int(s["start"]), int(s["end"]), str(s.get("label", "ENTITY")),
                                    SpanSource.NER)
                     for s in obj["spans"]]
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except (CorpusError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        out.setdefault(doc_id, []).extend(spans)
    return out


class NerFileAnnotator:
    """Serves pre-computed NER spans; unknown documents get none."""

    def __init__(self, ner: Mapping[str, Sequence[AnnotationSpan]]):
        self.ner = ner

    def annotate(self, doc: Document) -> list[AnnotationSpan]:
        return validate_spans(doc, self.ner.get(doc.id, ()))


def check_ner_coverage(ner: Mapping[str, Sequence[AnnotationSpan]], docs: Iterable[Document]) -> None:
    """Every doc id referenced by the NER file must exist in the corpus."""
    known = {d.id for d in docs}
    missing = sorted(set(ner) - known)
    if missing:
        more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise SpanError(f"NER annotations reference unknown documents: {', '.join(missing[:5])}{more}")


def _join_labels(a: str, b: str) -> str:
    parts = a.split("+")
    parts += [x for x in b.split("+") if x not in parts]
    return "+".join(parts)


def merge_overlapping(spans: Sequence[AnnotationSpan]) -> list[AnnotationSpan]:
    """Coalesce overlapping or touching spans of the same source.

    Labels of merged spans are joined with ``+`` (each distinct label once).
    """
    out: list[AnnotationSpan] = []
    open_by_source: dict[SpanSource, int] = {}
    for s in sorted(spans, key=lambda s: (s.start, s.end)):
        k = open_by_source.get(s.source)
        if k is not None and s.start <= out[k].end:
            cur = out[k]
            out[k] = AnnotationSpan(cur.start, max(cur.end, s.end), _join_labels(cur.label, s.label),
                                    s.source)
        else:
            open_by_source[s.source] = len(out)
            out.append(s)
    return sorted(out, key=lambda s: (s.start, s.end, s.source.value, s.label))
