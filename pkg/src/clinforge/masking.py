"""Span-corruption pre-training examples.

Each document yields one example under one of three policies:

* both entity sources found something: the lexicon spans are masked with
  probability ``p_lexicon``, otherwise the NER spans;
* exactly one source found something: that source is masked;
* neither found anything: a fraction ``sentence_mask_rate`` of the
  sentences is masked instead.

Masked regions are replaced by sentinels ``<extra_id_i>`` and the target
interleaves the sentinels with the removed text, closed by one extra
sentinel.
"""
from __future__ import annotations

import enum
import hashlib
import logging
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotate import TermLexicon, annotate_lexicon, merge_overlapping
from .corpus import AnnotationSpan, Document, validate_spans
from .segmenter import Sentence, split_sentences

log = logging.getLogger(__name__)

SENTINEL_RE = re.compile(r"<extra_id_(\d+)>")
_SENTINEL_PREFIX = "<extra_id_"


def sentinel(i: int) -> str:
    return f"<extra_id_{i}>"


class MaskingError(ValueError):
    pass


class IntegrityError(MaskingError):
    pass


class Policy(enum.Enum):
    DUAL_CHOSE_LEXICON = "DualChoseLexicon"
    DUAL_CHOSE_NER = "DualChoseNer"
    ONLY_LEXICON = "OnlyLexicon"
    ONLY_NER = "OnlyNer"
    RANDOM_SENTENCE = "RandomSentence"

    @property
    def uses_lexicon(self) -> bool:
        return self in (Policy.DUAL_CHOSE_LEXICON, Policy.ONLY_LEXICON)

    @property
    def uses_ner(self) -> bool:
        return self in (Policy.DUAL_CHOSE_NER, Policy.ONLY_NER)


@dataclass(frozen=True)
class MaskingConfig:
    p_lexicon: float = 0.70
    sentence_mask_rate: float = 0.15
    max_sentinels: int = 100
    master_seed: int = 0
    combined: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_lexicon <= 1.0:
            raise ValueError("p_lexicon must be in [0, 1]")
        if not 0.0 < self.sentence_mask_rate < 1.0:
            raise ValueError("sentence_mask_rate must be in (0, 1)")
        if self.max_sentinels < 1:
            raise ValueError("max_sentinels must be >= 1")


@dataclass(frozen=True)
class MaskedExample:
    doc_id: str
    masked_input: str
    target: str
    policy: Policy
    seed: int
    dropped: int = field(default=0, compare=False)

    @property
    def n_masked(self) -> int:
        return len(SENTINEL_RE.findall(self.masked_input))

    def to_json(self) -> dict:
        return {"doc_id": self.doc_id, "input": self.masked_input, "target": self.target,
                "policy": self.policy.value, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: Mapping) -> "MaskedExample":
        return cls(obj["doc_id"], obj["input"], obj["target"], Policy(obj["policy"]), int(obj["seed"]))


def derive_seed(master_seed: int, doc_id: str) -> int:
    """Stable unsigned 64-bit seed for one document."""
    h = hashlib.blake2b(f"{int(master_seed)}\x1f{doc_id}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def select_policy(has_lexicon_spans: bool, has_ner_spans: bool, rng: np.random.Generator,
                  p_lexicon: float = 0.70) -> Policy:
    # rng is only consumed in the dual case
    if has_lexicon_spans and has_ner_spans:
        u = rng.random()
        return Policy.DUAL_CHOSE_LEXICON if u < p_lexicon else Policy.DUAL_CHOSE_NER
    if has_lexicon_spans:
        return Policy.ONLY_LEXICON
    if has_ner_spans:
        return Policy.ONLY_NER
    return Policy.RANDOM_SENTENCE


def _round_half_up(x: Decimal) -> int:
    return int(x.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def sentences_to_mask(n_sentences: int, rate: float) -> int:
    """``max(1, round_half_up(rate * n))``, never more than ``n``."""
    if n_sentences <= 0:
        return 0
    k = _round_half_up(Decimal(repr(rate)) * n_sentences)
    return min(n_sentences, max(1, k))


def _mask_ranges(doc_id: str, data: bytes, ranges: Sequence[tuple[int, int]], policy: Policy,
                 seed: int, max_sentinels: int) -> MaskedExample:
    if not ranges:
        raise MaskingError(f"document {doc_id!r}: nothing to mask")
    cap = max(max_sentinels - 1, 1)
    dropped = max(0, len(ranges) - cap)
    if dropped:
        log.warning("document %r: %d spans over the sentinel cap dropped", doc_id, dropped)
        ranges = ranges[:cap]
    inp: list[bytes] = []
    tgt: list[bytes] = []
    pos = 0
    for i, (s, e) in enumerate(ranges):
        if s < pos:
            raise MaskingError(f"document {doc_id!r}: spans overlap or are unsorted at [{s},{e})")
        tok = sentinel(i).encode()
        inp.append(data[pos:s])
        inp.append(tok)
        tgt.append(tok + b" " + data[s:e] + b" ")
        pos = e
    inp.append(data[pos:])
    tgt.append(sentinel(len(ranges)).encode())
    return MaskedExample(doc_id, b"".join(inp).decode("utf-8"), b"".join(tgt).decode("utf-8"),
                         policy, seed, dropped)


def _coalesce(ranges: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for s, e in sorted(ranges):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def _check_text(doc: Document) -> bytes:
    if _SENTINEL_PREFIX in doc.text:
        raise MaskingError(f"document {doc.id!r} already contains sentinel-like text")
    return doc.data


def mask_spans(doc: Document, spans: Sequence[AnnotationSpan], *, policy: Policy = Policy.ONLY_LEXICON,
               seed: int = 0, max_sentinels: int = 100) -> MaskedExample:
    """Replace each span with a sentinel. Touching spans share one sentinel; overlapping spans are an error."""
    if not spans:
        raise MaskingError(f"document {doc.id!r}: mask_spans needs at least one span")
    data = _check_text(doc)
    ranges: list[tuple[int, int]] = []
    for s in validate_spans(doc, spans):
        if ranges and s.start < ranges[-1][1]:
            raise MaskingError(f"document {doc.id!r}: overlapping spans at [{s.start},{s.end})")
        if ranges and s.start == ranges[-1][1]:
            ranges[-1] = (ranges[-1][0], s.end)
        else:
            ranges.append((s.start, s.end))
    return _mask_ranges(doc.id, data, ranges, policy, seed, max_sentinels)


def _pick_sentences(sentences: Sequence[Sentence], rng: np.random.Generator, rate: float,
                    limit: int) -> list[Sentence]:
    k = min(sentences_to_mask(len(sentences), rate), limit)
    idx = np.sort(rng.choice(len(sentences), size=k, replace=False))
    return [sentences[i] for i in idx]


def mask_random_sentences(doc: Document, sentences: Sequence[Sentence], rng: np.random.Generator, *,
                          rate: float = 0.15, seed: int = 0, max_sentinels: int = 100) -> MaskedExample:
    if not sentences:
        raise MaskingError(f"document {doc.id!r}: no sentences to mask")
    data = _check_text(doc)
    chosen = _pick_sentences(sentences, rng, rate, max(max_sentinels - 1, 1))
    return _mask_ranges(doc.id, data, [(s.start, s.end) for s in chosen], Policy.RANDOM_SENTENCE,
                        seed, max_sentinels)


def build_pretraining_example(doc: Document, lexicon_spans: Sequence[AnnotationSpan],
                              ner_spans: Sequence[AnnotationSpan],
                              config: MaskingConfig = MaskingConfig()) -> MaskedExample | None:
    """One example for ``doc``, or ``None`` when the document must be skipped."""
    if not doc.text.strip() or _SENTINEL_PREFIX in doc.text:
        return None
    seed = derive_seed(config.master_seed, doc.id)
    rng = make_rng(seed)
    policy = select_policy(bool(lexicon_spans), bool(ner_spans), rng, config.p_lexicon)
    if policy is Policy.RANDOM_SENTENCE:
        sentences = split_sentences(doc.text)
        return mask_random_sentences(doc, sentences, rng, rate=config.sentence_mask_rate, seed=seed,
                                     max_sentinels=config.max_sentinels)
    spans = merge_overlapping(validate_spans(doc, lexicon_spans if policy.uses_lexicon else ner_spans))
    if not config.combined:
        return mask_spans(doc, spans, policy=policy, seed=seed, max_sentinels=config.max_sentinels)
    # entity masking plus gap sentences in one example
    sentences = split_sentences(doc.text)
    picked = _pick_sentences(sentences, rng, config.sentence_mask_rate, len(sentences))
    ranges = _coalesce([(s.start, s.end) for s in spans] + [(s.start, s.end) for s in picked])
    return _mask_ranges(doc.id, _check_text(doc), ranges, policy, seed, config.max_sentinels)


def reconstruct(masked_input: str, target: str) -> str:
    """Splice the target's segments back over the input's sentinels."""
    tparts = SENTINEL_RE.split(target)
    ids = [int(x) for x in tparts[1::2]]
    if not ids or ids != list(range(len(ids))) or tparts[0] != "" or tparts[-1] != "":
        raise IntegrityError("target sentinels are not 0..k in order")
    segments = []
    for seg in tparts[2:-1:2]:
        if len(seg) < 2 or seg[0] != " " or seg[-1] != " ":
            raise IntegrityError("malformed target segment")
        segments.append(seg[1:-1])
    iparts = SENTINEL_RE.split(masked_input)
    in_ids = [int(x) for x in iparts[1::2]]
    if in_ids != list(range(len(segments))):
        raise IntegrityError(
            f"input has sentinels {in_ids[:5]}... but target defines {len(segments)} segments")
    out = [iparts[0]]
    for seg, text in zip(segments, iparts[2::2]):
        out.append(seg)
        out.append(text)
    return "".join(out)


# --- corpus-level, order-stable parallel build ---------------------------------

_W: dict = {}


def _init_worker(lexicon: TermLexicon | None, ner: Mapping[str, Sequence[AnnotationSpan]],
                 config: MaskingConfig) -> None:
    _W.update(lexicon=lexicon, ner=ner, config=config)


def _example_for(doc: Document) -> MaskedExample | None:
    lex = _W["lexicon"]
    lex_spans = merge_overlapping(annotate_lexicon(doc, lex)) if lex is not None else []
    ner_spans = merge_overlapping(validate_spans(doc, _W["ner"].get(doc.id, ())))
    return build_pretraining_example(doc, lex_spans, ner_spans, _W["config"])


@dataclass
class BuildStats:
    n_docs: int = 0
    n_examples: int = 0
    skipped: int = 0
    sentinels: int = 0
    dropped_spans: int = 0
    policies: Counter = field(default_factory=Counter)

    def add(self, ex: MaskedExample | None) -> None:
        self.n_docs += 1
        if ex is None:
            self.skipped += 1
            return
        self.n_examples += 1
        self.sentinels += ex.n_masked
        self.dropped_spans += ex.dropped
        self.policies[ex.policy.value] += 1

    def to_json(self) -> dict:
        return {"n_docs": self.n_docs, "n_examples": self.n_examples, "skipped": self.skipped,
                "sentinels": self.sentinels, "dropped_spans": self.dropped_spans,
                "policies": {p.value: self.policies.get(p.value, 0) for p in Policy}}


def build_examples(docs: Sequence[Document], lexicon: TermLexicon | None,
                   ner: Mapping[str, Sequence[AnnotationSpan]], config: MaskingConfig,
                   jobs: int = 1) -> Iterable[MaskedExample | None]:
    """Yield one result per input document, in input order, for any ``jobs``."""
    if jobs <= 1 or len(docs) < 2:
        _init_worker(lexicon, ner, config)
        for d in docs:
            yield _example_for(d)
        return
    chunk = max(1, min(256, len(docs) // (jobs * 4) or 1))
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(lexicon, ner, config)) as pool:
        yield from pool.map(_example_for, docs, chunksize=chunk)
