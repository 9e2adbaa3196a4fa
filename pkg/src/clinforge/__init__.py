"""Corpus tooling for clinical dialogue-to-note summarisation."""
from __future__ import annotations

__version__ = "0.1.0"

from .corpus import (AnnotationSpan, Dialogue, Document, NoteSection, Provenance, SpanSource,
                     Speaker, Turn, load_corpus, validate_spans, write_corpus)
from .masking import MaskedExample, MaskingConfig, Policy, build_pretraining_example, reconstruct
from .rouge import MetricReport, ScoreTriple, evaluate_corpus, rouge_l, rouge_lsum, rouge_n
from .segmenter import length_percentile, split_sentences, tokenize, truncate_tokens

__all__ = [
    "AnnotationSpan", "Dialogue", "Document", "MaskedExample", "MaskingConfig", "MetricReport",
    "NoteSection", "Policy", "Provenance", "ScoreTriple", "SpanSource", "Speaker", "Turn",
    "build_pretraining_example", "evaluate_corpus", "length_percentile", "load_corpus",
    "reconstruct", "rouge_l", "rouge_lsum", "rouge_n", "split_sentences", "tokenize",
    "truncate_tokens", "validate_spans", "write_corpus",
]
