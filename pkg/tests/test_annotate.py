import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinforge.annotate import (LexiconAnnotator, NerFileAnnotator, TermLexicon, annotate_lexicon, build_lexicon, check_ner_coverage,
                                load_ner_annotations, merge_overlapping)
from clinforge.corpus import AnnotationSpan, CorpusError, Document, SpanError, SpanSource

from _docgen import TERMS, document

LEX, NER = SpanSource.LEXICON, SpanSource.NER


def _terms(tmp_path, lines):
    p = tmp_path / "terms.txt"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def test_build_lexicon_normalizes(tmp_path):
    lex = build_lexicon(_terms(tmp_path, ["Fever", "sore  throat"]))
    assert lex.phrases == {("fever",), ("sore", "throat")}
    assert lex.max_phrase_len == 2
    assert "SORE THROAT" in lex


def test_build_lexicon_collapses_duplicates(tmp_path):
    assert len(build_lexicon(_terms(tmp_path, ["fever", "fever", "FEVER "]))) == 1


def test_build_lexicon_empty_file(tmp_path):
    p = tmp_path / "terms.txt"
    p.write_text("\n  \n")
    with pytest.raises(ValueError):
        build_lexicon(p)


def test_annotate_offsets():
    lex = TermLexicon.from_terms(["sore throat", "fever"])
    spans = annotate_lexicon(Document("d", "Sore throat and fever."), lex)
    assert [(s.start, s.end) for s in spans] == [(0, 11), (16, 21)]
    assert all(s.source is LEX for s in spans)


def test_annotate_no_match():
    lex = TermLexicon.from_terms(["asthma"])
    assert annotate_lexicon(Document("d", "Sore throat and fever."), lex) == []
    assert annotate_lexicon(Document("d", ""), lex) == []


def test_longest_match_wins():
    lex = TermLexicon.from_terms(["kidney disease", "chronic kidney disease"])
    text = "History of chronic kidney disease."
    (span,) = annotate_lexicon(Document("d", text), lex)
    assert text.encode()[span.start:span.end] == b"chronic kidney disease"


def test_multibyte_offsets_are_bytes():
    lex = TermLexicon.from_terms(["fever"])
    text = "Café; fever."
    (span,) = LexiconAnnotator(lex).annotate(Document("d", text))
    assert text.encode()[span.start:span.end] == b"fever"
    assert span.start == len("Café; ".encode())


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_lexicon_spans_disjoint_and_in_lexicon(seed):
    lex = TermLexicon.from_terms(TERMS)
    doc = document(random.Random(seed), "d")
    spans = annotate_lexicon(doc, lex)
    for a, b in zip(spans, spans[1:]):
        assert a.end <= b.start
    for s in spans:
        assert doc.data[s.start:s.end].decode() in lex
    assert annotate_lexicon(doc, lex) == spans


def _ner_file(tmp_path, records):
    p = tmp_path / "ner.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return p


def test_load_ner_two_docs(tmp_path):
    p = _ner_file(tmp_path, [
        {"doc_id": "a", "spans": [{"start": 0, "end": 4, "label": "PROBLEM", "source": "lexicon"}]},
        {"doc_id": "b", "spans": []},
    ])
    ner = load_ner_annotations(p)
    assert set(ner) == {"a", "b"}
    assert ner["a"][0].source is NER


def test_load_ner_empty_file(tmp_path):
    p = tmp_path / "ner.jsonl"
    p.write_text("")
    assert load_ner_annotations(p) == {}


def test_load_ner_bad_span_line_number(tmp_path):
    p = _ner_file(tmp_path, [{"doc_id": "a", "spans": []},
                             {"doc_id": "b", "spans": [{"start": 5, "end": 5}]}])
    with pytest.raises(CorpusError, match=":2:"):
        load_ner_annotations(p)


def test_ner_coverage_and_file_annotator():
    docs = [Document("a", "fever now")]
    ner = {"a": [AnnotationSpan(0, 5, "PROBLEM", NER)]}
    check_ner_coverage(ner, docs)
    assert NerFileAnnotator(ner).annotate(docs[0]) == ner["a"]
    assert NerFileAnnotator(ner).annotate(Document("z", "x")) == []
    with pytest.raises(SpanError, match="ghost"):
        check_ner_coverage({"ghost": []}, docs)


@pytest.mark.parametrize("spans,expected", [
    ([(2, 5), (4, 9)], [(2, 9)]),
    ([(2, 5), (7, 9)], [(2, 5), (7, 9)]),
    ([(2, 5), (5, 8)], [(2, 8)]),
])
def test_merge_examples(spans, expected):
    out = merge_overlapping([AnnotationSpan(s, e, "X", NER) for s, e in spans])
    assert [(s.start, s.end) for s in out] == expected


def test_merge_joins_labels_once_and_keeps_sources_apart():
    out = merge_overlapping([AnnotationSpan(0, 4, "A", NER), AnnotationSpan(3, 6, "B", NER),
                             AnnotationSpan(5, 7, "A", NER), AnnotationSpan(1, 2, "T", LEX)])
    ner = [s for s in out if s.source is NER]
    assert [(s.start, s.end, s.label) for s in ner] == [(0, 7, "A+B")]
    assert [s for s in out if s.source is LEX] == [AnnotationSpan(1, 2, "T", LEX)]


span_lists = st.lists(st.tuples(st.integers(0, 40), st.integers(1, 8), st.sampled_from([LEX, NER]),
                                st.sampled_from("ABC")), max_size=12).map(
    lambda xs: [AnnotationSpan(s, s + w, lab, src) for s, w, src, lab in xs])


@settings(max_examples=300, deadline=None)
@given(span_lists)
def test_merge_idempotent_and_non_adjacent(spans):
    once = merge_overlapping(spans)
    assert merge_overlapping(once) == once
    for src in (LEX, NER):
        same = [s for s in once if s.source is src]
        for a, b in zip(same, same[1:]):
            assert a.end < b.start
        covered = {i for s in spans if s.source is src for i in range(s.start, s.end)}
        assert covered == {i for s in same for i in range(s.start, s.end)}
