import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinforge.corpus import load_corpus
from clinforge.sectionizer import (HeaderLexicon, ScoredCandidate, build_header_lexicon,
                                   extract_headers, rank_candidates, score_candidates, score_note,
                                   select_top_n, split_sections)

DATA = Path(__file__).parent / "data"


def _labelled():
    with open(DATA / "sectionizer_notes.jsonl", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


@pytest.mark.parametrize("line,expected", [
    ("HISTORY OF PRESENT ILLNESS:", ["HISTORY OF PRESENT ILLNESS"]),
    ("Chief Complaint:", []),
    ("37.5", []),
    ("A:", []),
    ("BP 120/80", ["BP 120/80"]),
    ("X" * 61, []),
    ("X" * 60, ["X" * 60]),
])
def test_extract_headers_examples(line, expected):
    assert extract_headers(line + "\n") == expected


def test_extract_headers_on_labelled_notes():
    for rec in _labelled():
        assert extract_headers(rec["text"]) == rec["headers"], rec["id"]


def test_build_header_lexicon():
    lex = build_header_lexicon(["ALLERGIES\nnone\n", "ALLERGIES:\nsulfa\n"])
    assert lex.counts == {"ALLERGIES": 2}
    assert len(build_header_lexicon([])) == 0
    train = load_corpus(DATA / "sectionizer_train.jsonl")
    assert build_header_lexicon(train).headers == {
        "CHIEF COMPLAINT", "HISTORY OF PRESENT ILLNESS", "MEDICATIONS", "ALLERGIES",
        "PHYSICAL EXAMINATION", "ASSESSMENT", "PLAN"}


def test_lexicon_merge_is_associative():
    a, b, c = (HeaderLexicon.from_headers(h) for h in (["A B"], ["A  B:", "CC"], ["CC"]))
    assert a.merge(b).merge(c) == a.merge(b.merge(c))
    assert a.merge(b).merge(c).counts == {"A B": 2, "CC": 2}


def test_score_note_examples():
    lex = HeaderLexicon.from_headers(["A1 X", "B1 Y"])
    assert score_note("A1 X\nx\nB1 Y\ny\n", lex) == 2
    assert score_note("A1 X\nx\nA1 X:\ny\n", lex) == 1
    assert score_note("A1 X\n", HeaderLexicon()) == 0


def test_labelled_scores():
    lex = build_header_lexicon(load_corpus(DATA / "sectionizer_train.jsonl"))
    for rec in _labelled():
        assert score_note(rec["text"], lex) == rec["score"], rec["id"]


def test_select_top_n_examples():
    scored = rank_candidates({"a": 3, "b": 5, "c": 4})
    assert [c.doc_id for c in select_top_n(scored, 2)] == ["b", "c"]
    assert select_top_n(scored, 0) == []
    assert [c.doc_id for c in select_top_n(rank_candidates({"a": 3, "b": 3}), 1)] == ["a"]
    assert len(select_top_n(scored, 10)) == 3
    with pytest.raises(ValueError):
        select_top_n(scored, -1)


def test_ranks_are_dense():
    ranked = rank_candidates([("z", 0), ("y", 2), ("x", 2)])
    assert ranked == [ScoredCandidate("x", 2, 1), ScoredCandidate("y", 2, 2), ScoredCandidate("z", 0, 3)]
    assert ranked[0].to_json(True) == {"doc_id": "x", "score": 2, "rank": 1, "selected": True}


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.text("abc", min_size=1, max_size=3), st.integers(0, 4), max_size=12),
       st.integers(0, 15))
def test_select_top_n_properties(scores, n):
    scored = rank_candidates(scores)
    shuffled = list(scored)
    random.Random(n).shuffle(shuffled)
    top = select_top_n(shuffled, n)
    assert len(top) == min(n, len(scores))
    assert top == scored[:n]


def test_split_sections_examples():
    lex = HeaderLexicon.from_headers(["INTRO", "PLAN"])
    secs = split_sections("INTRO\nx\nPLAN\ny", lex)
    assert [(s.header, s.body) for s in secs] == [("INTRO", "x"), ("PLAN", "y")]
    (only,) = split_sections("just prose\nhere", lex)
    assert only.header is None and only.body == "just prose\nhere"
    secs = split_sections("Seen today.\nPLAN:\nRest.\n", lex)
    assert [(s.header, s.body) for s in secs] == [(None, "Seen today."), ("PLAN", "Rest.")]


lines = st.lists(st.one_of(st.sampled_from(["PLAN:", "INTRO", "ASSESSMENT", "  PLAN  ", "ok", "",
                                             "Naïve note", "BP 120/80"]),
                           st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)),
                 max_size=12)


@settings(max_examples=300, deadline=None)
@given(lines, st.booleans())
def test_sections_partition_note(parts, trailing):
    text = "\n".join(parts) + ("\n" if trailing else "")
    data = text.encode()
    secs = split_sections(text, HeaderLexicon.from_headers(["PLAN", "INTRO", "ASSESSMENT"]))
    if not text:
        assert secs == []
        return
    assert secs[0].start == 0 and secs[-1].end == len(data)
    for a, b in zip(secs, secs[1:]):
        assert a.end == b.start
    for s in secs:
        assert s.body in data[s.start:s.end].decode()


@settings(max_examples=200, deadline=None)
@given(lines)
def test_self_lexicon_scores_at_least_one(parts):
    note = "\n".join(parts)
    if extract_headers(note):
        assert score_note(note, build_header_lexicon([note])) >= 1


@settings(max_examples=200, deadline=None)
@given(lines, st.integers(0, 3), st.integers(0, 3))
def test_padding_prose_lines_keeps_headers(parts, left, right):
    note = "\n".join(parts)
    padded = "\n".join(p if extract_headers(p) else " " * left + p + " " * right for p in parts)
    assert extract_headers(padded) == extract_headers(note)


def test_score_candidates_on_corpus():
    lex = build_header_lexicon(load_corpus(DATA / "sectionizer_train.jsonl"))
    notes = load_corpus(DATA / "sectionizer_notes.jsonl")
    ranked = score_candidates(notes, lex)
    assert [c.rank for c in ranked] == list(range(1, 21))
