"""ROUGE-1/2/L/LSum scoring.

Texts are tokenized with :func:`clinforge.segmenter.words` (lowercased,
alphanumeric tokens only, no stemming). Every metric returns precision,
recall and F1; corpus reports macro-average them over pairs.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np

from . import _kernels
from .segmenter import split_sentences, words

METRICS = ("R1", "R2", "RL", "RLSum")

TextOrTokens = Union[str, Sequence[str]]


class ScoreTriple(NamedTuple):
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "ScoreTriple":
        if precision + recall == 0:
            return cls(precision, recall, 0.0)
        return cls(precision, recall, 2 * precision * recall / (precision + recall))

    @classmethod
    def from_counts(cls, hits: int, n_candidate: int, n_reference: int) -> "ScoreTriple":
        """Same as the harmonic mean of hits/n_candidate and hits/n_reference, without rounding drift."""
        if hits == 0:
            return ZERO
        return cls(hits / n_candidate, hits / n_reference, 2 * hits / (n_candidate + n_reference))


ZERO = ScoreTriple(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EvalPair:
    id: str
    candidate: str
    reference: str


def _tokens(x: TextOrTokens) -> list[str]:
    if isinstance(x, str):
        return words(x)
    return [t.lower() for t in x]


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    toks = [t.lower() for t in tokens]
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def rouge_n(candidate: TextOrTokens, reference: TextOrTokens, n: int = 1) -> ScoreTriple:
    cand = ngram_counts(_tokens(candidate), n)
    ref = ngram_counts(_tokens(reference), n)
    c_total, r_total = sum(cand.values()), sum(ref.values())
    if c_total == 0 or r_total == 0:
        return ZERO
    overlap = sum((cand & ref).values())
    return ScoreTriple.from_counts(overlap, c_total, r_total)


def _encode(*seqs: Sequence[str]) -> list[np.ndarray]:
    vocab: dict[str, int] = {}
    return [np.fromiter((vocab.setdefault(t, len(vocab)) for t in s), dtype=np.int64, count=len(s))
            for s in seqs]


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    x, y = _encode(a, b)
    return _kernels.lcs_length(x, y)


def rouge_l(candidate: TextOrTokens, reference: TextOrTokens) -> ScoreTriple:
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return ZERO
    lcs = lcs_length(cand, ref)
    return ScoreTriple.from_counts(lcs, len(cand), len(ref))


def _sentence_tokens(text: str) -> list[list[str]]:
    data = text.encode("utf-8")
    out = []
    for s in split_sentences(text):
        toks = words(data[s.start:s.end].decode("utf-8"))
        if toks:
            out.append(toks)
    return out


def _union_lcs(ref_ids: np.ndarray, cand_sents: list[np.ndarray]) -> list[int]:
    hit: set[int] = set()
    for c in cand_sents:
        t = _kernels.lcs_table(ref_ids, c)
        hit.update(_kernels.backtrack(t, ref_ids, c))
    return sorted(hit)


def rouge_lsum(candidate: str | Sequence[Sequence[str]],
               reference: str | Sequence[Sequence[str]]) -> ScoreTriple:
    """Summary-level LCS.

    For each reference sentence the LCS against every candidate sentence is
    taken and the matched reference positions are unioned. A matched token
    scores only while both texts still have an unused occurrence of it, so
    no candidate token is credited twice.
    """
    cand_s = _sentence_tokens(candidate) if isinstance(candidate, str) else [
        [t.lower() for t in s] for s in candidate if s]
    ref_s = _sentence_tokens(reference) if isinstance(reference, str) else [
        [t.lower() for t in s] for s in reference if s]
    m = sum(map(len, ref_s))
    n = sum(map(len, cand_s))
    if m == 0 or n == 0:
        return ZERO
    encoded = _encode(*ref_s, *cand_s)
    ref_ids, cand_ids = encoded[:len(ref_s)], encoded[len(ref_s):]
    ref_left = Counter(t for s in ref_s for t in s)
    cand_left = Counter(t for s in cand_s for t in s)
    hits = 0
    for sent, ids in zip(ref_s, ref_ids):
        for i in _union_lcs(ids, cand_ids):
            tok = sent[i]
            if cand_left[tok] > 0 and ref_left[tok] > 0:
                hits += 1
                cand_left[tok] -= 1
                ref_left[tok] -= 1
    return ScoreTriple.from_counts(hits, n, m)


def score_pair(candidate: str, reference: str) -> dict[str, ScoreTriple]:
    return {
        "R1": rouge_n(candidate, reference, 1),
        "R2": rouge_n(candidate, reference, 2),
        "RL": rouge_l(candidate, reference),
        "RLSum": rouge_lsum(candidate, reference),
    }


@dataclass(frozen=True)
class MetricReport:
    scores: Mapping[str, ScoreTriple]
    n_pairs: int
    per_pair: Mapping[str, Mapping[str, ScoreTriple]] = field(default_factory=dict, repr=False)

    def __getitem__(self, metric: str) -> ScoreTriple:
        return self.scores[metric]

    def to_tsv(self) -> str:
        head = ["n_pairs"] + [f"{m}_{k}" for m in METRICS for k in ("P", "R", "F1")]
        row = [str(self.n_pairs)] + [f"{v:.6f}" for m in METRICS for v in self.scores[m]]
        return "\t".join(head) + "\n" + "\t".join(row) + "\n"

    def to_table(self) -> str:
        """Aligned text table, scores x100 with two decimals."""
        lines = [f"{'':<4}" + "".join(f"{m:>9}" for m in METRICS)]
        for k, label in enumerate(("P", "R", "F1")):
            lines.append(f"{label:<4}" + "".join(f"{100 * self.scores[m][k]:>9.2f}" for m in METRICS))
        lines.append(f"n_pairs = {self.n_pairs}")
        return "\n".join(lines) + "\n"


def evaluate_corpus(pairs: Iterable[EvalPair]) -> MetricReport:
    per_pair: dict[str, dict[str, ScoreTriple]] = {}
    for p in pairs:
        if p.id in per_pair:
            raise ValueError(f"duplicate evaluation id {p.id!r}")
        per_pair[p.id] = score_pair(p.candidate, p.reference)
    if not per_pair:
        raise ValueError("evaluate_corpus needs at least one pair")
    n = len(per_pair)
    means = {}
    for m in METRICS:
        arr = np.array([s[m] for s in per_pair.values()], dtype=np.float64)
        means[m] = ScoreTriple(*(float(v) for v in arr.mean(axis=0)))
    return MetricReport(means, n, per_pair)
