"""Synthetic dialogue augmentation.

The note-to-dialogue direction is generated with a chat model and the
resulting pairs are used the other way round: dialogue as model input,
the real note as target. Stage 1 writes the dialogue from a one-shot
prompt; stage 2 (task C only) rewrites it with conversational fillers.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import re
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import (CorpusError, Dialogue, Document, Provenance, Speaker, Turn, dumps, iter_jsonl,
                     load_dialogues)
from .endpoint import ChatClient, EmptyResponse, GenerationSkipped
from .rouge import rouge_l, rouge_n
from .segmenter import count_tokens, truncate_tokens

log = logging.getLogger(__name__)

Messages = list[dict[str, str]]

_SPEAKER_RE = re.compile(r"^\s*[*_]*\s*(doctor|patient)\s*[*_]*\s*:[*_]*\s*(.*)$", re.IGNORECASE)


class Task(enum.Enum):
    B = "B"
    C = "C"


class IntegrityError(CorpusError):
    pass


def _resource(name: str) -> str:
    return resources.files("clinforge").joinpath(f"resources/{name}").read_text("utf-8").strip()


@dataclass(frozen=True)
class PromptTemplate:
    system: str
    guidelines: str
    stage2_instruction: str

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(_resource("stage1_system.txt"), _resource("stage1_guidelines.txt"),
                   _resource("stage2_system.txt"))

    @classmethod
    def from_files(cls, system=None, guidelines=None, stage2=None) -> "PromptTemplate":
        base = cls.default()

        def read(p, fallback):
            return Path(p).read_text("utf-8").strip() if p else fallback

        return cls(read(system, base.system), read(guidelines, base.guidelines),
                   read(stage2, base.stage2_instruction))


@dataclass(frozen=True)
class Exemplar:
    note: str
    dialogue: Dialogue

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Exemplar":
        """JSON object ``{"note": str, "dialogue": str | [{"speaker", "text"}, ...]}``."""
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        dia = obj.get("dialogue")
        if isinstance(dia, str):
            turns = parse_transcript(dia)
        elif isinstance(dia, list):
            turns = tuple(Turn(Speaker(t["speaker"]), t["text"]) for t in dia)
        else:
            turns = ()
        note = obj.get("note") or ""
        if not turns or not note.strip():
            raise CorpusError(f"{path}: exemplar needs a note and a non-empty dialogue")
        return cls(note, Dialogue("exemplar", turns))


def parse_transcript(text: str) -> tuple[Turn, ...]:
    """Turns from ``Doctor:`` / ``Patient:`` prefixed lines.

    Untagged lines continue the previous turn; anything before the first
    tag is ignored.
    """
    turns: list[list] = []
    for line in text.splitlines():
        m = _SPEAKER_RE.match(line)
        if m:
            turns.append([Speaker(m.group(1).lower()), m.group(2).strip()])
        elif turns and line.strip():
            turns[-1][1] = f"{turns[-1][1]} {line.strip()}".strip()
    return tuple(Turn(s, t) for s, t in turns if t)


def build_stage1_prompt(note: str, exemplar: Exemplar, template: PromptTemplate,
                        max_note_tokens: int | None = None) -> Messages:
    if not note.strip():
        raise ValueError("target note is empty")
    if not exemplar.dialogue.turns:
        raise ValueError("exemplar dialogue is empty")
    if max_note_tokens and count_tokens(note) > max_note_tokens:
        log.warning("note truncated to %d tokens for the prompt", max_note_tokens)
        note = truncate_tokens(note, max_note_tokens)
    return [
        {"role": "system", "content": f"{template.system}\n\n{template.guidelines}"},
        {"role": "user", "content": exemplar.note},
        {"role": "assistant", "content": exemplar.dialogue.flatten()},
        {"role": "user", "content": note},
    ]


def build_stage2_prompt(stage1: Dialogue, template: PromptTemplate) -> Messages:
    return [
        {"role": "system", "content": template.stage2_instruction},
        {"role": "user", "content": stage1.flatten()},
    ]


@dataclass(frozen=True)
class GenerationOutcome:
    note_id: str
    dialogue: Dialogue | None = None
    reason: str | None = None  # content_filtered | exhausted_retries | empty
    stage: int | None = None
    request_id: str | None = None

    @property
    def ok(self) -> bool:
        return self.dialogue is not None

    @property
    def status(self) -> str:
        return "ok" if self.ok else self.reason

    def manifest_record(self, rank_score: float | None = None) -> dict:
        rec = {"note_id": self.note_id, "status": self.status, "stage": self.stage,
               "rank_score": rank_score}
        if not self.ok:
            rec["request_id"] = self.request_id
        return rec


def generate_dialogue(note: Document, client: ChatClient, task: Task | str, *,
                      exemplar: Exemplar, template: PromptTemplate | None = None) -> GenerationOutcome:
    task = Task(task)
    template = template or PromptTemplate.default()
    stage = 1
    try:
        msgs = build_stage1_prompt(note.text, exemplar, template, client.config.max_note_tokens)
        raw = client.complete(msgs)
        turns = parse_transcript(raw)
        if not turns:
            log.warning("note %s: stage 1 reply has no speaker tags: %r", note.id, raw[:200])
            raise EmptyResponse("no Doctor:/Patient: lines in reply")
        dialogue = Dialogue(note.id, turns, Provenance.SYNTHETIC_STAGE1)
        if task is Task.C:
            stage = 2
            raw = client.complete(build_stage2_prompt(dialogue, template))
            turns = parse_transcript(raw)
            if not turns:
                log.warning("note %s: stage 2 reply has no speaker tags: %r", note.id, raw[:200])
                raise EmptyResponse("no Doctor:/Patient: lines in reply")
            dialogue = Dialogue(note.id, turns, Provenance.SYNTHETIC_STAGE2)
    except GenerationSkipped as exc:
        log.info("note %s skipped at stage %d: %s", note.id, stage, exc.reason)
        return GenerationOutcome(note.id, None, exc.reason, stage, exc.request_id)
    return GenerationOutcome(note.id, dialogue, None, stage)


_METRICS: dict[str, Callable] = {
    "R1": lambda c, r: rouge_n(c, r, 1).f1,
    "R2": lambda c, r: rouge_n(c, r, 2).f1,
    "RL": lambda c, r: rouge_l(c, r).f1,
}


def score_generations(candidates: Sequence[Dialogue], training_refs: Sequence[str],
                      metric: str = "R1") -> list[Dialogue]:
    """Attach ``rank_score`` = mean ROUGE F1 of the flattened dialogue against every reference."""
    if not training_refs:
        raise ValueError("ranking needs at least one training reference")
    fn = _METRICS[metric]
    out = []
    for d in candidates:
        text = d.flatten()
        score = sum(fn(text, r) for r in training_refs) / len(training_refs)
        out.append(replace(d, rank_score=min(1.0, max(0.0, score))))
    return out


def rank_generations(candidates: Sequence[Dialogue], training_refs: Sequence[str], n: int,
                     metric: str = "R1") -> list[Dialogue]:
    scored = score_generations(candidates, training_refs, metric)
    scored.sort(key=lambda d: (-d.rank_score, d.note_id))
    return scored[:max(n, 0)]


# --- resumable run -------------------------------------------------------------

RESUMABLE = {"ok", "content_filtered", "empty"}


def dialogues_path_for(manifest: str | os.PathLike) -> Path:
    m = Path(manifest)
    stem = m.name[:-len(".jsonl")] if m.name.endswith(".jsonl") else m.name
    return m.with_name(stem + ".dialogues.jsonl")


def _read_previous(manifest: Path, dialogues: Path, note_ids: set[str]) -> dict[str, GenerationOutcome]:
    if not manifest.exists():
        return {}
    recs: dict[str, dict] = {}
    for lineno, rec in iter_jsonl(manifest):
        if "note_id" not in rec or "status" not in rec:
            raise IntegrityError(f"{manifest}:{lineno}: not a manifest record")
        recs[rec["note_id"]] = rec
    unknown = sorted(set(recs) - note_ids)
    if unknown:
        raise IntegrityError(f"{manifest} lists notes not in the input: {', '.join(unknown[:5])}")
    by_id = {d.note_id: d for d in load_dialogues(dialogues)} if dialogues.exists() else {}
    done: dict[str, GenerationOutcome] = {}
    for nid, rec in recs.items():
        status = rec["status"]
        if status not in RESUMABLE:
            continue
        if status == "ok":
            if nid not in by_id:
                raise IntegrityError(f"manifest marks {nid!r} done but {dialogues} has no dialogue for it")
            done[nid] = GenerationOutcome(nid, replace(by_id[nid], rank_score=None), None, rec.get("stage"))
        else:
            done[nid] = GenerationOutcome(nid, None, status, rec.get("stage"), rec.get("request_id"))
    return done


@dataclass
class AugmentationRun:
    outcomes: list[GenerationOutcome]
    resumed: int = 0
    generated: int = 0
    manifest: Path | None = None
    dialogues: Path | None = None
    skips: dict = field(default_factory=dict)

    @property
    def dialogues_ok(self) -> list[Dialogue]:
        return [o.dialogue for o in self.outcomes if o.ok]

    @property
    def complete(self) -> bool:
        return all(o.status in RESUMABLE for o in self.outcomes)


def _append(fh, rec: Mapping) -> None:
    fh.write(dumps(rec) + "\n")
    fh.flush()
    os.fsync(fh.fileno())


def run_augmentation(notes: Sequence[Document], client: ChatClient, task: Task | str, *,
                     exemplar: Exemplar, manifest: str | os.PathLike,
                     template: PromptTemplate | None = None, resume: bool = False) -> AugmentationRun:
    """Generate dialogues for ``notes``, recording each outcome as soon as it is known.

    With ``resume`` the existing manifest is read first and every note with a
    final status (ok, content_filtered, empty) is not requested again;
    ``exhausted_retries`` entries are retried.
    """
    task = Task(task)
    manifest = Path(manifest)
    dpath = dialogues_path_for(manifest)
    ordered = sorted(notes, key=lambda d: d.id)
    done = _read_previous(manifest, dpath, {d.id for d in ordered}) if resume else {}
    if not resume:
        manifest.write_text("", encoding="utf-8")
        dpath.write_text("", encoding="utf-8")
    pending = [d for d in ordered if d.id not in done]
    results: dict[str, GenerationOutcome] = dict(done)
    with open(manifest, "a", encoding="utf-8") as mf, open(dpath, "a", encoding="utf-8") as df, \
            ThreadPoolExecutor(max_workers=client.config.max_in_flight) as pool:
        futures = {pool.submit(generate_dialogue, d, client, task, exemplar=exemplar, template=template): d
                   for d in pending}
        remaining = set(futures)
        while remaining:
            finished, remaining = wait(remaining, return_when=FIRST_EXCEPTION)
            for fut in sorted(finished, key=lambda f: futures[f].id):
                if fut.exception() is not None:
                    continue
                out = fut.result()
                results[out.note_id] = out
                if out.ok:
                    _append(df, out.dialogue.to_json())
                _append(mf, out.manifest_record())
            failed = [f for f in finished if f.exception() is not None]
            if failed:
                for f in remaining:
                    f.cancel()
                raise failed[0].exception()
    outcomes = [results[d.id] for d in ordered if d.id in results]
    run = AugmentationRun(outcomes, resumed=len(done), generated=len(pending), manifest=manifest,
                          dialogues=dpath)
    for o in outcomes:
        if not o.ok:
            run.skips[o.reason] = run.skips.get(o.reason, 0) + 1
    return run


def training_pairs(dialogues: Iterable[Dialogue], notes: Mapping[str, Document]) -> list[dict]:
    """Dataset rows: synthetic dialogue as ``input``, the real note as ``target``."""
    rows = []
    for d in dialogues:
        note = notes[d.note_id]
        if not d.provenance.synthetic:
            raise IntegrityError(f"{d.note_id}: only synthetic dialogues become training inputs")
        row = {"id": d.note_id, "input": d.flatten(), "target": note.text,
               "provenance": d.provenance.value, "rank_score": d.rank_score}
        if row["target"] != note.text or row["input"] != d.flatten():
            raise IntegrityError(f"{d.note_id}: pair direction violated")
        rows.append(row)
    return rows


def rewrite_manifest(manifest: str | os.PathLike, outcomes: Sequence[GenerationOutcome],
                     scores: Mapping[str, float]) -> None:
    """Replace the append log with one record per note, in id order, carrying rank scores."""
    manifest = Path(manifest)
    tmp = manifest.with_name(manifest.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for o in sorted(outcomes, key=lambda o: o.note_id):
            fh.write(dumps(o.manifest_record(scores.get(o.note_id))) + "\n")
    os.replace(tmp, manifest)
