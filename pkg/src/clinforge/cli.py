"""``forge`` command line: pretrain-build, select, augment, evaluate, stats.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 endpoint error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .annotate import build_lexicon, check_ner_coverage, load_ner_annotations
from .augment import (Exemplar, PromptTemplate, Task, rank_generations, rewrite_manifest,
                      run_augmentation, score_generations, training_pairs)
from .corpus import CorpusError, iter_jsonl, load_corpus, load_dialogues, write_jsonl
from .endpoint import ChatClient, ChatEndpointConfig, ConfigError, EndpointError, read_key_value
from .masking import BuildStats, MaskingConfig, build_examples
from .rouge import EvalPair, evaluate_corpus
from .sectionizer import build_header_lexicon, score_candidates
from .segmenter import count_tokens, length_percentile

log = logging.getLogger("clinforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ENDPOINT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _write_run_manifest(out: Path, command: str, args: argparse.Namespace, stats: dict) -> Path:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
                if k not in ("func", "config") and not callable(v)}
    path = out.with_name(out.name + ".run.json")
    path.write_text(json.dumps({"tool": "clinforge", "version": __version__, "command": command,
                                "config": resolved, "stats": stats}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


# --- subcommands ---------------------------------------------------------------

def cmd_pretrain_build(args) -> int:
    _require(args, "docs", "out")
    docs = load_corpus(args.docs)
    lexicon = build_lexicon(args.lexicon) if args.lexicon else None
    ner = load_ner_annotations(args.ner) if args.ner else {}
    check_ner_coverage(ner, docs)
    config = MaskingConfig(p_lexicon=args.p_lexicon, sentence_mask_rate=args.sentence_rate,
                           max_sentinels=args.max_sentinels, master_seed=args.seed,
                           combined=args.combined)
    stats = BuildStats()
    out = Path(args.out)

    def records():
        for ex in build_examples(docs, lexicon, ner, config, jobs=args.jobs):
            stats.add(ex)
            if ex is not None:
                yield ex.to_json()

    write_jsonl(records(), out)
    _write_run_manifest(out, "pretrain-build", args, stats.to_json())
    print(json.dumps(stats.to_json(), sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_select(args) -> int:
    _require(args, "candidates", "train_notes", "n", "out")
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    lexicon = build_header_lexicon(load_corpus(args.train_notes))
    ranked = score_candidates(load_corpus(args.candidates), lexicon)
    out = Path(args.out)
    write_jsonl((c.to_json(c.rank <= args.n) for c in ranked), out)
    selected = min(args.n, len(ranked))
    _write_run_manifest(out, "select", args, {"candidates": len(ranked), "selected": selected,
                                              "lexicon_headers": len(lexicon)})
    print(f"selected {selected} of {len(ranked)} candidates ({len(lexicon)} known headers)",
          file=sys.stderr)
    return EXIT_OK


def _load_template(template_dir) -> PromptTemplate:
    if not template_dir:
        return PromptTemplate.default()
    d = Path(template_dir)

    def pick(name):
        p = d / name
        return p if p.exists() else None

    return PromptTemplate.from_files(pick("stage1_system.txt"), pick("stage1_guidelines.txt"),
                                     pick("stage2_system.txt"))


def cmd_augment(args) -> int:
    _require(args, "notes", "endpoint_config", "task", "n", "exemplar", "out")
    try:
        config = ChatEndpointConfig.from_file(args.endpoint_config)
    except OSError as exc:
        raise ConfigError(f"cannot read endpoint config: {exc}") from None
    task = Task(args.task)
    notes = load_corpus(args.notes)
    exemplar = Exemplar.load(args.exemplar)
    template = _load_template(args.template_dir)
    if args.train_dialogues:
        refs = [d.flatten() for d in load_dialogues(args.train_dialogues)]
    else:
        refs = [exemplar.dialogue.flatten()]
    out = Path(args.out)
    manifest = Path(args.resume) if args.resume else out.with_name(out.name + ".manifest.jsonl")
    with ChatClient(config) as client:
        try:
            run = run_augmentation(notes, client, task, exemplar=exemplar, manifest=manifest,
                                   template=template, resume=bool(args.resume))
        except EndpointError:
            print(f"endpoint error; partial manifest kept at {manifest}", file=sys.stderr)
            raise
        calls, retries = client.requests, client.retries
    stats = {"notes": len(notes), "resumed": run.resumed, "attempted": run.generated,
             "requests": calls, "retries": retries, "skips": run.skips,
             "manifest": str(manifest), "dialogues": str(run.dialogues)}
    if not run.complete:
        print(f"{run.skips.get('exhausted_retries', 0)} notes exhausted retries; "
              f"rerun with --resume {manifest}", file=sys.stderr)
        print(json.dumps(stats, sort_keys=True), file=sys.stderr)
        return EXIT_ENDPOINT
    scored = score_generations(run.dialogues_ok, refs, args.rank_metric) if refs else []
    top = rank_generations(scored, refs, args.n, args.rank_metric) if scored else []
    rows = training_pairs(top, {d.id: d for d in notes})
    write_jsonl(rows, out)
    rewrite_manifest(manifest, run.outcomes, {d.note_id: d.rank_score for d in scored})
    stats["pairs"] = len(rows)
    _write_run_manifest(out, "augment", args, dict(stats, endpoint=config.to_json()))
    print(json.dumps(stats, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require(args, "pred", "ref")
    preds = {d.id: d.text for d in load_corpus(args.pred)}
    refs = {d.id: d.text for d in load_corpus(args.ref)}
    missing_pred = sorted(set(refs) - set(preds))
    missing_ref = sorted(set(preds) - set(refs))
    if missing_pred or missing_ref:
        parts = []
        if missing_pred:
            parts.append("no prediction for: " + ", ".join(missing_pred))
        if missing_ref:
            parts.append("no reference for: " + ", ".join(missing_ref))
        raise CorpusError("; ".join(parts))
    report = evaluate_corpus(EvalPair(i, preds[i], refs[i]) for i in sorted(refs))
    sys.stdout.write(report.to_table())
    if args.tsv:
        tsv = Path(args.tsv)
        tsv.write_text(report.to_tsv(), encoding="utf-8")
        _write_run_manifest(tsv, "evaluate", args, {"n_pairs": report.n_pairs})
    return EXIT_OK


def cmd_stats(args) -> int:
    _require(args, "docs", "field", "percentile")
    if not 0 < args.percentile <= 100:
        raise UsageError("--percentile must be in 1..100")
    lengths = []
    for lineno, rec in iter_jsonl(args.docs):
        if args.field not in rec:
            raise CorpusError(f"{args.docs}:{lineno}: record has no {args.field!r} field")
        lengths.append(count_tokens(rec[args.field]))
    if not lengths:
        raise CorpusError(f"{args.docs}: no records")
    from fractions import Fraction
    print(length_percentile(lengths, Fraction(args.percentile, 100)))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value file supplying defaults for this command's options")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="forge", description="Clinical dialogue/note corpus tooling.")
    ap.add_argument("--version", action="version", version=f"forge {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("pretrain-build", parents=[common], help="build span-corruption examples")
    p.add_argument("--docs")
    p.add_argument("--lexicon", help="term file, one surface form per line")
    p.add_argument("--ner", help="annotations.jsonl with external NER spans")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--combined", action="store_true",
                   help="mask gap sentences on top of entity spans in the same example")
    p.add_argument("--p-lexicon", type=float, default=0.70)
    p.add_argument("--sentence-rate", type=float, default=0.15)
    p.add_argument("--max-sentinels", type=int, default=100)
    p.set_defaults(func=cmd_pretrain_build)

    p = sub.add_parser("select", parents=[common], help="rank candidate notes by known headers")
    p.add_argument("--candidates")
    p.add_argument("--train-notes")
    p.add_argument("--n", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("augment", parents=[common], help="generate synthetic dialogues for notes")
    p.add_argument("--notes")
    p.add_argument("--endpoint-config")
    p.add_argument("--task", choices=["B", "C"])
    p.add_argument("--n", type=int)
    p.add_argument("--exemplar")
    p.add_argument("--out")
    p.add_argument("--resume", help="manifest to resume from (created if absent)")
    p.add_argument("--train-dialogues", help="dialogues.jsonl used as ranking references")
    p.add_argument("--rank-metric", choices=["R1", "R2", "RL"], default="R1")
    p.add_argument("--template-dir")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("evaluate", parents=[common], help="ROUGE report for predictions vs references")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--tsv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", parents=[common], help="token-length percentile of a field")
    p.add_argument("--docs")
    p.add_argument("--field", choices=["input", "target"])
    p.add_argument("--percentile", type=int, default=95)
    p.set_defaults(func=cmd_stats)
    return ap


def _apply_config_file(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in read_key_value(args.config).items():
            dest = k.replace("-", "_")
            if dest not in actions or dest in ("config", "help"):
                raise ConfigError(f"{args.config}: unknown option {k!r} for {args.command}")
            a = actions[dest]
            if a.nargs == 0:
                defaults[dest] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[dest] = a.type(v) if a.type else v
                if a.choices and defaults[dest] not in a.choices:
                    raise ConfigError(f"{args.config}: {k}={v} not one of {a.choices}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:  # argparse usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ConfigError, ValueError, OSError) as exc:
        print(f"forge: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"forge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EndpointError as exc:
        print(f"forge {args.command}: endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except (CorpusError, ValueError, KeyError, OSError) as exc:
        print(f"forge {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
