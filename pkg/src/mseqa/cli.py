"""Command-line entry point: gen-data, validate, stats, train, eval, ask."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import traceback
from pathlib import Path

from . import config as runconfig
from .checkpoint import CheckpointError
from .corpusgen import (ConfigError, Passage, SentenceRecord, build_dataset, passage_from_record,
                        question_prefix_stats, read_dataset, vocab_corpus, write_dataset)
from .inference import DecodeConfig, answer
from .metrics import evaluate, model_predictor
from .model import CompatibilityError, Model
from .tokenizer import build_vocab
from .validate import DatasetParseError, validate_dataset

log = logging.getLogger("mseqa")


class UserError(Exception):
    """Bad input from the user; reported as one line, exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(message)


def _load_config(path: str | None) -> runconfig.RunConfig:
    if path is None:
        return runconfig.RunConfig()
    return runconfig.load(path)


def _load_dataset(path: str):
    if not Path(path).is_file():
        raise UserError(f"dataset file not found: {path}")
    ds = read_dataset(path)
    if ds.catalog is None:
        raise UserError(f"{path}: dataset has no header with a slot catalog; regenerate it with gen-data")
    return ds


def _load_model(path: str):
    if not Path(path).is_file():
        raise UserError(f"checkpoint not found: {path}")
    model, header, _ = Model.load(path)
    return model, header


def _decode_config(header: dict) -> DecodeConfig:
    raw = header.get("run_config", {}).get("decode")
    return DecodeConfig(**raw) if raw else DecodeConfig()


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.with_seed(args.seed)
    cfg.validate()
    ds = build_dataset(cfg.catalog, cfg.gen)
    write_dataset(ds, args.out, {"run_config": cfg.to_dict()})
    log.info("wrote %d passages, %d questions to %s", len(ds.passages), len(ds.qapairs), args.out)
    return 0


def cmd_validate(args) -> int:
    if not Path(args.data).is_file():
        raise UserError(f"dataset file not found: {args.data}")
    violations = validate_dataset(args.data)
    for v in violations:
        print(v)
    log.info("%d violation(s) in %s", len(violations), args.data)
    return 1 if violations else 0


def cmd_stats(args) -> int:
    ds = _load_dataset(args.data)
    stats = question_prefix_stats(ds)
    ordered = dict(sorted(stats.items(), key=lambda kv: (-kv[1], kv[0])))
    json.dump(ordered, sys.stdout, indent=1, ensure_ascii=False)
    sys.stdout.write("\n")
    return 0


def cmd_train(args) -> int:
    from .training import train

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.with_seed(args.seed)
    cfg.validate()
    ds = _load_dataset(args.data)
    vocab = build_vocab(vocab_corpus(ds.catalog))
    header = {"run_config": cfg.to_dict(), "data": {"path": str(args.data),
                                                    "gen": ds.config.to_dict() if ds.config else None}}
    res = train(ds, vocab, cfg.encoder, cfg.training, out_path=args.out, log_path=args.log,
                state_path=args.state, resume_from=args.resume, extra_header=header,
                progress=log.info)
    log.info("best validation loss %.4f at epoch %d; checkpoint %s",
             res.best_validation, res.best_epoch + 1, args.out)
    return 0


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    model, header = _load_model(args.ckpt)
    if build_vocab(vocab_corpus(ds.catalog)).digest() != model.vocab.digest():
        raise CompatibilityError(f"{args.ckpt} was trained with a different vocabulary than {args.data}")
    dcfg = _decode_config(header)
    rep = evaluate(ds, model_predictor(model, dcfg), args.split)
    out = rep.to_json({"checkpoint": str(args.ckpt), "data": str(args.data), "split": args.split,
                       "run_config": header.get("run_config"), "decode": dcfg.to_dict()})
    Path(args.report).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    log.info("single F1 %s, multi F1 %s, overall F1 %s -> %s", out["single_span"]["F1"],
             out["multi_span"]["F1"], out["overall"]["F1"], args.report)
    return 0


def _passage_from_text(text: str) -> Passage:
    parts = [p for p in re.split(r"(?<=[.!?])\s+", " ".join(text.split())) if p]
    if not parts:
        raise UserError("passage file is empty")
    sentences, offsets, pos = [], [], 0
    for s in parts:
        sentences.append(SentenceRecord("text", s, 0, {}))
        offsets.append(pos)
        pos += len(s) + 1
    return Passage("passage", sentences, offsets, " ".join(parts))


def _read_passage(path: str, passage_id: str | None) -> Passage:
    if not Path(path).is_file():
        raise UserError(f"passage file not found: {path}")
    text = Path(path).read_text(encoding="utf-8")
    records = []
    for line in text.splitlines():
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            records = None
            break
        if isinstance(rec, dict) and rec.get("kind") == "passage":
            records.append(rec)
    if not records:
        if passage_id is not None:
            raise UserError("--passage-id needs a JSON Lines passage file")
        return _passage_from_text(text)
    for rec in records:
        if passage_id is None or rec.get("id") == passage_id:
            return passage_from_record(rec)
    raise UserError(f"passage {passage_id!r} not found in {path}")


def cmd_ask(args) -> int:
    model, header = _load_model(args.ckpt)
    passage = _read_passage(args.passage_file, args.passage_id)
    dcfg = _decode_config(header)
    questions = [args.question] if args.question is not None else (line.strip() for line in sys.stdin)
    for q in questions:
        if not q:
            continue
        print(json.dumps(answer(model, passage, q, dcfg).to_dict(), ensure_ascii=False), flush=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mseqa", description="Multi-span extractive QA on synthetic activity reports.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a corpus")
    g.add_argument("--config", help="run config JSON (defaults if omitted)")
    g.add_argument("--seed", type=int, help="overrides the config seed")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    v = sub.add_parser("validate", help="check every dataset invariant")
    v.add_argument("--data", required=True)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="question trigram-prefix counts as JSON")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--out", required=True, help="best-validation checkpoint")
    t.add_argument("--log", help="JSON Lines training log")
    t.add_argument("--state", help="resumable training state, rewritten after every epoch")
    t.add_argument("--resume", help="continue from a --state file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--split", default="test", choices=["train", "validation", "test"])
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ask", help="answer questions about one passage")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--passage-file", required=True, help="JSON Lines passages or plain text")
    a.add_argument("--passage-id", help="which passage of a JSON Lines file (default: first)")
    a.add_argument("--question", help="answer one question instead of reading stdin")
    a.set_defaults(func=cmd_ask)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UserError as exc:
        print(f"mseqa: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UserError, ConfigError, CompatibilityError, CheckpointError, DatasetParseError) as exc:
        print(f"mseqa: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"mseqa: error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        print("mseqa: internal error", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
