"""Stand-alone dataset checker.

Works on the raw JSON records only, so it shares no code paths with the
generator.  Each record yields at most one violation (its first failing
check), and questions on a damaged passage are not reported on top of the
passage, which keeps the count equal to the number of damaged records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

N_MAX_SENTENCES = 26
KINDS = {"single_span", "multi_span", "yes", "no", "unknown"}
FAMILIES = {"who", "what", "when", "where", "did", "was_is", "before", "after", "emotion"}
SPLITS = {"train": 0.80, "validation": 0.12, "test": 0.08}


class DatasetParseError(ValueError):
    pass


@dataclass
class Violation:
    line: int
    record_id: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.record_id}: {self.message}"


class _Bad(Exception):
    pass


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise _Bad(message)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_passage(rec: dict) -> None:
    text = rec.get("full_text")
    sents = rec.get("sentences")
    offs = rec.get("sentence_offsets")
    _require(isinstance(text, str), "full_text missing")
    _require(isinstance(sents, list) and isinstance(offs, list), "sentences or sentence_offsets missing")
    _require(1 <= len(sents) <= N_MAX_SENTENCES, f"sentence count {len(sents)} outside [1, {N_MAX_SENTENCES}]")
    _require(len(offs) == len(sents), "sentence_offsets length differs from sentence count")
    _require(all(_is_int(o) for o in offs), "non-integer sentence offset")
    _require(all(a < b for a, b in zip(offs, offs[1:])), "sentence_offsets not strictly increasing")
    _require(text == " ".join(s.get("text", "") for s in sents), "full_text is not the space-joined sentences")
    prev_time = None
    for i, (s, off) in enumerate(zip(sents, offs)):
        st = s.get("text")
        _require(isinstance(st, str) and text.startswith(st, off), f"sentence {i} not found at offset {off}")
        ts = s.get("timestamp")
        _require(_is_int(ts) and 0 <= ts <= 1439, f"sentence {i} timestamp invalid")
        _require(prev_time is None or ts >= prev_time, f"sentence {i} timestamp decreases")
        prev_time = ts
        ranges = []
        for name, slot in sorted(s.get("slots", {}).items()):
            _require(isinstance(slot, list) and len(slot) == 3, f"sentence {i} slot {name} malformed")
            value, a, b = slot
            _require(_is_int(a) and _is_int(b) and 0 <= a <= b <= len(st),
                     f"sentence {i} slot {name} range out of bounds")
            _require(st[a:b] == value, f"sentence {i} slot {name} text mismatch")
            ranges.append((a, b))
        ranges.sort()
        _require(all(r1[1] <= r2[0] for r1, r2 in zip(ranges, ranges[1:])), f"sentence {i} slots overlap")


def _check_qa(rec: dict, passages: dict[str, dict]) -> None:
    p = passages.get(rec.get("passage_id"))
    _require(p is not None, f"unknown passage {rec.get('passage_id')!r}")
    _require(isinstance(rec.get("question"), str) and rec["question"].strip() != "", "empty question")
    _require(rec.get("family") in FAMILIES, f"unknown family {rec.get('family')!r}")
    kind = rec.get("answer_kind")
    _require(kind in KINDS, f"unknown answer_kind {kind!r}")
    _require(rec.get("split") in SPLITS, f"invalid split {rec.get('split')!r}")
    spans = rec.get("gold_spans")
    sids = rec.get("gold_sentence_ids")
    _require(isinstance(spans, list) and isinstance(sids, list), "gold_spans or gold_sentence_ids missing")
    if kind == "single_span":
        _require(len(spans) == 1, "single_span answer needs exactly one gold span")
    elif kind == "multi_span":
        _require(len(spans) >= 2, "multi_span answer needs at least two gold spans")
    else:
        _require(not spans, f"{kind} answer must have no gold spans")
    text = p["full_text"]
    for k, span in enumerate(spans):
        _require(isinstance(span, list) and len(span) == 3, f"gold span {k} malformed")
        a, b, t = span
        _require(_is_int(a) and _is_int(b) and 0 <= a < b <= len(text), f"gold span {k} offsets out of range")
        _require(text[a:b] == t, f"gold span {k} text does not match full_text[{a}:{b}]")
    _require(all(_is_int(i) for i in sids), "non-integer gold sentence id")
    _require(all(x < y for x, y in zip(sids, sids[1:])), "gold_sentence_ids not strictly ascending")
    n = len(p["sentences"])
    _require(all(0 <= i < n for i in sids), "gold sentence id out of range")
    bounds = [(p["sentence_offsets"][i], p["sentence_offsets"][i] + len(p["sentences"][i]["text"])) for i in sids]
    for k, (a, b, _) in enumerate(spans):
        _require(any(lo <= a and b <= hi for lo, hi in bounds), f"gold span {k} outside its gold sentences")
    if kind == "multi_span":
        counts = [sum(1 for a, b, _ in spans if lo <= a and b <= hi) for lo, hi in bounds]
        _require(len(sids) == len(spans) and all(c == 1 for c in counts),
                 "each gold sentence must hold exactly one gold span")


def _parse(path: Path) -> list[tuple[int, dict]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"{path}:{lineno}:{exc.colno}: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise DatasetParseError(f"{path}:{lineno}:1: expected a JSON object")
            out.append((lineno, rec))
    return out


def validate_dataset(path: str | Path) -> list[Violation]:
    """All invariant violations in the dataset file; empty for a valid file."""
    records = _parse(Path(path))
    violations: list[Violation] = []
    passages: dict[str, dict] = {}
    seen: set[str] = set()
    broken: set[str] = set()
    qa_splits: list[str] = []
    headers = 0

    for lineno, rec in records:
        kind = rec.get("kind")
        rid = str(rec.get("id", "<header>" if kind == "header" else "<no id>"))
        try:
            if kind == "header":
                headers += 1
                _require(headers == 1 and lineno == records[0][0], "header must be the single first record")
                continue
            _require(kind in ("passage", "qa"), f"unknown record kind {kind!r}")
            _require(isinstance(rec.get("id"), str) and rid not in seen, "missing or duplicate id")
            seen.add(rid)
            if kind == "passage":
                broken.add(rid)
                _check_passage(rec)
                broken.discard(rid)
                passages[rid] = rec
            else:
                qa_splits.append(rec.get("split"))
                # questions on a damaged passage are not reported again
                if rec.get("passage_id") not in broken:
                    _check_qa(rec, passages)
        except _Bad as bad:
            violations.append(Violation(lineno, rid, str(bad)))
        except (TypeError, KeyError, AttributeError, ValueError) as exc:
            violations.append(Violation(lineno, rid, f"malformed record ({exc.__class__.__name__}: {exc})"))

    n = len(qa_splits)
    for name, ratio in SPLITS.items():
        got = sum(1 for s in qa_splits if s == name)
        if abs(got - n * ratio) > 1:
            violations.append(Violation(0, "<dataset>", f"{name} split has {got} of {n} questions, "
                                                        f"expected {n * ratio:.1f} +- 1"))
    return violations
