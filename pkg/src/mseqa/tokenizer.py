"""Closed-vocabulary word/punctuation tokenizer with exact char offsets."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
SPECIALS = (CLS, SEP, PAD, UNK)
CLS_ID, SEP_ID, PAD_ID, UNK_ID = range(4)

MAX_QUESTION = 128
MAX_TOTAL = 512
MAX_SENTENCE = 64

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class UnmappableSpanError(ValueError):
    """The character span has no surviving context token (truncated away)."""


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Lowercased tokens with their ``[start, end)`` char offsets in ``text``."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(compare=False, repr=False)

    cls_id = CLS_ID
    sep_id = SEP_ID
    pad_id = PAD_ID
    unk_id = UNK_ID

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocab":
        tokens = tuple(tokens)
        if tokens[:4] != SPECIALS:
            raise ValueError("vocab must start with [CLS], [SEP], [PAD], [UNK]")
        mapping = {t: i for i, t in enumerate(tokens)}
        if len(mapping) != len(tokens):
            raise ValueError("duplicate token in vocab")
        return cls(tokens, mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def to_json(self) -> str:
        return json.dumps(list(self.id_to_token), ensure_ascii=False)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_tokens(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    counts: Counter[str] = Counter()
    n_docs = 0
    for text in corpus:
        n_docs += 1
        counts.update(tok for tok, _, _ in tokenize(text))
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
                  key=lambda t: (-counts[t], t))
    return Vocab.from_tokens(SPECIALS + tuple(kept))


@dataclass
class Encoding:
    ids: list[int]
    offsets: list[tuple[int, int]]
    segment_ids: list[int]
    attention_mask: list[int]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def context_base(self) -> int:
        """Index of the first context token (right after the first [SEP])."""
        return self.ids.index(SEP_ID) + 1

    def context_positions(self) -> list[int]:
        return [i for i in range(self.context_base, len(self.ids))
                if self.segment_ids[i] == 1 and self.ids[i] not in (SEP_ID, PAD_ID)
                and self.attention_mask[i]]

    def question_positions(self) -> list[int]:
        return [i for i in range(1, self.context_base - 1)]


def _frame(vocab: Vocab, q_toks, c_toks, closing_sep: bool, truncated: bool) -> Encoding:
    ids = [CLS_ID]
    offsets = [(0, 0)]
    segs = [0]
    for tok, s, e in q_toks:
        ids.append(vocab.lookup(tok))
        offsets.append((s, e))
        segs.append(0)
    ids.append(SEP_ID)
    offsets.append((0, 0))
    segs.append(0)
    for tok, s, e in c_toks:
        ids.append(vocab.lookup(tok))
        offsets.append((s, e))
        segs.append(1)
    if closing_sep:
        ids.append(SEP_ID)
        offsets.append((0, 0))
        segs.append(1)
    return Encoding(ids, offsets, segs, [1] * len(ids), truncated)


def encode_pair(vocab: Vocab, question: str, context: str,
                max_question: int = MAX_QUESTION, max_total: int = MAX_TOTAL) -> Encoding:
    """``[CLS] question [SEP] context [SEP]``, context cut to fit ``max_total``."""
    q_toks = tokenize(question)[:max_question]
    c_toks = tokenize(context)
    room = max_total - len(q_toks) - 3
    truncated = len(c_toks) > room
    return _frame(vocab, q_toks, c_toks[:max(room, 0)], True, truncated)


def encode_sentence_pair(vocab: Vocab, question: str, sentence: str,
                         max_question: int = MAX_QUESTION, max_sentence: int = MAX_SENTENCE) -> Encoding:
    """``[CLS] question [SEP] sentence`` with the sentence cut to ``max_sentence`` tokens."""
    q_toks = tokenize(question)[:max_question]
    s_toks = tokenize(sentence)
    return _frame(vocab, q_toks, s_toks[:max_sentence], False, len(s_toks) > max_sentence)


def char_span_to_token_span(enc: Encoding, span: tuple[int, int]) -> tuple[int, int]:
    start, end = span
    hits = [i for i in enc.context_positions()
            if enc.offsets[i][0] < end and enc.offsets[i][1] > start]
    if not hits:
        raise UnmappableSpanError(f"char span {span} maps to no context token")
    return hits[0], hits[-1]


def token_span_to_char_span(enc: Encoding, token_start: int, token_end: int) -> tuple[int, int]:
    return enc.offsets[token_start][0], enc.offsets[token_end][1]
