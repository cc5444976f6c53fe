"""Routed decoding: pick single vs multi span, then extract a span, a boolean,
"unknown", or a set of sentences."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .corpusgen import N_MAX_SENTENCES, Passage
from .heads import ANSWER_TYPES, DegenerateInputError, softmax
from .model import Model
from .tokenizer import Encoding, encode_pair, encode_sentence_pair

log = logging.getLogger(__name__)

ANSWER_KINDS = ("span", "yes", "no", "unknown", "multi_span")


@dataclass
class DecodeConfig:
    max_answer_tokens: int = 30
    threshold: float = 0.5
    max_sentences: int = N_MAX_SENTENCES
    batch_size: int = 32

    def validate(self) -> None:
        if self.max_answer_tokens < 1:
            raise ValueError("max_answer_tokens must be at least 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.max_sentences < 1 or self.batch_size < 1:
            raise ValueError("max_sentences and batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Answer:
    kind: str
    spans: list[tuple[int, int, str]] = field(default_factory=list)
    confidence: float = 0.0
    sentence_ids: list[int] = field(default_factory=list)

    def texts(self) -> list[str]:
        return [t for _, _, t in self.spans]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "spans": [list(s) for s in self.spans],
                "confidence": self.confidence}


def _log(p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=np.float64))


def decode_single_logp(logp_start, logp_end, p_a, enc: Encoding, context: str,
                       cfg: DecodeConfig) -> Answer:
    """Like ``decode_single`` but takes log-probabilities for the span ends."""
    ls = np.asarray(logp_start, dtype=np.float64)
    le = np.asarray(logp_end, dtype=np.float64)
    positions = enc.context_positions()
    if not positions:
        return Answer("unknown", confidence=float(p_a[ANSWER_TYPES.index("unknown")]))
    valid = np.zeros(len(ls), dtype=np.uint8)
    valid[positions] = 1
    i, j, best = kernels.best_span(ls, le, valid, cfg.max_answer_tokens)
    if i < 0 or ls[0] + le[0] >= best:
        k = int(np.argmax(p_a))
        return Answer(ANSWER_TYPES[k], confidence=float(p_a[k]))
    s, e = enc.offsets[i][0], enc.offsets[j][1]
    return Answer("span", [(s, e, context[s:e])], confidence=float(np.exp(best)))


def decode_single(p_start, p_end, p_a, enc: Encoding, context: str, cfg: DecodeConfig) -> Answer:
    """Best span by ln p_start[i] + ln p_end[j], or a typed answer when [CLS] wins.

    Spans are restricted to context tokens with i <= j < i + max_answer_tokens;
    ties go to the smaller i, then the smaller j.  If the [CLS] pair scores at
    least as high as the best span, the argmax of ``p_a`` (yes/no/unknown) is
    returned instead.
    """
    return decode_single_logp(_log(p_start), _log(p_end), p_a, enc, context, cfg)


def decode_multi(p_answer, passage: Passage, cfg: DecodeConfig) -> Answer:
    """Sentences whose answer probability reaches the threshold, in passage order.

    ``p_answer`` holds one probability per sentence (or an (n, 2) array of
    tag distributions).  If nothing reaches the threshold the single most
    probable sentence is returned.
    """
    p = np.asarray(p_answer, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, 1]
    if not passage.sentences or len(p) == 0:
        raise DegenerateInputError("passage has no sentences to tag")
    if len(p) > min(len(passage.sentences), cfg.max_sentences):
        raise ValueError("more sentence tags than sentences")
    chosen = [i for i in range(len(p)) if p[i] >= cfg.threshold]
    if not chosen:
        chosen = [int(np.argmax(p))]
    spans = []
    for i in chosen:
        s, e = passage.sentence_span(i)
        spans.append((s, e, passage.full_text[s:e]))
    return Answer("multi_span", spans, confidence=float(np.mean(p[chosen])), sentence_ids=chosen)


# ---------------------------------------------------------------- batched prediction

@dataclass
class Prediction:
    """An answer plus the intermediate classifier decisions used for scoring."""
    answer: Answer
    multispan: str
    answer_type: str
    p_multi: float


def predict(model: Model, items: list[tuple[Passage, str]], cfg: DecodeConfig) -> list[Prediction]:
    """Answer every (passage, question) pair; inputs are batched by length."""
    cfg.validate()
    encs = [encode_pair(model.vocab, q, p.full_text) for p, q in items]
    out: list[Prediction | None] = [None] * len(items)
    order = sorted(range(len(items)), key=lambda k: len(encs[k]))
    multi: list[int] = []
    p_multi: dict[int, float] = {}
    types: dict[int, str] = {}
    for c in range(0, len(order), cfg.batch_size):
        idx = order[c:c + cfg.batch_size]
        fp = model.full_pass([encs[k] for k in idx])
        ps = softmax(fp.multispan_logits.astype(np.float64))
        pa = softmax(fp.answer_type_logits.astype(np.float64))
        lps, lpe = fp.start_logprobs, fp.end_logprobs
        for r, k in enumerate(idx):
            p_multi[k] = float(ps[r, 1])
            types[k] = ANSWER_TYPES[int(np.argmax(pa[r]))]
            if ps[r, 1] > ps[r, 0]:
                multi.append(k)
                continue
            n = len(encs[k])
            ans = decode_single_logp(lps[r, :n], lpe[r, :n], pa[r], encs[k], items[k][0].full_text, cfg)
            out[k] = Prediction(ans, "single", types[k], p_multi[k])

    pairs, owner = [], []
    for k in multi:
        passage, question = items[k]
        sents = passage.sentences[:cfg.max_sentences]
        if len(passage.sentences) > cfg.max_sentences:
            log.warning("passage %s has %d sentences; only the first %d are tagged",
                        passage.id, len(passage.sentences), cfg.max_sentences)
        pairs.extend(encode_sentence_pair(model.vocab, question, s.text) for s in sents)
        owner.extend([k] * len(sents))
    probs = np.zeros(len(pairs))
    porder = sorted(range(len(pairs)), key=lambda k: len(pairs[k]))
    for c in range(0, len(porder), cfg.batch_size * 4):
        idx = porder[c:c + cfg.batch_size * 4]
        tp = model.tagger_pass([pairs[k] for k in idx])
        probs[idx] = softmax(tp.logits.astype(np.float64))[:, 1]
    owner_a = np.array(owner, dtype=int)
    for k in multi:
        ans = decode_multi(probs[owner_a == k], items[k][0], cfg)
        out[k] = Prediction(ans, "multi", types[k], p_multi[k])
    return out  # type: ignore[return-value]


def answer(model: Model, passage: Passage, question: str, cfg: DecodeConfig | None = None) -> Answer:
    if not question.strip():
        raise ValueError("question must not be empty")
    return predict(model, [(passage, question)], cfg or DecodeConfig())[0].answer
