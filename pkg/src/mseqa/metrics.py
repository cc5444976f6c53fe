"""EM/F1 scoring, classifier precision/recall/F1 and the evaluation report."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .corpusgen import Dataset, Passage, QAPair
from .inference import Answer, DecodeConfig, Prediction, predict
from .model import Model
from .tokenizer import tokenize

ARTICLES = frozenset({"a", "an", "the"})
EXACT_ALIGNMENT_MAX = 8
LENGTH_BUCKETS = ((0, 128), (128, 256), (256, 384), (384, 512))
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_text(s: str) -> str:
    """Lowercase, strip ASCII punctuation, drop a/an/the tokens, collapse whitespace.

    Punctuation goes before articles are dropped so that the result is a
    fixed point (``normalize_text`` of its own output changes nothing).
    """
    tokens = s.lower().translate(_PUNCT).split()
    return " ".join(t for t in tokens if t not in ARTICLES)


def f1_single(pred: str, gold: str) -> float:
    p = normalize_text(pred).split()
    g = normalize_text(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def em_single(pred: str, gold: str) -> int:
    return int(normalize_text(pred) == normalize_text(gold))


def _greedy_alignment(scores: np.ndarray) -> float:
    # descending pairwise score, ties by (row, column)
    order = sorted(((-scores[r, c], r, c) for r in range(scores.shape[0])
                    for c in range(scores.shape[1])))
    used_r, used_c, total = set(), set(), 0.0
    for neg, r, c in order:
        if r not in used_r and c not in used_c:
            used_r.add(r)
            used_c.add(c)
            total += -neg
    return total


def multi_span_scores(preds: list[str], golds: list[str]) -> tuple[int, float]:
    """(EM, F1) for a predicted span list against a gold span list.

    EM is multiset equality of normalised strings.  F1 is the best one-to-one
    alignment's summed pairwise F1 divided by max(len(preds), len(golds));
    exact when the shorter list has at most 8 items, greedy beyond that.
    """
    em = int(Counter(map(normalize_text, preds)) == Counter(map(normalize_text, golds)))
    if not preds and not golds:
        return em, 1.0
    if not preds or not golds:
        return em, 0.0
    scores = np.array([[f1_single(p, g) for g in golds] for p in preds])
    if min(scores.shape) <= EXACT_ALIGNMENT_MAX:
        total = kernels.best_alignment(scores)
    else:
        total = _greedy_alignment(scores)
    return em, total / max(len(preds), len(golds))


def classifier_prf(pred_labels, gold_labels, positive_class) -> tuple[float, float, float]:
    if len(pred_labels) != len(gold_labels):
        raise ValueError("prediction and gold label lists differ in length")
    tp = sum(1 for p, g in zip(pred_labels, gold_labels) if p == positive_class and g == positive_class)
    fp = sum(1 for p, g in zip(pred_labels, gold_labels) if p == positive_class and g != positive_class)
    fn = sum(1 for p, g in zip(pred_labels, gold_labels) if p != positive_class and g == positive_class)
    return _prf(tp, fp, fn)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def micro_prf(pred_labels, gold_labels) -> tuple[float, float, float]:
    """Micro-averaged precision/recall/F1 over all classes (each example has one label)."""
    if len(pred_labels) != len(gold_labels):
        raise ValueError("prediction and gold label lists differ in length")
    tp = sum(1 for p, g in zip(pred_labels, gold_labels) if p == g)
    wrong = len(gold_labels) - tp
    return _prf(tp, wrong, wrong)


# ---------------------------------------------------------------- report

@dataclass
class Cell:
    em_sum: float = 0.0
    f1_sum: float = 0.0
    n: int = 0

    def add(self, em: float, f1: float) -> None:
        self.em_sum += em
        self.f1_sum += f1
        self.n += 1

    @property
    def em(self) -> float | None:
        return self.em_sum / self.n if self.n else None

    @property
    def f1(self) -> float | None:
        return self.f1_sum / self.n if self.n else None

    def to_json(self) -> dict:
        return {"EM": _pct(self.em), "F1": _pct(self.f1), "n": self.n}


def _pct(x: float | None) -> float | None:
    return None if x is None else round(100.0 * x, 1)


def _prf_json(prf: tuple[float, float, float], n: int) -> dict:
    return {"precision": _pct(prf[0]), "recall": _pct(prf[1]), "F1": _pct(prf[2]), "n": n}


@dataclass
class EvalReport:
    """Raw fractions in [0, 1]; ``to_json`` renders percentages with one decimal."""
    single_span: Cell = field(default_factory=Cell)
    multi_span: Cell = field(default_factory=Cell)
    overall: Cell = field(default_factory=Cell)
    span_extraction: Cell = field(default_factory=Cell)
    by_span_count: dict[int, Cell] = field(default_factory=dict)
    by_passage_length: dict[str, Cell] = field(default_factory=dict)
    multispan_classifier: tuple[float, float, float] = (0.0, 0.0, 0.0)
    multispan_classifier_n: int = 0
    answer_type_classifier: tuple[float, float, float] = (0.0, 0.0, 0.0)
    answer_type_classifier_n: int = 0
    sentence_selection: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sentence_selection_n: int = 0

    def to_json(self, header: dict | None = None) -> dict:
        out = {}
        if header is not None:
            out["header"] = header
        out.update({
            "single_span": self.single_span.to_json(),
            "multi_span": self.multi_span.to_json(),
            "overall": self.overall.to_json(),
            "span_extraction": self.span_extraction.to_json(),
            "by_span_count": {str(k): {"F1": _pct(c.f1), "n": c.n}
                              for k, c in sorted(self.by_span_count.items())},
            "by_passage_length": {k: {"F1": _pct(c.f1), "n": c.n}
                                  for k, c in self.by_passage_length.items()},
            "multispan_classifier": _prf_json(self.multispan_classifier, self.multispan_classifier_n),
            "answer_type_classifier": _prf_json(self.answer_type_classifier, self.answer_type_classifier_n),
            "sentence_selection": _prf_json(self.sentence_selection, self.sentence_selection_n),
        })
        return out


def bucket_label(lo: int, hi: int) -> str:
    return f"[{lo},{hi}]" if hi == LENGTH_BUCKETS[-1][1] else f"[{lo},{hi})"


def length_bucket(n_tokens: int) -> str:
    for lo, hi in LENGTH_BUCKETS[:-1]:
        if lo <= n_tokens < hi:
            return bucket_label(lo, hi)
    # the last bucket is closed and also absorbs anything longer (truncated passages)
    return bucket_label(*LENGTH_BUCKETS[-1])


def oracle_prediction(qa: QAPair) -> Prediction:
    """The gold answer expressed as a prediction; scores 100 everywhere."""
    if qa.answer_kind == "multi_span":
        # gold phrases for text scoring, gold sentence ids for the selection metric
        ans = Answer("multi_span", [tuple(s) for s in qa.gold_spans], 1.0, list(qa.gold_sentence_ids))
        return Prediction(ans, "multi", "unknown", 1.0)
    if qa.answer_kind == "single_span":
        return Prediction(Answer("span", [tuple(qa.gold_spans[0])], 1.0), "single", "unknown", 0.0)
    return Prediction(Answer(qa.answer_kind, [], 1.0), "single", qa.answer_kind, 0.0)


Predictor = Callable[[list[QAPair], dict[str, Passage]], list[Prediction]]


def model_predictor(model: Model, cfg: DecodeConfig | None = None) -> Predictor:
    def run(qas: list[QAPair], passages: dict[str, Passage]) -> list[Prediction]:
        return predict(model, [(passages[q.passage_id], q.question) for q in qas], cfg or DecodeConfig())
    return run


def oracle_predictor(qas: list[QAPair], passages: dict[str, Passage]) -> list[Prediction]:
    return [oracle_prediction(q) for q in qas]


def score_example(qa: QAPair, ans: Answer) -> tuple[float, float]:
    if qa.answer_kind == "multi_span":
        return multi_span_scores(ans.texts(), [t for _, _, t in qa.gold_spans])
    if qa.answer_kind == "single_span":
        if ans.kind != "span":
            return 0.0, 0.0
        pred, gold = ans.spans[0][2], qa.gold_spans[0][2]
        return float(em_single(pred, gold)), f1_single(pred, gold)
    hit = float(ans.kind == qa.answer_kind)
    return hit, hit


def evaluate(dataset: Dataset, predictor: Predictor, split: str | None = "test") -> EvalReport:
    """Score ``predictor`` on one split of ``dataset``."""
    passages = dataset.passage_index()
    qas = dataset.questions(split)
    preds = predictor(qas, passages)
    if len(preds) != len(qas):
        raise ValueError("predictor returned the wrong number of predictions")
    rep = EvalReport()
    rep.by_passage_length = {bucket_label(lo, hi): Cell() for lo, hi in LENGTH_BUCKETS}
    n_tokens = {pid: len(tokenize(p.full_text)) for pid, p in passages.items()}
    ms_pred, ms_gold, at_pred, at_gold = [], [], [], []
    sel_tp = sel_fp = sel_fn = 0
    for qa, pr in zip(qas, preds):
        em, f1 = score_example(qa, pr.answer)
        multi = qa.answer_kind == "multi_span"
        (rep.multi_span if multi else rep.single_span).add(em, f1)
        rep.overall.add(em, f1)
        rep.by_passage_length[length_bucket(n_tokens[qa.passage_id])].add(em, f1)
        if qa.answer_kind == "single_span":
            rep.span_extraction.add(em, f1)
        if multi:
            rep.by_span_count.setdefault(len(qa.gold_spans), Cell()).add(em, f1)
            chosen = set(pr.answer.sentence_ids) if pr.multispan == "multi" else set()
            gold = set(qa.gold_sentence_ids)
            sel_tp += len(chosen & gold)
            sel_fp += len(chosen - gold)
            sel_fn += len(gold - chosen)
        ms_pred.append(pr.multispan)
        ms_gold.append("multi" if multi else "single")
        if qa.answer_kind in ("yes", "no", "unknown"):
            at_pred.append(pr.answer_type)
            at_gold.append(qa.answer_kind)
    rep.multispan_classifier = classifier_prf(ms_pred, ms_gold, "multi")
    rep.multispan_classifier_n = len(ms_gold)
    rep.answer_type_classifier = micro_prf(at_pred, at_gold)
    rep.answer_type_classifier_n = len(at_gold)
    rep.sentence_selection = _prf(sel_tp, sel_fp, sel_fn)
    rep.sentence_selection_n = rep.multi_span.n
    return rep
