import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mseqa import inference as inf
from mseqa.corpusgen import Passage
from mseqa.heads import ANSWER_TYPES, DegenerateInputError
from mseqa.tokenizer import encode_pair

CONTEXT = "At 6 am, Jenny was exercising on the yoga mat in living room. Bob was in the kitchen."


def brute_decode(p_start, p_end, p_a, enc, context, max_len):
    """Exhaustive (i, j) search in probability space."""
    best, arg = -1.0, None
    pos = set(enc.context_positions())
    for i in range(len(p_start)):
        for j in range(i, min(len(p_start), i + max_len)):
            if i in pos and j in pos and p_start[i] * p_end[j] > best:
                best, arg = p_start[i] * p_end[j], (i, j)
    if arg is None or p_start[0] * p_end[0] >= best:
        return ANSWER_TYPES[int(np.argmax(p_a))], None
    s, e = enc.offsets[arg[0]][0], enc.offsets[arg[1]][1]
    return "span", context[s:e]


@pytest.fixture(scope="module")
def enc(vocab):
    return encode_pair(vocab, "What was Jenny doing?", CONTEXT)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 30), st.floats(0.0, 3.0))
def test_decode_single_matches_exhaustive_search(enc, seed, max_len, cls_boost):
    rng = np.random.default_rng(seed)
    T = len(enc)
    p_start = rng.dirichlet(np.ones(T))
    p_end = rng.dirichlet(np.ones(T))
    p_start[0] *= 1 + cls_boost * T
    p_start /= p_start.sum()
    p_a = rng.dirichlet(np.ones(3))
    got = inf.decode_single(p_start, p_end, p_a, enc, CONTEXT, inf.DecodeConfig(max_answer_tokens=max_len))
    kind, text = brute_decode(p_start, p_end, p_a, enc, CONTEXT, max_len)
    assert got.kind == kind
    if kind == "span":
        assert got.texts() == [text]
        s, e, t = got.spans[0]
        assert CONTEXT[s:e] == t


def test_decode_single_prefers_cls_on_tie(enc):
    T = len(enc)
    p = np.full(T, 1.0 / T)
    ans = inf.decode_single(p, p, np.array([0.2, 0.7, 0.1]), enc, CONTEXT, inf.DecodeConfig())
    assert ans.kind == "no" and ans.confidence == 0.7


def test_decode_single_span_example(enc):
    T = len(enc)
    i = enc.context_positions()[6]  # "exercising"
    j = i + 4  # "mat"
    p_start = np.full(T, 0.01)
    p_end = np.full(T, 0.01)
    p_start[i] = p_end[j] = 0.9
    ans = inf.decode_single(p_start, p_end, np.ones(3) / 3, enc, CONTEXT, inf.DecodeConfig())
    assert ans.kind == "span" and ans.texts() == ["exercising on the yoga mat"]
    assert ans.confidence == pytest.approx(0.81)
    short = inf.decode_single(p_start, p_end, np.ones(3) / 3, enc, CONTEXT, inf.DecodeConfig(max_answer_tokens=2))
    assert short.texts() != ["exercising on the yoga mat"]


def test_decode_single_without_context_is_unknown(vocab):
    e = encode_pair(vocab, "where", "")
    T = len(e)
    ans = inf.decode_single(np.ones(T) / T, np.ones(T) / T, np.array([0.5, 0.3, 0.2]), e, "", inf.DecodeConfig())
    assert ans.kind == "unknown"


def passage_of(small_dataset, n_min=4):
    return next(p for p in small_dataset.passages if len(p.sentences) >= n_min)


def test_decode_multi_threshold_and_order(small_dataset):
    p = passage_of(small_dataset)
    probs = np.zeros(len(p.sentences))
    probs[[3, 0]] = [0.9, 0.6]
    ans = inf.decode_multi(probs, p, inf.DecodeConfig())
    assert ans.sentence_ids == [0, 3]
    assert ans.texts() == [p.sentences[0].text, p.sentences[3].text]
    assert ans.confidence == pytest.approx(0.75)


def test_decode_multi_fallback_to_argmax(small_dataset):
    p = passage_of(small_dataset)
    probs = np.linspace(0.1, 0.4, len(p.sentences))
    ans = inf.decode_multi(probs, p, inf.DecodeConfig())
    assert ans.sentence_ids == [len(p.sentences) - 1]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.5), st.floats(0.0, 0.45))
def test_decode_multi_monotone_in_threshold(small_dataset, seed, lo, gap):
    p = passage_of(small_dataset)
    probs = np.random.default_rng(seed).random(len(p.sentences))
    strict = set(inf.decode_multi(probs, p, inf.DecodeConfig(threshold=lo + gap)).sentence_ids)
    loose = set(inf.decode_multi(probs, p, inf.DecodeConfig(threshold=lo)).sentence_ids)
    assert strict <= loose and loose


def test_decode_multi_rejects_degenerate_input(small_dataset):
    with pytest.raises(DegenerateInputError):
        inf.decode_multi(np.array([]), Passage("x", [], "", []), inf.DecodeConfig())
    p = passage_of(small_dataset)
    with pytest.raises(ValueError):
        inf.decode_multi(np.ones(len(p.sentences) + 1), p, inf.DecodeConfig())


def test_predict_is_total_and_spans_are_substrings(small_dataset, tiny_model):
    idx = small_dataset.passage_index()
    items = [(idx[q.passage_id], q.question) for q in small_dataset.qapairs[:40]]
    preds = inf.predict(tiny_model, items, inf.DecodeConfig(batch_size=7))
    assert len(preds) == len(items)
    for (p, _), pr in zip(items, preds):
        assert pr.answer.kind in inf.ANSWER_KINDS
        assert pr.multispan in ("single", "multi") and pr.answer_type in ANSWER_TYPES
        assert 0.0 <= pr.p_multi <= 1.0 and math.isfinite(pr.answer.confidence)
        for s, e, t in pr.answer.spans:
            assert p.full_text[s:e] == t


def test_predict_is_independent_of_batching(small_dataset, tiny_model):
    idx = small_dataset.passage_index()
    items = [(idx[q.passage_id], q.question) for q in small_dataset.qapairs[:20]]
    a = inf.predict(tiny_model, items, inf.DecodeConfig(batch_size=1))
    b = inf.predict(tiny_model, items, inf.DecodeConfig(batch_size=32))
    assert [x.answer.kind for x in a] == [x.answer.kind for x in b]
    assert [x.answer.spans for x in a] == [x.answer.spans for x in b]


def test_answer_rejects_empty_question(small_dataset, tiny_model):
    with pytest.raises(ValueError):
        inf.answer(tiny_model, small_dataset.passages[0], "   ")


def test_decode_config_validation():
    with pytest.raises(ValueError):
        inf.DecodeConfig(threshold=1.0).validate()
    with pytest.raises(ValueError):
        inf.DecodeConfig(max_answer_tokens=0).validate()
