import pytest
from hypothesis import given, strategies as st

from mseqa import tokenizer as tk

WORDS = st.sampled_from(["jenny", "was", "in", "the", "kitchen", "6", "am", ",", ".", "?", "living", "room"])


def test_tokenize_offsets():
    text = "At 6:30 am, Jenny was in the living room."
    toks = tk.tokenize(text)
    assert [t for t, _, _ in toks] == ["at", "6", ":", "30", "am", ",", "jenny", "was", "in",
                                       "the", "living", "room", "."]
    for tok, s, e in toks:
        assert text[s:e].lower() == tok


def test_vocab_specials_and_order():
    v = tk.build_vocab(["b a b", "c b a"])
    assert v.id_to_token[:4] == tk.SPECIALS
    # descending count, then alphabetical
    assert v.id_to_token[4:] == ("b", "a", "c")
    assert v.lookup("zzz") == tk.UNK_ID


def test_vocab_empty_corpus():
    with pytest.raises(ValueError):
        tk.build_vocab([])


def test_vocab_round_trip(vocab, tmp_path):
    vocab.save(tmp_path / "v.json")
    back = tk.Vocab.load(tmp_path / "v.json")
    assert back == vocab and back.digest() == vocab.digest()


def test_encode_pair_layout(vocab):
    enc = tk.encode_pair(vocab, "Where was Jenny?", "Jenny was in the kitchen.")
    assert enc.ids[0] == tk.CLS_ID
    q_len = 4
    assert enc.ids[q_len + 1] == tk.SEP_ID and enc.ids[-1] == tk.SEP_ID
    assert enc.segment_ids == [0] * (q_len + 2) + [1] * (len(enc) - q_len - 2)
    assert enc.context_base == q_len + 2
    assert enc.question_positions() == list(range(1, q_len + 1))
    assert len(enc.context_positions()) == 6
    assert not enc.truncated


def test_encode_pair_truncation(vocab):
    context = " ".join(["kitchen"] * 600)
    enc = tk.encode_pair(vocab, "where", context)
    assert len(enc) == 512 and enc.truncated and enc.ids[-1] == tk.SEP_ID


def test_question_cap(vocab):
    enc = tk.encode_pair(vocab, " ".join(["kitchen"] * 200), "bob")
    assert len(enc.question_positions()) == tk.MAX_QUESTION


def test_sentence_pair(vocab):
    enc = tk.encode_sentence_pair(vocab, "where", " ".join(["kitchen"] * 80))
    assert len(enc.context_positions()) == tk.MAX_SENTENCE
    assert enc.ids[-1] != tk.SEP_ID and enc.truncated


def test_char_span_mapping(vocab):
    context = "At 6 am, Jenny was exercising on the yoga mat in living room."
    enc = tk.encode_pair(vocab, "What was Jenny doing?", context)
    s = context.index("exercising")
    e = s + len("exercising on the yoga mat")
    i, j = tk.char_span_to_token_span(enc, (s, e))
    assert tk.token_span_to_char_span(enc, i, j) == (s, e)
    assert context[slice(*tk.token_span_to_char_span(enc, i, j))] == "exercising on the yoga mat"


def test_unmappable_span(vocab):
    context = " ".join(["kitchen"] * 600)
    enc = tk.encode_pair(vocab, "where", context)
    with pytest.raises(tk.UnmappableSpanError):
        tk.char_span_to_token_span(enc, (len(context) - 7, len(context)))


@given(st.lists(WORDS, min_size=1, max_size=40), st.data())
def test_token_aligned_spans_round_trip(words, data):
    vocab = tk.build_vocab([" ".join(words)])
    context = " ".join(words)
    enc = tk.encode_pair(vocab, "q", context)
    pos = enc.context_positions()
    a = data.draw(st.integers(0, len(pos) - 1))
    b = data.draw(st.integers(a, len(pos) - 1))
    span = tk.token_span_to_char_span(enc, pos[a], pos[b])
    assert tk.char_span_to_token_span(enc, span) == (pos[a], pos[b])
