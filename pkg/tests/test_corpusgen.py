import io
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from mseqa import corpusgen as cg


def check_passage(p: cg.Passage):
    assert 1 <= len(p.sentences) <= cg.N_MAX_SENTENCES
    assert all(a < b for a, b in zip(p.sentence_offsets, p.sentence_offsets[1:]))
    for s, off in zip(p.sentences, p.sentence_offsets):
        assert p.full_text[off:].startswith(s.text)
        ranges = []
        for value, a, b in s.slots.values():
            assert 0 <= a <= b <= len(s.text)
            assert s.text[a:b] == value
            ranges.append((a, b))
        ranges.sort()
        assert all(r1[1] <= r2[0] for r1, r2 in zip(ranges, ranges[1:]))
    times = [s.timestamp for s in p.sentences]
    assert times == sorted(times)


def check_qa(q: cg.QAPair, p: cg.Passage):
    n = len(q.gold_spans)
    if q.answer_kind == "single_span":
        assert n == 1
    elif q.answer_kind == "multi_span":
        assert n >= 2
        assert len(set(q.gold_sentence_ids)) == len(q.gold_sentence_ids) == n
    else:
        assert n == 0
    assert q.gold_sentence_ids == sorted(q.gold_sentence_ids)
    for s, e, t in q.gold_spans:
        assert p.full_text[s:e] == t
        assert any(lo <= s and e <= hi for lo, hi in map(p.sentence_span, q.gold_sentence_ids))


def test_example_sentence_is_rendered_with_offsets():
    text, slots = cg.render_template(cg.TEMPLATES[0].pattern, {
        "time": cg.render_time(360), "person": "Jenny",
        "activity": "exercising on the yoga mat", "location": "living room"})
    assert text == "At 6 am, Jenny was exercising on the yoga mat in living room."
    assert slots["time"] == ("6 am", 3, 7)
    sent = cg.SentenceRecord("activity", text, 360, slots)
    assert cg.derive_gold_span(sent, "time", 0) == (3, 7, "6 am")
    assert cg.derive_gold_span(sent, "activity", 100)[2] == "exercising on the yoga mat"
    with pytest.raises(KeyError):
        cg.derive_gold_span(sent, "emotion", 0)


def test_generated_passage_contains_example_sentence(catalog):
    # a one-person, one-location, one-activity catalogue pins the sentence down
    tiny = cg.SlotCatalog(["Jenny"], ["living room"], ["exercising on the yoga mat"],
                          ["happy"], [360], ["set an alarm"])
    cfg = cg.GenConfig(sentences_per_passage=(1, 1), persons_per_passage=(1, 1))
    texts = {cg.generate_passage(seed, tiny, cfg).full_text for seed in range(40)}
    assert "At 6 am, Jenny was exercising on the yoga mat in living room." in texts


def test_render_time():
    assert [cg.render_time(m) for m in (0, 360, 390, 720, 780, 1439)] == [
        "12 am", "6 am", "6:30 am", "12 pm", "1 pm", "11:59 pm"]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 64 - 1))
def test_passage_invariants(seed):
    p = cg.generate_passage(seed, cg.default_catalog(), cg.GenConfig())
    check_passage(p)
    for q in cg.generate_questions(p, seed ^ 1, cg.GenConfig(), cg.default_catalog()):
        check_qa(q, p)


def test_passage_determinism(catalog):
    cfg = cg.GenConfig()
    assert cg.generate_passage(99, catalog, cfg) == cg.generate_passage(99, catalog, cfg)


def test_single_sentence_passage(catalog):
    p = cg.generate_passage(5, catalog, cg.GenConfig(sentences_per_passage=(1, 1)))
    assert len(p.sentences) == 1


def test_empty_catalog_list_is_config_error(catalog):
    bad = cg.SlotCatalog([], catalog.locations, catalog.activities, catalog.emotions,
                         catalog.time_grid, catalog.utterances)
    with pytest.raises(cg.ConfigError):
        cg.generate_passage(1, bad, cg.GenConfig())


def test_where_question_points_at_location(small_dataset):
    idx = small_dataset.passage_index()
    found = 0
    for q in small_dataset.qapairs:
        if q.family == "where" and q.answer_kind == "single_span":
            p = idx[q.passage_id]
            sent = p.sentences[q.gold_sentence_ids[0]]
            assert q.gold_spans[0][2] == sent.slots["location"][0]
            assert sent.slots["person"][0] in q.question
            found += 1
    assert found > 0


def test_multi_span_what_happened(small_dataset):
    idx = small_dataset.passage_index()
    qs = [q for q in small_dataset.qapairs if q.question.startswith("What happened in")]
    assert qs
    for q in qs:
        p = idx[q.passage_id]
        assert q.answer_kind == "multi_span"
        for i, (_, _, text) in zip(q.gold_sentence_ids, q.gold_spans):
            s = p.sentences[i]
            assert s.slots["location"][0] in q.question
            ev = cg.TEMPLATE_BY_ID[s.template_id].event_slot
            assert text == s.slots[ev][0]


def test_unknown_questions_name_absent_people(small_dataset, catalog):
    idx = small_dataset.passage_index()
    unknown = [q for q in small_dataset.qapairs if q.answer_kind == "unknown"]
    assert unknown
    for q in unknown:
        present = {s.slots["person"][0] for s in idx[q.passage_id].sentences}
        named = [x for x in catalog.persons if x in q.question]
        assert named and not set(named) & present


def test_yes_no_questions_are_verifiable(small_dataset):
    idx = small_dataset.passage_index()
    for q in small_dataset.qapairs:
        if q.family != "did" or q.answer_kind not in ("yes", "no"):
            continue
        p = idx[q.passage_id]
        visits = {(s.slots["person"][0], s.slots["location"][0]) for s in p.sentences}
        person = q.question.split()[1]
        loc = q.question[len(f"Did {person} go to "):-1]
        assert ((person, loc) in visits) == (q.answer_kind == "yes")


def test_families_filter(catalog):
    cfg = cg.GenConfig(question_families_enabled=("where",), fraction_multi_span=0.0)
    p = cg.generate_passage(3, catalog, cfg)
    qs = cg.generate_questions(p, 4, cfg, catalog)
    assert qs and {q.family for q in qs} == {"where"}
    none = cg.GenConfig(question_families_enabled=())
    assert cg.generate_questions(p, 4, none, catalog) == []


@pytest.mark.parametrize("n", [0, 1, 7, 100, 101, 10001])
def test_split_ratio(n):
    ids = [f"q{i}" for i in range(n)]
    counts = Counter(cg.assign_splits(ids, 3).values())
    assert sum(counts.values()) == n
    for name, ratio in cg.SPLIT_RATIOS:
        assert abs(counts.get(name, 0) - n * ratio) <= 1


def test_build_dataset_100_passages(catalog):
    ds = cg.build_dataset(catalog, cg.GenConfig(n_passages=100))
    assert len(ds.passages) == 100
    n = len(ds.qapairs)
    counts = Counter(ds.split.values())
    assert abs(counts["train"] - 0.8 * n) <= 1
    assert abs(counts["validation"] - 0.12 * n) <= 1
    assert abs(counts["test"] - 0.08 * n) <= 1
    ids = {p.id for p in ds.passages}
    assert all(q.passage_id in ids for q in ds.qapairs)


def test_empty_dataset(catalog):
    ds = cg.build_dataset(catalog, cg.GenConfig(n_passages=0))
    assert ds.passages == [] and ds.qapairs == [] and ds.split == {}
    assert cg.question_prefix_stats(ds) == {}


def test_prefix_stats():
    ds = cg.Dataset([], [cg.QAPair("a", "p", "When did Jenny sleep?", "when", "yes"),
                         cg.QAPair("b", "p", "When did Bob cook?", "when", "yes")], {})
    assert cg.question_prefix_stats(ds) == {"when did jenny": 1, "when did bob": 1}


def test_prefix_stats_sum(small_dataset):
    stats = cg.question_prefix_stats(small_dataset)
    assert sum(stats.values()) == len(small_dataset.qapairs)
    # independent recount
    recount = Counter(" ".join(q.question.lower().split()[:3]) for q in small_dataset.qapairs)
    assert stats == dict(recount)


def test_jsonl_round_trip(small_dataset, tmp_path):
    path = tmp_path / "d.jsonl"
    cg.write_dataset(small_dataset, path)
    back = cg.read_dataset(path)
    assert back.passages == small_dataset.passages
    assert back.qapairs == small_dataset.qapairs
    assert back.split == small_dataset.split
    assert back.catalog == small_dataset.catalog
    assert back.config == small_dataset.config


def test_dataset_bytes_are_deterministic(catalog, tmp_path):
    cfg = cg.GenConfig(seed=21, n_passages=15)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    cg.write_dataset(cg.build_dataset(catalog, cfg), a)
    cg.write_dataset(cg.build_dataset(catalog, cg.GenConfig(seed=21, n_passages=15)), b)
    assert a.read_bytes() == b.read_bytes()


def test_vocab_corpus_covers_generated_text(small_dataset, vocab):
    from mseqa.tokenizer import UNK_ID, tokenize
    for p in small_dataset.passages:
        assert all(vocab.lookup(t) != UNK_ID for t, _, _ in tokenize(p.full_text))
    for q in small_dataset.qapairs:
        assert all(vocab.lookup(t) != UNK_ID for t, _, _ in tokenize(q.question))


def test_gen_config_validation():
    with pytest.raises(cg.ConfigError):
        cg.GenConfig(sentences_per_passage=(5, 3)).validate()
    with pytest.raises(cg.ConfigError):
        cg.GenConfig(fraction_boolean=0.6, fraction_unknown=0.5).validate()
    with pytest.raises(cg.ConfigError):
        cg.GenConfig(multi_span_min_events=1).validate()
    with pytest.raises(cg.ConfigError):
        cg.GenConfig(question_families_enabled=("why",)).validate()
