"""Synthetic smart-home activity reports with rule-derived gold spans.

Every sentence is rendered from a template, so the character range of each
filled slot is known at render time.  Questions are enumerated from the
passage structure and sampled per passage; answers are recovered from the
slot provenance and never by string search.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .rng import SplitMix64, derive_seed

N_MAX_SENTENCES = 26
ANSWER_KINDS = ("single_span", "multi_span", "yes", "no", "unknown")
FAMILIES = ("who", "what", "when", "where", "did", "was_is", "before", "after", "emotion")
SPLIT_RATIOS = (("train", 0.80), ("validation", 0.12), ("test", 0.08))

# morning / afternoon / evening boundaries in minutes since midnight
PERIODS = (("morning", 0, 720), ("afternoon", 720, 1080), ("evening", 1080, 1440))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    id: str
    pattern: str
    event_slot: str
    weight: float


TEMPLATES = (
    Template("activity", "At {time}, {person} was {activity} in {location}.", "activity", 0.6),
    Template("emotion", "At {time}, {person} was feeling {emotion} in {location}.", "emotion", 0.2),
    Template("command", "At {time}, {person} told the assistant to {utterance} in {location}.", "utterance", 0.2),
)
TEMPLATE_BY_ID = {t.id: t for t in TEMPLATES}

# fixed wording of every question form, used for vocabulary construction
QUESTION_FORMS = (
    "Where was {person} at {time}?",
    "Who was in {location} at {time}?",
    "What was {person} doing at {time}?",
    "What did {person} tell the assistant to do at {time}?",
    "How was {person} feeling at {time}?",
    "When was {person} {activity}?",
    "When was {person} feeling {emotion}?",
    "What happened in {location} in the {period}?",
    "What did {person} do before {time}?",
    "What did {person} do after {time}?",
    "Was {person} in {location} at {time}?",
    "Did {person} go to {location}?",
)


@dataclass
class SlotCatalog:
    persons: list[str]
    locations: list[str]
    activities: list[str]
    emotions: list[str]
    time_grid: list[int]
    utterances: list[str]

    def validate(self) -> None:
        for name in ("persons", "locations", "activities", "emotions", "time_grid", "utterances"):
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"catalog.{name} is empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"catalog.{name} has duplicate entries")
        for t in self.time_grid:
            if not 0 <= t <= 1439:
                raise ConfigError(f"catalog.time_grid value {t} outside [0, 1439]")

    @classmethod
    def from_dict(cls, d: dict) -> "SlotCatalog":
        return cls(**{k: list(v) for k, v in d.items()})


def default_catalog() -> SlotCatalog:
    return SlotCatalog(
        persons=["Jenny", "Bob", "Alice", "David", "Maria", "Tom", "Sarah", "Kevin"],
        locations=["living room", "kitchen", "bedroom", "bathroom", "garage",
                   "dining room", "office", "garden"],
        activities=[
            "exercising on the yoga mat", "cooking pasta", "watching television",
            "reading a book", "washing the dishes", "sleeping", "vacuuming the floor",
            "playing the piano", "folding laundry", "brushing teeth", "eating breakfast",
            "fixing the bicycle", "watering the plants", "doing homework",
            "taking a shower", "playing video games",
        ],
        emotions=["happy", "sad", "tired", "anxious", "relaxed", "angry", "excited", "bored"],
        time_grid=list(range(360, 1440, 30)),
        utterances=[
            "turn on the lights", "play some music", "set an alarm", "lower the thermostat",
            "lock the front door", "order more coffee", "read the news", "turn off the television",
        ],
    )


@dataclass
class GenConfig:
    seed: int = 7
    n_passages: int = 500
    sentences_per_passage: tuple[int, int] = (4, 26)
    persons_per_passage: tuple[int, int] = (1, 3)
    questions_per_passage: int = 20
    question_families_enabled: tuple[str, ...] = FAMILIES
    fraction_boolean: float = 0.15
    fraction_unknown: float = 0.10
    fraction_multi_span: float = 0.25
    multi_span_min_events: int = 2

    def __post_init__(self):
        self.sentences_per_passage = tuple(self.sentences_per_passage)
        self.persons_per_passage = tuple(self.persons_per_passage)
        self.question_families_enabled = tuple(self.question_families_enabled)

    @property
    def fraction_single_span(self) -> float:
        return 1.0 - self.fraction_boolean - self.fraction_unknown - self.fraction_multi_span

    def validate(self) -> None:
        lo, hi = self.sentences_per_passage
        if not 1 <= lo <= hi <= N_MAX_SENTENCES:
            raise ConfigError(f"sentences_per_passage must satisfy 1 <= min <= max <= {N_MAX_SENTENCES}")
        plo, phi = self.persons_per_passage
        if not 1 <= plo <= phi:
            raise ConfigError("persons_per_passage must satisfy 1 <= min <= max")
        if self.n_passages < 0 or self.questions_per_passage < 0:
            raise ConfigError("counts must be non-negative")
        for name in ("fraction_boolean", "fraction_unknown", "fraction_multi_span"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.fraction_single_span < -1e-12:
            raise ConfigError("answer-kind fractions exceed 1")
        if self.multi_span_min_events < 2:
            raise ConfigError("multi_span_min_events must be at least 2")
        unknown = set(self.question_families_enabled) - set(FAMILIES)
        if unknown:
            raise ConfigError(f"unknown question families: {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass
class SentenceRecord:
    template_id: str
    text: str
    timestamp: int
    slots: dict[str, tuple[str, int, int]]


@dataclass
class Passage:
    id: str
    sentences: list[SentenceRecord]
    sentence_offsets: list[int]
    full_text: str

    def sentence_span(self, i: int) -> tuple[int, int]:
        start = self.sentence_offsets[i]
        return start, start + len(self.sentences[i].text)


@dataclass
class QAPair:
    id: str
    passage_id: str
    question: str
    family: str
    answer_kind: str
    gold_spans: list[tuple[int, int, str]] = field(default_factory=list)
    gold_sentence_ids: list[int] = field(default_factory=list)


@dataclass
class Dataset:
    passages: list[Passage]
    qapairs: list[QAPair]
    split: dict[str, str]
    catalog: SlotCatalog | None = None
    config: GenConfig | None = None

    def passage_index(self) -> dict[str, Passage]:
        return {p.id: p for p in self.passages}

    def questions(self, split: str | None = None) -> list[QAPair]:
        if split is None:
            return list(self.qapairs)
        return [q for q in self.qapairs if self.split.get(q.id) == split]


def render_time(minutes: int) -> str:
    h, m = divmod(minutes, 60)
    suffix = "am" if h < 12 else "pm"
    h12 = h % 12 or 12
    return f"{h12}:{m:02d} {suffix}" if m else f"{h12} {suffix}"


def period_of(minutes: int) -> str:
    for name, lo, hi in PERIODS:
        if lo <= minutes < hi:
            return name
    raise ValueError(minutes)


def render_template(pattern: str, values: dict[str, str]) -> tuple[str, dict[str, tuple[str, int, int]]]:
    """Fill ``{slot}`` placeholders left to right, recording each slot's char range."""
    out: list[str] = []
    slots: dict[str, tuple[str, int, int]] = {}
    pos = 0
    i = 0
    while i < len(pattern):
        j = pattern.find("{", i)
        if j < 0:
            out.append(pattern[i:])
            break
        out.append(pattern[i:j])
        pos += j - i
        k = pattern.index("}", j)
        name = pattern[j + 1:k]
        value = values[name]
        slots[name] = (value, pos, pos + len(value))
        out.append(value)
        pos += len(value)
        i = k + 1
    return "".join(out), slots


def _draw_range(rng: SplitMix64, lo_hi: tuple[int, int]) -> int:
    lo, hi = lo_hi
    return lo + rng.below(hi - lo + 1)


def _weighted_index(rng: SplitMix64, weights: list[float]) -> int:
    total = sum(weights)
    r = rng.uniform() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if r < acc and w > 0:
            return i
    return max(i for i, w in enumerate(weights) if w > 0)


def generate_passage(seed: int, catalog: SlotCatalog, cfg: GenConfig,
                     passage_id: str | None = None) -> Passage:
    catalog.validate()
    rng = SplitMix64(seed)
    n = _draw_range(rng, cfg.sentences_per_passage)
    k = min(_draw_range(rng, cfg.persons_per_passage), len(catalog.persons))
    people = rng.sample(catalog.persons, k)
    if len(catalog.time_grid) >= n:
        times = sorted(rng.sample(catalog.time_grid, n))
    else:
        times = sorted(rng.choice(catalog.time_grid) for _ in range(n))

    weights = [t.weight for t in TEMPLATES]
    pools = {"activity": catalog.activities, "emotion": catalog.emotions,
             "utterance": catalog.utterances}
    sentences = []
    for t in times:
        template = TEMPLATES[_weighted_index(rng, weights)]
        values = {
            "time": render_time(t),
            "person": rng.choice(people),
            "location": rng.choice(catalog.locations),
            template.event_slot: rng.choice(pools[template.event_slot]),
        }
        text, slots = render_template(template.pattern, values)
        sentences.append(SentenceRecord(template.id, text, t, slots))

    offsets = []
    pos = 0
    for s in sentences:
        offsets.append(pos)
        pos += len(s.text) + 1
    full_text = " ".join(s.text for s in sentences)
    return Passage(passage_id or f"p{seed:016x}", sentences, offsets, full_text)


def derive_gold_span(sentence: SentenceRecord, slot_name: str, passage_offset: int) -> tuple[int, int, str]:
    if slot_name not in sentence.slots:
        raise KeyError(f"slot {slot_name!r} not present in template {sentence.template_id!r}")
    value, start, end = sentence.slots[slot_name]
    return passage_offset + start, passage_offset + end, value


def _event_slot(sentence: SentenceRecord) -> str:
    return TEMPLATE_BY_ID[sentence.template_id].event_slot


def _slot(sentence: SentenceRecord, name: str) -> str:
    return sentence.slots[name][0]


def _enumerate_candidates(passage: Passage, catalog: SlotCatalog | None, cfg: GenConfig,
                          rng: SplitMix64) -> dict[str, dict[str, list[tuple]]]:
    """All askable questions as ``kind -> family -> [(question, spans, sentence_ids)]``."""
    sents = passage.sentences
    cands: dict[str, dict[str, list[tuple]]] = {k: {} for k in ANSWER_KINDS}

    def add(kind, family, question, spans=(), sids=()):
        cands[kind].setdefault(family, []).append((question, list(spans), sorted(sids)))

    def gold(i, slot):
        return derive_gold_span(sents[i], slot, passage.sentence_offsets[i])

    time_count = Counter(s.timestamp for s in sents)
    unique_time = [time_count[s.timestamp] == 1 for s in sents]
    present = sorted({_slot(s, "person") for s in sents})
    locations = catalog.locations if catalog else sorted({_slot(s, "location") for s in sents})

    pair_count = Counter((_slot(s, "person"), _slot(s, _event_slot(s))) for s in sents)
    for i, s in enumerate(sents):
        p, loc = _slot(s, "person"), _slot(s, "location")
        if unique_time[i]:
            t = render_time(s.timestamp)
            add("single_span", "where", f"Where was {p} at {t}?", [gold(i, "location")], [i])
            add("single_span", "who", f"Who was in {loc} at {t}?", [gold(i, "person")], [i])
            if s.template_id == "activity":
                add("single_span", "what", f"What was {p} doing at {t}?", [gold(i, "activity")], [i])
            elif s.template_id == "command":
                add("single_span", "what", f"What did {p} tell the assistant to do at {t}?",
                    [gold(i, "utterance")], [i])
            else:
                add("single_span", "emotion", f"How was {p} feeling at {t}?", [gold(i, "emotion")], [i])
            add("yes", "was_is", f"Was {p} in {loc} at {t}?", (), [i])
            others = [x for x in locations if x != loc]
            if others:
                add("no", "was_is", f"Was {p} in {rng.choice(others)} at {t}?")
            other_people = [x for x in present if x != p]
            if other_people:
                add("no", "was_is", f"Was {rng.choice(other_people)} in {loc} at {t}?")
        ev = _slot(s, _event_slot(s))
        if pair_count[(p, ev)] == 1:
            if s.template_id == "activity":
                add("single_span", "when", f"When was {p} {ev}?", [gold(i, "time")], [i])
            elif s.template_id == "emotion":
                add("single_span", "when", f"When was {p} feeling {ev}?", [gold(i, "time")], [i])

    # multi-span: events at a location within a period
    for loc in sorted({_slot(s, "location") for s in sents}):
        for period, lo, hi in PERIODS:
            ids = [i for i, s in enumerate(sents)
                   if _slot(s, "location") == loc and lo <= s.timestamp < hi]
            if len(ids) >= cfg.multi_span_min_events:
                add("multi_span", "what", f"What happened in {loc} in the {period}?",
                    [gold(i, _event_slot(sents[i])) for i in ids], ids)

    # multi-span: a person's activities before / after a reference time
    for p in present:
        acts = [i for i, s in enumerate(sents)
                if s.template_id == "activity" and _slot(s, "person") == p]
        for t in sorted({s.timestamp for s in sents}):
            for family, keep in (("before", lambda x: x < t), ("after", lambda x: x > t)):
                ids = [i for i in acts if keep(sents[i].timestamp)]
                if len(ids) >= cfg.multi_span_min_events:
                    add("multi_span", family, f"What did {p} do {family} {render_time(t)}?",
                        [gold(i, "activity") for i in ids], ids)

    # did: any visit of a person to a location
    visits: dict[tuple[str, str], list[int]] = {}
    for i, s in enumerate(sents):
        visits.setdefault((_slot(s, "person"), _slot(s, "location")), []).append(i)
    for p in present:
        for loc in locations:
            ids = visits.get((p, loc))
            if ids:
                add("yes", "did", f"Did {p} go to {loc}?", (), ids)
            else:
                add("no", "did", f"Did {p} go to {loc}?")

    # unknown: the same forms about a person absent from this passage
    if catalog is not None:
        absent = [x for x in catalog.persons if x not in present]
        for a in absent:
            for i, s in enumerate(sents):
                if not unique_time[i]:
                    continue
                t, loc = render_time(s.timestamp), _slot(s, "location")
                add("unknown", "where", f"Where was {a} at {t}?")
                if s.template_id == "activity":
                    add("unknown", "what", f"What was {a} doing at {t}?")
                elif s.template_id == "command":
                    add("unknown", "what", f"What did {a} tell the assistant to do at {t}?")
                else:
                    add("unknown", "emotion", f"How was {a} feeling at {t}?")
                add("unknown", "was_is", f"Was {a} in {loc} at {t}?")
            for loc in sorted({_slot(s, "location") for s in sents}):
                add("unknown", "did", f"Did {a} go to {loc}?")

    enabled = set(cfg.question_families_enabled)
    for kind in cands:
        cands[kind] = {f: v for f, v in cands[kind].items() if f in enabled}
    return cands


def generate_questions(passage: Passage, seed: int, cfg: GenConfig,
                       catalog: SlotCatalog | None = None) -> list[QAPair]:
    """Sample up to ``cfg.questions_per_passage`` distinct questions.

    The answer kind is drawn by the configured fractions (yes and no share
    ``fraction_boolean`` equally), then a family uniformly among those that
    still have candidates, then a candidate uniformly.  Unknown questions need
    the catalog to find absent people; without it none are produced.
    """
    rng = SplitMix64(seed)
    cands = _enumerate_candidates(passage, catalog, cfg, rng)
    kind_weight = {
        "single_span": max(cfg.fraction_single_span, 0.0),
        "multi_span": cfg.fraction_multi_span,
        "yes": cfg.fraction_boolean / 2,
        "no": cfg.fraction_boolean / 2,
        "unknown": cfg.fraction_unknown,
    }
    seen: set[str] = set()
    out: list[QAPair] = []
    while len(out) < cfg.questions_per_passage:
        live = [k for k in ANSWER_KINDS if kind_weight[k] > 0 and any(cands[k].values())]
        if not live:
            break
        kind = live[_weighted_index(rng, [kind_weight[k] for k in live])]
        families = sorted(f for f, v in cands[kind].items() if v)
        family = rng.choice(families)
        pool = cands[kind][family]
        question, spans, sids = pool.pop(rng.below(len(pool)))
        if question in seen:
            continue
        seen.add(question)
        out.append(QAPair(
            id=f"{passage.id}-q{len(out):03d}",
            passage_id=passage.id,
            question=question,
            family=family,
            answer_kind=kind,
            gold_spans=[tuple(s) for s in spans],
            gold_sentence_ids=list(sids),
        ))
    return out


def assign_splits(qa_ids: list[str], seed: int) -> dict[str, str]:
    order = list(range(len(qa_ids)))
    SplitMix64(seed).shuffle(order)
    n = len(qa_ids)
    n_train = int(n * SPLIT_RATIOS[0][1] + 0.5)
    n_val = int(n * SPLIT_RATIOS[1][1] + 0.5)
    split = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split[qa_ids[idx]] = "train"
        elif rank < n_train + n_val:
            split[qa_ids[idx]] = "validation"
        else:
            split[qa_ids[idx]] = "test"
    return split


def build_dataset(catalog: SlotCatalog, cfg: GenConfig) -> Dataset:
    catalog.validate()
    cfg.validate()
    passages, qapairs = [], []
    for i in range(cfg.n_passages):
        passage = generate_passage(derive_seed(cfg.seed, 0, i), catalog, cfg, passage_id=f"p{i:05d}")
        passages.append(passage)
        qapairs.extend(generate_questions(passage, derive_seed(cfg.seed, 1, i), cfg, catalog))
    split = assign_splits([q.id for q in qapairs], derive_seed(cfg.seed, 2))
    return Dataset(passages, qapairs, split, catalog, cfg)


def question_prefix_stats(dataset: Dataset) -> dict[str, int]:
    counts: Counter[str] = Counter()
    for qa in dataset.qapairs:
        counts[" ".join(qa.question.lower().split()[:3])] += 1
    return dict(counts)


def vocab_corpus(catalog: SlotCatalog) -> Iterator[str]:
    """Every surface string the generator can emit, for closed-vocabulary building."""
    yield from catalog.persons
    yield from catalog.locations
    yield from catalog.activities
    yield from catalog.emotions
    yield from catalog.utterances
    yield from (render_time(t) for t in catalog.time_grid)
    yield from (name for name, _, _ in PERIODS)
    for pattern in [t.pattern for t in TEMPLATES] + list(QUESTION_FORMS):
        yield _strip_placeholders(pattern)


def _strip_placeholders(pattern: str) -> str:
    out, depth = [], 0
    for ch in pattern:
        if ch == "{":
            depth += 1
            out.append(" ")
        elif ch == "}":
            depth -= 1
        elif depth == 0:
            out.append(ch)
    return "".join(out)


# ---------------------------------------------------------------- JSON Lines

def _passage_record(p: Passage) -> dict:
    return {
        "kind": "passage",
        "id": p.id,
        "full_text": p.full_text,
        "sentence_offsets": p.sentence_offsets,
        "sentences": [
            {"template_id": s.template_id, "text": s.text, "timestamp": s.timestamp,
             "slots": {k: list(v) for k, v in s.slots.items()}}
            for s in p.sentences
        ],
    }


def _qa_record(q: QAPair, split: str | None) -> dict:
    return {
        "kind": "qa",
        "id": q.id,
        "passage_id": q.passage_id,
        "question": q.question,
        "family": q.family,
        "answer_kind": q.answer_kind,
        "gold_spans": [list(s) for s in q.gold_spans],
        "gold_sentence_ids": q.gold_sentence_ids,
        "split": split,
    }


def passage_from_record(rec: dict) -> Passage:
    sentences = [
        SentenceRecord(s["template_id"], s["text"], s["timestamp"],
                       {k: tuple(v) for k, v in s["slots"].items()})
        for s in rec["sentences"]
    ]
    return Passage(rec["id"], sentences, list(rec["sentence_offsets"]), rec["full_text"])


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def iter_records(dataset: Dataset, header: dict | None = None) -> Iterable[dict]:
    head = {"kind": "header", "version": 1}
    if dataset.config is not None:
        head["config"] = dataset.config.to_dict()
    if dataset.catalog is not None:
        head["catalog"] = asdict(dataset.catalog)
    if header:
        head.update(header)
    yield head
    for p in dataset.passages:
        yield _passage_record(p)
    for q in dataset.qapairs:
        yield _qa_record(q, dataset.split.get(q.id))


def write_dataset(dataset: Dataset, path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in iter_records(dataset, header):
            fh.write(dumps_record(rec))
            fh.write("\n")


def read_dataset(path: str | Path) -> Dataset:
    passages, qapairs, split = [], [], {}
    catalog = config = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            kind = rec.get("kind")
            if kind == "header":
                if "catalog" in rec:
                    catalog = SlotCatalog.from_dict(rec["catalog"])
                if "config" in rec:
                    config = GenConfig(**rec["config"])
            elif kind == "passage":
                passages.append(passage_from_record(rec))
            elif kind == "qa":
                qapairs.append(QAPair(
                    rec["id"], rec["passage_id"], rec["question"], rec["family"],
                    rec["answer_kind"], [tuple(s) for s in rec["gold_spans"]],
                    list(rec["gold_sentence_ids"]),
                ))
                if rec.get("split"):
                    split[rec["id"]] = rec["split"]
            else:
                raise ValueError(f"{path}:{lineno}: unknown record kind {kind!r}")
    return Dataset(passages, qapairs, split, catalog, config)
