import json

import pytest

from mseqa import corpusgen as cg
from mseqa.validate import DatasetParseError, validate_dataset


@pytest.fixture
def data_lines(small_dataset, tmp_path):
    path = tmp_path / "d.jsonl"
    cg.write_dataset(small_dataset, path)
    return path, path.read_text().splitlines()


def rewrite(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return validate_dataset(path)


def test_generated_dataset_is_clean(data_lines):
    assert validate_dataset(data_lines[0]) == []


def test_corrupted_span_offset_names_the_question(data_lines):
    path, lines = data_lines
    k = next(i for i, l in enumerate(lines) if json.loads(l).get("answer_kind") == "single_span")
    rec = json.loads(lines[k])
    rec["gold_spans"][0][0] += 1
    lines[k] = json.dumps(rec)
    out = rewrite(path, lines)
    assert len(out) == 1 and out[0].record_id == rec["id"] and out[0].line == k + 1


def test_each_injected_fault_is_reported_once(data_lines):
    path, lines = data_lines
    kinds = [json.loads(l)["kind"] for l in lines]
    qa_rows = [i for i, k in enumerate(kinds) if k == "qa"]
    p_rows = [i for i, k in enumerate(kinds) if k == "passage"]
    faults = [
        lambda r: r.update(answer_kind="maybe"),
        lambda r: r.update(family="why"),
        lambda r: r.update(gold_sentence_ids=[99]),
        lambda r: r.update(passage_id="nope"),
        lambda r: r.update(question=" "),
    ]
    for row, fault in zip(qa_rows[::7], faults):
        rec = json.loads(lines[row])
        fault(rec)
        lines[row] = json.dumps(rec)
    rec = json.loads(lines[p_rows[-1]])
    rec["sentence_offsets"][-1] += 3
    lines[p_rows[-1]] = json.dumps(rec)
    out = rewrite(path, lines)
    assert len(out) == len(faults) + 1
    assert len({v.line for v in out}) == len(out)


def test_duplicate_id_and_split_ratio(data_lines):
    path, lines = data_lines
    out = rewrite(path, lines + [lines[-1]])
    msgs = [v.message for v in out]
    assert any("duplicate" in m for m in msgs)


def test_split_ratio_violation(data_lines):
    path, lines = data_lines
    fixed = []
    for l in lines:
        rec = json.loads(l)
        if rec.get("kind") == "qa":
            rec["split"] = "train"
        fixed.append(json.dumps(rec))
    out = rewrite(path, fixed)
    assert {v.record_id for v in out} == {"<dataset>"} and len(out) == 3


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"kind": "header"}\n{"kind": \n')
    with pytest.raises(DatasetParseError, match=r"bad.jsonl:2:\d+:"):
        validate_dataset(path)
