import numpy as np
import pytest

from mseqa import checkpoint as ck
from mseqa.model import CompatibilityError, Model


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": np.float32(rng.normal(size=()))}
    ck.save(tmp_path / "x.ckpt", {"note": "é"}, tensors)
    header, back = ck.load(tmp_path / "x.ckpt")
    assert header == {"note": "é"}
    for k, v in tensors.items():
        assert back[k].shape == np.shape(v) and back[k].tobytes() == np.asarray(v).tobytes()


def test_model_round_trip(tiny_model, tmp_path):
    model = Model(tiny_model.cfg, {k: v.astype(np.float32) for k, v in tiny_model.params.items()},
                  tiny_model.vocab)
    model.save(tmp_path / "m.ckpt", {"extra": 1}, {"adam.m.x": np.ones(2, np.float32)})
    back, header, extras = Model.load(tmp_path / "m.ckpt")
    assert header["extra"] == 1 and header["format"] == "MSEQA1"
    assert set(extras) == {"adam.m.x"}
    assert back.vocab == model.vocab and back.cfg == model.cfg
    assert all(np.array_equal(back.params[k], v) for k, v in model.params.items())


@pytest.mark.parametrize("damage", ["magic", "truncate", "trailing"])
def test_corrupt_files_are_rejected(tiny_model, tmp_path, damage):
    path = tmp_path / "m.ckpt"
    tiny_model.save(path)
    raw = path.read_bytes()
    raw = {"magic": b"XXXXXX" + raw[6:], "truncate": raw[:-10], "trailing": raw + b"\0"}[damage]
    path.write_bytes(raw)
    with pytest.raises(ck.CheckpointError):
        Model.load(path)


def test_missing_tensor_is_incompatible(tiny_model, tmp_path):
    params = dict(tiny_model.params)
    params.pop("head.tagger.out.bias")
    ck.save(tmp_path / "m.ckpt", tiny_model.header(), params)
    with pytest.raises(CompatibilityError):
        Model.load(tmp_path / "m.ckpt")
