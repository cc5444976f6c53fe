import numpy as np
import pytest

from mseqa import corpusgen as cg
from mseqa.encoder import EncoderConfig
from mseqa.model import Model
from mseqa.tokenizer import build_vocab


@pytest.fixture(scope="session")
def catalog():
    return cg.default_catalog()


@pytest.fixture(scope="session")
def small_dataset(catalog):
    return cg.build_dataset(catalog, cg.GenConfig(seed=11, n_passages=12, questions_per_passage=20))


@pytest.fixture(scope="session")
def vocab(catalog):
    return build_vocab(cg.vocab_corpus(catalog))


@pytest.fixture
def tiny_model(vocab):
    cfg = EncoderConfig(layers=1, heads=2, hidden=8, ffn_dim=16, dropout_rate=0.0)
    return Model.initialize(cfg, vocab, seed=5, dtype=np.float64)


def one_per_kind(dataset, examples):
    """First prepared example of every answer kind, in a fixed kind order."""
    kind_of = {q.id: q.answer_kind for q in dataset.qapairs}
    picked = {}
    for ex in examples:
        picked.setdefault(kind_of[ex.qa_id], ex)
    return [picked[k] for k in cg.ANSWER_KINDS if k in picked]
