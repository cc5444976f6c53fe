"""Encoder + heads bundle, batched passes, and checkpoint I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, encoder, heads
from .encoder import EncoderConfig
from .tokenizer import CLS_ID, PAD_ID, SEP_ID, Encoding, Vocab


class CompatibilityError(ValueError):
    pass


def pad_batch(encs: list[Encoding]):
    t = max(len(e) for e in encs)
    b = len(encs)
    ids = np.full((b, t), PAD_ID, dtype=np.int64)
    segs = np.zeros((b, t), dtype=np.int64)
    mask = np.zeros((b, t), dtype=np.uint8)
    for i, e in enumerate(encs):
        n = len(e)
        ids[i, :n] = e.ids
        segs[i, :n] = e.segment_ids
        mask[i, :n] = e.attention_mask
    return ids, segs, mask


@dataclass
class FullPass:
    """Outputs of the [CLS] question [SEP] context [SEP] pass for a batch."""
    H: np.ndarray
    cache: dict
    mask: np.ndarray
    multispan_logits: np.ndarray
    answer_type_logits: np.ndarray
    start_logits: np.ndarray
    end_logits: np.ndarray
    span_cache: tuple

    @property
    def start_logprobs(self):
        return heads.masked_log_softmax(self.start_logits, self.mask)

    @property
    def end_logprobs(self):
        return heads.masked_log_softmax(self.end_logits, self.mask)


@dataclass
class TaggerPass:
    """Outputs of the per-sentence [CLS] question [SEP] sentence passes."""
    H: np.ndarray
    cache: dict
    logits: np.ndarray
    tag_cache: tuple


class Model:
    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray], vocab: Vocab):
        self.cfg = cfg
        self.params = params
        self.vocab = vocab

    @classmethod
    def initialize(cls, cfg: EncoderConfig, vocab: Vocab, seed: int, dtype=np.float32) -> "Model":
        from .rng import derive_seed
        cfg.vocab_size = len(vocab)
        params = encoder.init_params(cfg, derive_seed(seed, 10), dtype)
        params.update(heads.init_head_params(cfg.hidden, derive_seed(seed, 11), dtype))
        return cls(cfg, params, vocab)

    # ------------------------------------------------------------ passes

    def full_pass(self, encs: list[Encoding], train_mode=False, seed=None, params=None) -> FullPass:
        p = self.params if params is None else params
        ids, segs, mask = pad_batch(encs)
        H, cache = encoder.forward(p, self.cfg, ids, segs, mask, train_mode, seed)
        h_cls = H[:, 0]
        s, e, span_cache = heads.span_head_logits(H, p)
        return FullPass(
            H, cache, mask,
            heads.cls_logits(h_cls, p, "multispan"),
            heads.cls_logits(h_cls, p, "answer_type"),
            s, e, span_cache,
        )

    def tagger_pass(self, encs: list[Encoding], train_mode=False, seed=None, params=None) -> TaggerPass:
        p = self.params if params is None else params
        ids, segs, mask = pad_batch(encs)
        H, cache = encoder.forward(p, self.cfg, ids, segs, mask, train_mode, seed)
        q_mask, s_mask = heads.segment_masks(segs, mask, ids, [CLS_ID, SEP_ID, PAD_ID])
        logits, tag_cache = heads.tagger_logits(H, q_mask, s_mask, p)
        return TaggerPass(H, cache, logits, tag_cache)

    def full_backward(self, fp: FullPass, d_multispan, d_answer_type, d_start, d_end, params=None):
        p = self.params if params is None else params
        grads: dict[str, np.ndarray] = {}
        h_cls = fp.H[:, 0]
        dH = heads.span_head_backward(d_start, d_end, p, fp.span_cache, grads)
        for name, dl in (("multispan", d_multispan), ("answer_type", d_answer_type)):
            grads[f"head.{name}.weight"] = h_cls.T @ dl
            grads[f"head.{name}.bias"] = dl.sum(axis=0)
            dH[:, 0] += dl @ p[f"head.{name}.weight"].T
        grads.update(encoder.backward(p, self.cfg, dH, fp.cache))
        return grads

    def tagger_backward(self, tp: TaggerPass, d_logits, params=None):
        p = self.params if params is None else params
        grads: dict[str, np.ndarray] = {}
        dH = heads.tagger_backward(d_logits, p, tp.tag_cache, grads)
        grads.update(encoder.backward(p, self.cfg, dH.astype(tp.H.dtype), tp.cache))
        return grads

    # ------------------------------------------------------------ persistence

    def header(self) -> dict:
        return {
            "format": "MSEQA1",
            "encoder": self.cfg.to_dict(),
            "heads": {"hidden": self.cfg.hidden, "span_ffn_hidden": self.cfg.hidden,
                      "tagger_ffn_hidden": self.cfg.hidden},
            "vocab": list(self.vocab.id_to_token),
            "vocab_hash": self.vocab.digest(),
        }

    def save(self, path: str | Path, extra_header: dict | None = None,
             extra_tensors: dict[str, np.ndarray] | None = None) -> None:
        header = self.header()
        if extra_header:
            header.update(extra_header)
        tensors = dict(self.params)
        if extra_tensors:
            tensors.update(extra_tensors)
        checkpoint.save(path, header, tensors)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Model", dict, dict[str, np.ndarray]]:
        header, tensors = checkpoint.load(path)
        vocab = Vocab.from_tokens(header["vocab"])
        if vocab.digest() != header.get("vocab_hash"):
            raise CompatibilityError(f"{path}: embedded vocabulary does not match its hash")
        cfg = EncoderConfig(**header["encoder"])
        params = {k: v for k, v in tensors.items() if "." in k and not k.startswith(("adam.", "best."))}
        extras = {k: v for k, v in tensors.items() if k not in params}
        expected = {k: v.shape for k, v in cls.initialize(cfg, vocab, 0).params.items()}
        if {k: v.shape for k, v in params.items()} != expected:
            raise CompatibilityError(f"{path}: tensors do not match the encoder configuration in the header")
        return cls(cfg, params, vocab), header, extras
