"""The four prediction heads on top of the encoder output.

* multi-span predictor: linear map of h[CLS] to (single, multi) logits
* answer-type predictor: linear map of h[CLS] to (yes, no, unknown) logits
* span start / end: per-token two-layer GELU networks giving one logit each
* sentence tagger: two-layer GELU network over [pooled question : pooled sentence]
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .encoder import truncated_normal

ANSWER_TYPES = ("yes", "no", "unknown")
MULTISPAN_LABELS = ("single", "multi")


class DegenerateInputError(ValueError):
    pass


def init_head_params(hidden: int, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d = hidden
    p = {
        "head.multispan.weight": truncated_normal(rng, (d, 2)),
        "head.multispan.bias": np.zeros(2),
        "head.answer_type.weight": truncated_normal(rng, (d, 3)),
        "head.answer_type.bias": np.zeros(3),
    }
    for name in ("start", "end"):
        p[f"head.{name}.in.weight"] = truncated_normal(rng, (d, d))
        p[f"head.{name}.in.bias"] = np.zeros(d)
        p[f"head.{name}.out.weight"] = truncated_normal(rng, (d, 1))
        p[f"head.{name}.out.bias"] = np.zeros(1)
    p["head.tagger.in.weight"] = truncated_normal(rng, (2 * d, d))
    p["head.tagger.in.bias"] = np.zeros(d)
    p["head.tagger.out.weight"] = truncated_normal(rng, (d, 2))
    p["head.tagger.out.bias"] = np.zeros(2)
    return {k: v.astype(dtype) for k, v in p.items()}


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------- building blocks

def ffn_forward(x, params, prefix):
    """Two-layer GELU network ``prefix.in`` -> ``prefix.out`` on the last axis."""
    hid = x @ params[prefix + ".in.weight"] + params[prefix + ".in.bias"]
    g = kernels.gelu(hid)
    out = g @ params[prefix + ".out.weight"] + params[prefix + ".out.bias"]
    return out, (x, hid, g)


def ffn_backward(dout, params, prefix, cache, grads):
    x, hid, g = cache
    dflat = dout.reshape(-1, dout.shape[-1])
    grads[prefix + ".out.weight"] = g.reshape(-1, g.shape[-1]).T @ dflat
    grads[prefix + ".out.bias"] = dflat.sum(axis=0)
    dhid = kernels.gelu_backward(dout @ params[prefix + ".out.weight"].T, hid)
    dh = dhid.reshape(-1, dhid.shape[-1])
    grads[prefix + ".in.weight"] = x.reshape(-1, x.shape[-1]).T @ dh
    grads[prefix + ".in.bias"] = dh.sum(axis=0)
    return dhid @ params[prefix + ".in.weight"].T


def cls_logits(h_cls, params, name):
    return h_cls @ params[f"head.{name}.weight"] + params[f"head.{name}.bias"]


def span_head_logits(H, params):
    """Start and end logits of shape (B, T) plus the cache for the backward pass."""
    s, cs = ffn_forward(H, params, "head.start")
    e, ce = ffn_forward(H, params, "head.end")
    return s[..., 0], e[..., 0], (cs, ce)


def span_head_backward(d_start, d_end, params, cache, grads):
    cs, ce = cache
    dH = ffn_backward(d_start[..., None], params, "head.start", cs, grads)
    dH += ffn_backward(d_end[..., None], params, "head.end", ce, grads)
    return dH


def masked_log_softmax(logits, mask):
    keep = np.asarray(mask, dtype=bool)
    z = np.where(keep, logits, -np.inf)
    return log_softmax(z)


def segment_masks(segment_ids, attention_mask, ids, special_ids):
    """Boolean (B, T) masks of question tokens and context/sentence tokens."""
    segs = np.asarray(segment_ids)
    real = np.asarray(attention_mask, dtype=bool) & ~np.isin(ids, special_ids)
    return real & (segs == 0), real & (segs == 1)


def pool_masked(H, mask):
    """Mean of the rows of H selected by ``mask`` (B, T), per batch row."""
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise DegenerateInputError("cannot pool an empty token range")
    w = (mask / counts[:, None]).astype(H.dtype)
    return np.einsum("bt,btd->bd", w, H), w


def tagger_logits(H, q_mask, s_mask, params):
    hq, wq = pool_masked(H, q_mask)
    hs, ws = pool_masked(H, s_mask)
    z = np.concatenate([hq, hs], axis=-1)
    logits, cache = ffn_forward(z, params, "head.tagger")
    return logits, (wq, ws, cache)


def tagger_backward(dlogits, params, cache, grads):
    wq, ws, fcache = cache
    dz = ffn_backward(dlogits, params, "head.tagger", fcache, grads)
    d = dz.shape[-1] // 2
    dhq, dhs = dz[:, :d], dz[:, d:]
    return wq[..., None] * dhq[:, None, :] + ws[..., None] * dhs[:, None, :]


# ---------------------------------------------------------------- single-example API

def predict_multispan(h_cls, params) -> np.ndarray:
    """(p_single, p_multi) from the [CLS] vector."""
    return softmax(cls_logits(np.asarray(h_cls), params, "multispan"))


def predict_answer_type(h_cls, params) -> np.ndarray:
    """(p_yes, p_no, p_unknown) from the [CLS] vector."""
    return softmax(cls_logits(np.asarray(h_cls), params, "answer_type"))


def span_logits(H_L, params, mask):
    """Start/end distributions over all T positions; masked positions get 0.

    Position 0 ([CLS]) competes like any other unmasked token.
    """
    s, e, _ = span_head_logits(np.asarray(H_L)[None], params)
    m = np.asarray(mask)[None]
    return np.exp(masked_log_softmax(s, m))[0], np.exp(masked_log_softmax(e, m))[0]


def pool(H_L, token_range: range) -> np.ndarray:
    if len(token_range) == 0:
        raise DegenerateInputError("cannot pool an empty token range")
    if token_range.start < 0 or token_range.stop > len(H_L):
        raise DegenerateInputError("token range outside the sequence")
    return np.asarray(H_L)[token_range.start:token_range.stop].mean(axis=0)


def tag_sentence(h_q, h_sent, params) -> np.ndarray:
    """(p_not_answer, p_answer) for one question/sentence pair."""
    z = np.concatenate([np.asarray(h_q), np.asarray(h_sent)])
    logits, _ = ffn_forward(z[None], params, "head.tagger")
    return softmax(logits[0])
