"""Pre-norm transformer encoder with hand-written backward pass.

Parameters live in a flat ``dict[str, ndarray]``.  The forward pass works on
padded batches of shape (B, T); ``encode``/``encode_backward`` are the
single-sequence entry points.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import truncnorm

from . import kernels
from .tokenizer import Encoding

LN_EPS = 1e-12
INIT_STD = 0.02
INIT_TRUNC = 2.0  # truncation point in units of the underlying normal's scale


class LengthError(ValueError):
    pass


class CacheMismatchError(ValueError):
    pass


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 64
    ffn_dim: int = 256
    max_positions: int = 512
    vocab_size: int = 0
    dropout_rate: float = 0.1

    def validate(self) -> None:
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.max_positions < 1 or self.vocab_size < 4 or self.layers < 0:
            raise ValueError("invalid encoder dimensions")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal truncated at +-2 scale units, rescaled so the result has ``std``."""
    scale = std / truncnorm.std(-INIT_TRUNC, INIT_TRUNC)
    return truncnorm.rvs(-INIT_TRUNC, INIT_TRUNC, scale=scale, size=shape, random_state=rng)


def layer_names(l: int) -> list[str]:
    p = f"layer{l}."
    return [p + n for n in (
        "ln1.scale", "ln1.shift",
        "attn.q.weight", "attn.q.bias", "attn.k.weight", "attn.k.bias",
        "attn.v.weight", "attn.v.bias", "attn.o.weight", "attn.o.bias",
        "ln2.scale", "ln2.shift",
        "ffn.in.weight", "ffn.in.bias", "ffn.out.weight", "ffn.out.bias",
    )]


def init_params(cfg: EncoderConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    cfg.validate()
    rng = np.random.default_rng(seed)
    d, f = cfg.hidden, cfg.ffn_dim
    p: dict[str, np.ndarray] = {
        "emb.token": truncated_normal(rng, (cfg.vocab_size, d)),
        "emb.position": truncated_normal(rng, (cfg.max_positions, d)),
        "emb.segment": truncated_normal(rng, (2, d)),
    }
    for l in range(cfg.layers):
        pre = f"layer{l}."
        p[pre + "ln1.scale"] = np.ones(d)
        p[pre + "ln1.shift"] = np.zeros(d)
        for m in "qkvo":
            p[pre + f"attn.{m}.weight"] = truncated_normal(rng, (d, d))
            p[pre + f"attn.{m}.bias"] = np.zeros(d)
        p[pre + "ln2.scale"] = np.ones(d)
        p[pre + "ln2.shift"] = np.zeros(d)
        p[pre + "ffn.in.weight"] = truncated_normal(rng, (d, f))
        p[pre + "ffn.in.bias"] = np.zeros(f)
        p[pre + "ffn.out.weight"] = truncated_normal(rng, (f, d))
        p[pre + "ffn.out.bias"] = np.zeros(d)
    p["final_ln.scale"] = np.ones(d)
    p["final_ln.shift"] = np.zeros(d)
    return {k: v.astype(dtype) for k, v in p.items()}


class Dropout:
    """Inverted dropout with masks drawn in call order from one seeded stream."""

    def __init__(self, rate: float, seed: int | None, dtype):
        self.rate = rate
        self.rng = np.random.default_rng(seed) if rate > 0 and seed is not None else None
        self.dtype = dtype

    def mask(self, shape):
        if self.rng is None:
            return None
        keep = self.rng.random(shape) >= self.rate
        return (keep / (1.0 - self.rate)).astype(self.dtype)


def _split_heads(x, h):
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def forward(params, cfg: EncoderConfig, ids, segment_ids, attention_mask,
            train_mode: bool = False, seed: int | None = None):
    """Batched forward pass; returns ``(H_L, cache)`` with H_L of shape (B, T, d)."""
    ids = np.asarray(ids)
    b, t = ids.shape
    if t > cfg.max_positions:
        raise LengthError(f"sequence length {t} exceeds max_positions {cfg.max_positions}")
    dtype = params["emb.token"].dtype
    mask = np.asarray(attention_mask, dtype=np.uint8)
    drop = Dropout(cfg.dropout_rate if train_mode else 0.0, seed, dtype)
    h = cfg.heads
    scale = dtype.type(1.0 / np.sqrt(cfg.hidden // h))

    x = params["emb.token"][ids] + params["emb.position"][:t][None] + params["emb.segment"][segment_ids]
    m0 = drop.mask(x.shape)
    if m0 is not None:
        x = x * m0
    cache = {"ids": ids, "segs": np.asarray(segment_ids), "mask": mask, "emb_drop": m0,
             "shape": (b, t), "layers": []}

    for l in range(cfg.layers):
        pre = f"layer{l}."
        a, xhat1, rstd1 = kernels.layer_norm(x, params[pre + "ln1.scale"], params[pre + "ln1.shift"], LN_EPS)
        # the 1/sqrt(d_head) factor is folded into q, which is cheaper than scaling the scores
        q = _split_heads((a @ params[pre + "attn.q.weight"] + params[pre + "attn.q.bias"]) * scale, h)
        k = _split_heads(a @ params[pre + "attn.k.weight"] + params[pre + "attn.k.bias"], h)
        v = _split_heads(a @ params[pre + "attn.v.weight"] + params[pre + "attn.v.bias"], h)
        probs = kernels.masked_softmax(q @ k.transpose(0, 1, 3, 2), mask)
        ctx = _merge_heads(probs @ v)
        o = ctx @ params[pre + "attn.o.weight"] + params[pre + "attn.o.bias"]
        m1 = drop.mask(o.shape)
        if m1 is not None:
            o = o * m1
        x = x + o
        a2, xhat2, rstd2 = kernels.layer_norm(x, params[pre + "ln2.scale"], params[pre + "ln2.shift"], LN_EPS)
        hid = a2 @ params[pre + "ffn.in.weight"] + params[pre + "ffn.in.bias"]
        g = kernels.gelu(hid)
        f = g @ params[pre + "ffn.out.weight"] + params[pre + "ffn.out.bias"]
        m2 = drop.mask(f.shape)
        if m2 is not None:
            f = f * m2
        x = x + f
        cache["layers"].append({
            "a": a, "xhat1": xhat1, "rstd1": rstd1, "q": q, "k": k, "v": v,
            "probs": probs, "ctx": ctx, "drop1": m1,
            "a2": a2, "xhat2": xhat2, "rstd2": rstd2, "hid": hid, "g": g, "drop2": m2,
        })

    out, xhatf, rstdf = kernels.layer_norm(x, params["final_ln.scale"], params["final_ln.shift"], LN_EPS)
    cache["xhatf"], cache["rstdf"] = xhatf, rstdf
    return out, cache


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def backward(params, cfg: EncoderConfig, d_out, cache) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every parameter, given dLoss/dH_L."""
    b, t = cache["shape"]
    if d_out.shape != (b, t, cfg.hidden) or len(cache["layers"]) != cfg.layers:
        raise CacheMismatchError("upstream gradient or cache does not match the forward pass")
    mask = cache["mask"]
    h = cfg.heads
    dtype = params["emb.token"].dtype
    scale = dtype.type(1.0 / np.sqrt(cfg.hidden // h))
    grads: dict[str, np.ndarray] = {}

    # padded output rows are unused by definition
    d_out = d_out * mask[..., None].astype(d_out.dtype)
    dx, grads["final_ln.scale"], grads["final_ln.shift"] = kernels.layer_norm_backward(
        d_out, cache["xhatf"], cache["rstdf"], params["final_ln.scale"])

    for l in reversed(range(cfg.layers)):
        pre = f"layer{l}."
        c = cache["layers"][l]
        df = dx if c["drop2"] is None else dx * c["drop2"]
        grads[pre + "ffn.out.weight"] = _flat(c["g"]).T @ _flat(df)
        grads[pre + "ffn.out.bias"] = _flat(df).sum(axis=0)
        dg = df @ params[pre + "ffn.out.weight"].T
        dhid = kernels.gelu_backward(dg, c["hid"])
        grads[pre + "ffn.in.weight"] = _flat(c["a2"]).T @ _flat(dhid)
        grads[pre + "ffn.in.bias"] = _flat(dhid).sum(axis=0)
        da2 = dhid @ params[pre + "ffn.in.weight"].T
        dln2, grads[pre + "ln2.scale"], grads[pre + "ln2.shift"] = kernels.layer_norm_backward(
            da2, c["xhat2"], c["rstd2"], params[pre + "ln2.scale"])
        dx = dx + dln2

        do = dx if c["drop1"] is None else dx * c["drop1"]
        grads[pre + "attn.o.weight"] = _flat(c["ctx"]).T @ _flat(do)
        grads[pre + "attn.o.bias"] = _flat(do).sum(axis=0)
        dctx = _split_heads(do @ params[pre + "attn.o.weight"].T, h)
        dprobs = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs"].transpose(0, 1, 3, 2) @ dctx
        dscores = kernels.softmax_backward(dprobs, c["probs"])
        dq = (dscores @ c["k"]) * scale
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"]
        da = np.zeros_like(dx)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dproj = _merge_heads(dproj)
            grads[pre + f"attn.{name}.weight"] = _flat(c["a"]).T @ _flat(dproj)
            grads[pre + f"attn.{name}.bias"] = _flat(dproj).sum(axis=0)
            da += dproj @ params[pre + f"attn.{name}.weight"].T
        dln1, grads[pre + "ln1.scale"], grads[pre + "ln1.shift"] = kernels.layer_norm_backward(
            da, c["xhat1"], c["rstd1"], params[pre + "ln1.scale"])
        dx = dx + dln1

    if cache["emb_drop"] is not None:
        dx = dx * cache["emb_drop"]
    d = cfg.hidden
    flat_dx = dx.reshape(-1, d)
    dtok = np.zeros_like(params["emb.token"])
    np.add.at(dtok, cache["ids"].reshape(-1), flat_dx)
    grads["emb.token"] = dtok
    dpos = np.zeros_like(params["emb.position"])
    dpos[:t] = dx.sum(axis=0)
    grads["emb.position"] = dpos
    dseg = np.zeros_like(params["emb.segment"])
    np.add.at(dseg, cache["segs"].reshape(-1), flat_dx)
    grads["emb.segment"] = dseg
    return {k: v.astype(dtype, copy=False) for k, v in grads.items()}


def encode(params, cfg: EncoderConfig, enc: Encoding, train_mode: bool = False,
           seed: int | None = None):
    """Contextual representations (T, d) for one encoding, plus the backward cache."""
    ids = np.asarray([enc.ids])
    segs = np.asarray([enc.segment_ids])
    mask = np.asarray([enc.attention_mask])
    out, cache = forward(params, cfg, ids, segs, mask, train_mode, seed)
    return out[0], cache


def encode_backward(params, cfg: EncoderConfig, enc: Encoding, upstream_grad, cache):
    if cache["shape"] != (1, len(enc.ids)) or not np.array_equal(cache["ids"][0], enc.ids):
        raise CacheMismatchError("cache was produced for a different encoding")
    return backward(params, cfg, np.asarray(upstream_grad)[None], cache)
