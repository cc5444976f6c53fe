"""Multitask training: weighted sum of span, answer-type, multi-span and tagger losses."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .corpusgen import Dataset, N_MAX_SENTENCES
from .encoder import EncoderConfig
from .heads import ANSWER_TYPES, log_softmax
from .model import Model
from .rng import SplitMix64, derive_seed
from .tokenizer import (Encoding, UnmappableSpanError, Vocab, char_span_to_token_span,
                        encode_pair, encode_sentence_pair)

log = logging.getLogger(__name__)


class TrainingDivergenceError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    lr_peak: float = 4e-5
    batch_size: int = 16
    epochs: int = 10
    warmup_fraction: float = 0.06
    clip_norm: float = 1.0
    lambda_q: float = 1.0
    lambda_a: float = 1.0
    lambda_s: float = 1.0
    lambda_t: float = 1.0
    seed: int = 0
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    tagger_include_single_negatives: bool = False
    max_sentences: int = N_MAX_SENTENCES
    eval_batch_size: int = 32
    bucket_batches: int = 50

    def validate(self) -> None:
        if self.lr_peak <= 0 or self.clip_norm <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning rate, clip norm, batch size and epochs must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        lambdas = (self.lambda_q, self.lambda_a, self.lambda_s, self.lambda_t)
        if min(lambdas) < 0 or max(lambdas) <= 0:
            raise ValueError("loss weights must be non-negative with at least one positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    L_q: float = 0.0
    L_a: float = 0.0
    L_s: float = 0.0
    L_t: float = 0.0
    total: float = 0.0

    @classmethod
    def combine(cls, L_q, L_a, L_s, L_t, cfg: TrainingConfig) -> "LossBreakdown":
        total = cfg.lambda_q * L_q + cfg.lambda_a * L_a + cfg.lambda_s * L_s + cfg.lambda_t * L_t
        return cls(float(L_q), float(L_a), float(L_s), float(L_t), float(total))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SupervisionRecord:
    multispan_label: str
    answer_type_label: str | None = None
    start_token: int | None = None
    end_token: int | None = None
    sentence_labels: list[bool] | None = None


@dataclass
class TrainExample:
    qa_id: str
    enc: Encoding
    sup: SupervisionRecord
    sentence_encs: list[Encoding] = field(default_factory=list)


def build_supervision(qa, enc: Encoding, sentence_encs: list[Encoding] | None = None) -> SupervisionRecord:
    """Targets for one question; raises ``UnmappableSpanError`` if the gold was truncated away."""
    if qa.answer_kind == "multi_span":
        n = len(sentence_encs or [])
        labels = [i in set(qa.gold_sentence_ids) for i in range(n)]
        if sum(labels) < 2:
            raise UnmappableSpanError(f"{qa.id}: fewer than two gold sentences survive truncation")
        return SupervisionRecord("multi", sentence_labels=labels)
    if qa.answer_kind == "single_span":
        s, e, _ = qa.gold_spans[0]
        start, end = char_span_to_token_span(enc, (s, e))
        return SupervisionRecord("single", start_token=start, end_token=end)
    return SupervisionRecord("single", answer_type_label=qa.answer_kind, start_token=0, end_token=0)


def prepare_examples(dataset: Dataset, vocab: Vocab, split: str | None,
                     cfg: TrainingConfig) -> tuple[list[TrainExample], int]:
    """Encode and label every question of ``split``; returns (examples, skipped)."""
    passages = dataset.passage_index()
    examples, skipped = [], 0
    for qa in dataset.questions(split):
        passage = passages[qa.passage_id]
        enc = encode_pair(vocab, qa.question, passage.full_text)
        sent_encs: list[Encoding] = []
        if qa.answer_kind == "multi_span" or cfg.tagger_include_single_negatives:
            sent_encs = [encode_sentence_pair(vocab, qa.question, s.text)
                         for s in passage.sentences[:cfg.max_sentences]]
        try:
            sup = build_supervision(qa, enc, sent_encs)
        except UnmappableSpanError:
            skipped += 1
            continue
        if sup.sentence_labels is None and sent_encs:
            sup.sentence_labels = [i in set(qa.gold_sentence_ids) for i in range(len(sent_encs))]
        examples.append(TrainExample(qa.id, enc, sup, sent_encs if sup.sentence_labels else []))
    return examples, skipped


def _nll(p, idx) -> float:
    with np.errstate(divide="ignore"):
        return float(-np.log(np.float64(p[idx])))


def compute_loss(outputs: dict, sup: SupervisionRecord, cfg: TrainingConfig) -> LossBreakdown:
    """Loss for one example from its probability outputs.

    ``outputs`` holds ``p_s`` (2,), ``p_a`` (3,), ``p_start``/``p_end`` (T,)
    and ``p_t`` (n, 2).  Components without supervision contribute 0.
    """
    L_s = _nll(outputs["p_s"], 0 if sup.multispan_label == "single" else 1)
    L_q = L_a = L_t = 0.0
    if sup.start_token is not None:
        L_q = _nll(outputs["p_start"], sup.start_token) + _nll(outputs["p_end"], sup.end_token)
    if sup.answer_type_label is not None:
        L_a = _nll(outputs["p_a"], ANSWER_TYPES.index(sup.answer_type_label))
    if sup.sentence_labels:
        p_t = outputs["p_t"]
        L_t = sum(_nll(p_t[i], int(lab)) for i, lab in enumerate(sup.sentence_labels)) / len(sup.sentence_labels)
    return LossBreakdown.combine(L_q, L_a, L_s, L_t, cfg)


def batch_objective(model: Model, batch: list[TrainExample], cfg: TrainingConfig,
                    train_mode: bool = False, seed: int | None = None, with_grads: bool = True,
                    params=None):
    """Mean weighted loss over ``batch`` and, optionally, its gradients."""
    b = len(batch)
    rows = np.arange(b)
    fp = model.full_pass([ex.enc for ex in batch], train_mode,
                         None if seed is None else derive_seed(seed, 0), params)
    dtype = fp.H.dtype

    ms_lp = log_softmax(fp.multispan_logits)
    ms_lab = np.array([0 if ex.sup.multispan_label == "single" else 1 for ex in batch])
    L_s = -ms_lp[rows, ms_lab]
    d_ms = np.exp(ms_lp)
    d_ms[rows, ms_lab] -= 1
    d_ms *= cfg.lambda_s / b

    at_rows = np.array([i for i, ex in enumerate(batch) if ex.sup.answer_type_label is not None], dtype=int)
    at_lab = np.array([ANSWER_TYPES.index(batch[i].sup.answer_type_label) for i in at_rows], dtype=int)
    at_lp = log_softmax(fp.answer_type_logits)
    L_a = np.zeros(b)
    L_a[at_rows] = -at_lp[at_rows, at_lab]
    d_at = np.zeros_like(at_lp)
    d_at[at_rows] = np.exp(at_lp[at_rows])
    d_at[at_rows, at_lab] -= 1
    d_at *= cfg.lambda_a / b

    q_rows = np.array([i for i, ex in enumerate(batch) if ex.sup.start_token is not None], dtype=int)
    st = np.array([batch[i].sup.start_token for i in q_rows], dtype=int)
    en = np.array([batch[i].sup.end_token for i in q_rows], dtype=int)
    lps, lpe = fp.start_logprobs, fp.end_logprobs
    L_q = np.zeros(b)
    L_q[q_rows] = -(lps[q_rows, st] + lpe[q_rows, en])
    d_st = np.zeros_like(lps)
    d_en = np.zeros_like(lpe)
    d_st[q_rows] = np.exp(lps[q_rows])
    d_en[q_rows] = np.exp(lpe[q_rows])
    d_st[q_rows, st] -= 1
    d_en[q_rows, en] -= 1
    d_st *= cfg.lambda_q / b
    d_en *= cfg.lambda_q / b

    L_t = np.zeros(b)
    tag_encs, owner, labels = [], [], []
    for i, ex in enumerate(batch):
        if ex.sup.sentence_labels:
            tag_encs.extend(ex.sentence_encs)
            owner.extend([i] * len(ex.sentence_encs))
            labels.extend(int(x) for x in ex.sup.sentence_labels)
    tp = None
    if tag_encs:
        owner_a = np.array(owner)
        lab_a = np.array(labels)
        tp = model.tagger_pass(tag_encs, train_mode, None if seed is None else derive_seed(seed, 1), params)
        t_lp = log_softmax(tp.logits)
        ce = -t_lp[np.arange(len(lab_a)), lab_a]
        counts = np.bincount(owner_a, minlength=b)
        np.add.at(L_t, owner_a, ce)
        L_t[counts > 0] /= counts[counts > 0]
        d_t = np.exp(t_lp)
        d_t[np.arange(len(lab_a)), lab_a] -= 1
        d_t *= (cfg.lambda_t / b / counts[owner_a])[:, None]

    loss = LossBreakdown.combine(L_q.mean(), L_a.mean(), L_s.mean(), L_t.mean(), cfg)
    if not with_grads:
        return loss, None

    p = model.params if params is None else params
    grads = model.full_backward(fp, d_ms.astype(dtype), d_at.astype(dtype),
                                d_st.astype(dtype), d_en.astype(dtype), params)
    if tp is not None:
        for k, g in model.tagger_backward(tp, d_t.astype(dtype), params).items():
            grads[k] = grads[k] + g if k in grads else g
    for k, v in p.items():
        if k not in grads:
            grads[k] = np.zeros_like(v)
    return loss, grads


# ---------------------------------------------------------------- optimisation

def lr_schedule(step: int, total_steps: int, cfg: TrainingConfig) -> float:
    """Linear warmup to ``lr_peak`` over ceil(warmup_fraction * total) steps, then linear decay to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    warmup = math.ceil(cfg.warmup_fraction * total_steps)
    if step >= total_steps:
        return 0.0
    if step < warmup:
        return cfg.lr_peak * step / warmup
    return cfg.lr_peak * (total_steps - step) / (total_steps - warmup)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.dot(g.ravel().astype(np.float64), g.ravel().astype(np.float64)))
                         for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 1.0):
    """Scale all gradients by max_norm / norm when the global norm exceeds max_norm."""
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingDivergenceError("non-finite gradient")
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: (g * factor).astype(g.dtype) for k, g in grads.items()}
    return grads, norm


def _decays(name: str) -> bool:
    # biases and normalisation parameters are not decayed
    return not name.endswith((".bias", ".scale", ".shift"))


class AdamW:
    """Adam with decoupled weight decay and bias correction."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainingConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.adam_beta1 ** self.t
        bc2 = 1.0 - c.adam_beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            dt = p.dtype.type
            m, v = self.m[k], self.v[k]
            m *= dt(c.adam_beta1)
            m += dt(1.0 - c.adam_beta1) * g
            v *= dt(c.adam_beta2)
            v += dt(1.0 - c.adam_beta2) * (g * g)
            if _decays(k):
                p -= dt(lr * c.weight_decay) * p
            p -= dt(lr) * (m / dt(bc1)) / (np.sqrt(v / dt(bc2)) + dt(c.adam_epsilon))

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for k in self.m:
            self.m[k] = tensors[f"adam.m.{k}"].copy()
            self.v[k] = tensors[f"adam.v.{k}"].copy()


@dataclass
class StepResult:
    loss: LossBreakdown
    lr: float
    grad_norm: float


def train_step(model: Model, opt: AdamW, batch: list[TrainExample], cfg: TrainingConfig,
               step: int, total_steps: int) -> StepResult:
    """One AdamW update on ``batch`` at ``lr_schedule(step)``; updates params in place."""
    if len(batch) > cfg.batch_size:
        raise ValueError("batch larger than batch_size")
    loss, grads = batch_objective(model, batch, cfg, train_mode=True,
                                  seed=derive_seed(cfg.seed, 4, step))
    if not math.isfinite(loss.total):
        raise TrainingDivergenceError(f"non-finite loss at step {step}")
    grads, norm = clip_gradients(grads, cfg.clip_norm)
    lr = lr_schedule(step, total_steps, cfg)
    opt.step(model.params, grads, lr)
    return StepResult(loss, lr, norm)


def epoch_batches(lengths: list[int], batch_size: int, seed: int, epoch: int,
                  bucket_batches: int = 50) -> list[list[int]]:
    """Shuffled minibatches of example indices, grouped by similar length.

    The examples are shuffled, cut into chunks of ``bucket_batches`` batches,
    sorted by length inside each chunk, batched, and the batches shuffled
    again.  Every example appears exactly once per epoch.
    """
    rng = SplitMix64(derive_seed(seed, 3, epoch))
    order = list(range(len(lengths)))
    rng.shuffle(order)
    chunk = batch_size * max(1, bucket_batches)
    batches = []
    for c in range(0, len(order), chunk):
        part = sorted(order[c:c + chunk], key=lambda i: lengths[i])
        batches.extend(part[k:k + batch_size] for k in range(0, len(part), batch_size))
    rng.shuffle(batches)
    return batches


def evaluate_loss(model: Model, examples: list[TrainExample], cfg: TrainingConfig,
                  params=None) -> LossBreakdown:
    if not examples:
        return LossBreakdown()
    acc = np.zeros(4)
    ordered = sorted(examples, key=lambda ex: len(ex.enc))
    for i in range(0, len(ordered), cfg.eval_batch_size):
        chunk = ordered[i:i + cfg.eval_batch_size]
        loss, _ = batch_objective(model, chunk, cfg, with_grads=False, params=params)
        acc += len(chunk) * np.array([loss.L_q, loss.L_a, loss.L_s, loss.L_t])
    acc /= len(examples)
    return LossBreakdown.combine(*acc, cfg)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    best_epoch: int
    best_validation: float


def _mean_loss(losses: Iterable[LossBreakdown], cfg: TrainingConfig) -> LossBreakdown:
    arr = np.array([[x.L_q, x.L_a, x.L_s, x.L_t] for x in losses])
    return LossBreakdown.combine(*arr.mean(axis=0), cfg) if len(arr) else LossBreakdown()


def train(dataset: Dataset, vocab: Vocab, enc_cfg: EncoderConfig, cfg: TrainingConfig,
          out_path: str | Path | None = None, log_path: str | Path | None = None,
          state_path: str | Path | None = None, resume_from: str | Path | None = None,
          stop_after_epoch: int | None = None, extra_header: dict | None = None,
          progress: Callable[[str], None] | None = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs, keeping the best-validation parameters.

    ``state_path`` receives a resumable snapshot after every epoch; passing it
    back as ``resume_from`` continues the run bit-for-bit.
    """
    cfg.validate()
    train_ex, skipped = prepare_examples(dataset, vocab, "train", cfg)
    val_ex, _ = prepare_examples(dataset, vocab, "validation", cfg)
    if not train_ex:
        raise ValueError("training split is empty")
    if skipped:
        log.warning("skipped %d training examples with unmappable gold spans", skipped)

    lengths = [len(ex.enc) for ex in train_ex]
    steps_per_epoch = math.ceil(len(train_ex) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    header = {"training": cfg.to_dict(), **(extra_header or {})}

    if resume_from is not None:
        model, rheader, extras = Model.load(resume_from)
        opt = AdamW(model.params, cfg)
        state = rheader["state"]
        opt.load_state(extras, state["adam_t"])
        start_epoch = state["epochs_done"]
        best_val, best_epoch = state["best_validation"], state["best_epoch"]
        best_params = {k[len("best."):]: v.copy() for k, v in extras.items() if k.startswith("best.")}
        history = state["history"]
    else:
        model = Model.initialize(enc_cfg, vocab, cfg.seed)
        opt = AdamW(model.params, cfg)
        start_epoch, best_val, best_epoch = 0, math.inf, -1
        best_params = {k: v.copy() for k, v in model.params.items()}
        history = []

    log_fh = open(log_path, "a" if resume_from else "w", encoding="utf-8") if log_path else None
    try:
        if log_fh and not resume_from:
            log_fh.write(json.dumps({"event": "config", **header, "encoder": model.cfg.to_dict()}) + "\n")
        last_epoch = cfg.epochs if stop_after_epoch is None else min(cfg.epochs, stop_after_epoch)
        for epoch in range(start_epoch, last_epoch):
            t0 = time.time()
            losses = []
            batches = epoch_batches(lengths, cfg.batch_size, cfg.seed, epoch, cfg.bucket_batches)
            for k, idx in enumerate(batches):
                step = epoch * steps_per_epoch + k
                batch = [train_ex[i] for i in idx]
                res = train_step(model, opt, batch, cfg, step, total_steps)
                losses.append(res.loss)
                if log_fh:
                    log_fh.write(json.dumps({"event": "step", "epoch": epoch, "step": step, "lr": res.lr,
                                             "grad_norm": res.grad_norm, **res.loss.to_dict()}) + "\n")
            train_loss = _mean_loss(losses, cfg)
            val_loss = evaluate_loss(model, val_ex, cfg)
            if val_ex and val_loss.total < best_val:
                best_val, best_epoch = val_loss.total, epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
            elif not val_ex:
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
            record = {"event": "epoch", "epoch": epoch, "train": train_loss.to_dict(),
                      "validation": val_loss.to_dict(), "seconds": round(time.time() - t0, 2)}
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if progress:
                progress(f"epoch {epoch + 1}/{cfg.epochs}: train {train_loss.total:.4f} "
                         f"validation {val_loss.total:.4f} ({record['seconds']:.0f}s)")
            if state_path is not None:
                state = {"epochs_done": epoch + 1, "adam_t": opt.t, "best_validation": best_val,
                         "best_epoch": best_epoch, "history": history}
                extra = opt.state_tensors()
                extra.update({f"best.{k}": v for k, v in best_params.items()})
                model.save(state_path, {**header, "state": state}, extra)
    finally:
        if log_fh:
            log_fh.close()

    best = Model(model.cfg, best_params, vocab)
    if out_path is not None:
        best.save(out_path, {**header, "state": {"best_epoch": best_epoch,
                                                 "best_validation": best_val}})
    return TrainResult(best, history, best_epoch, best_val)
