"""Joint training of the twin translation models with a cycle-consistency term.

Steps 1..G apply only the two separate likelihood gradients (warmup); later
steps add a weighted gradient of the approximate translate-back likelihood,
computed over titles sampled from the forward model. Every random draw is
derived functionally from (seed, purpose, step), so interrupted runs resume
bit-for-bit from a checkpoint.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Batch, ClickLogDataset, pad_batch
from .decode import DecodeConfig, top_n_sample, top_n_sample_many
from .model import (
    ModelParameters,
    encode_batch,
    loss_and_grads,
    read_named_tensors,
    save_checkpoint,
    load_checkpoint,
    next_token_log_probs,
    sequence_scores,
    weighted_logprob_grads,
    write_named_tensors,
)
from .rewrite import log_sum_exp
from .textcore import BOS, TokenSeq
from .util import derive_seed

# Purpose codes for derived random streams.
_SHUFFLE, _DROP_F, _DROP_B, _CYCLIC, _EVAL = 101, 201, 202, 301, 401


@dataclass(frozen=True)
class AdamConfig:
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    batch_size: int = 32
    max_steps: int = 400
    warmup_steps: int = 200
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    noam_warmup: int = 200
    seed: int = 0
    eval_every: int = 50
    eval_pairs: int = 64
    eval_queries: int = 16

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.warmup_steps > self.max_steps:
            raise ValueError("warmup_steps must not exceed max_steps")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class CyclicTerm:
    """Sampled titles with their two-directional scores and simplex weights."""

    titles: list[TokenSeq]
    fwd_lps: np.ndarray
    bwd_lps: np.ndarray
    weights: np.ndarray
    value: float


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_optimizer(params: ModelParameters) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(a) for k, a in params.tensors.items()},
        v={k: np.zeros_like(a) for k, a in params.tensors.items()},
    )


def noam_lr(step: int, d_model: int, noam_warmup: int, lr_scale: float) -> float:
    """Inverse-sqrt schedule with a linear warmup ramp, peaking at noam_warmup."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return lr_scale * d_model ** -0.5 * min(step ** -0.5, step * noam_warmup ** -1.5)


def adam_step(
    params: ModelParameters,
    grads: dict[str, np.ndarray],
    opt: OptimizerState,
    lr: float,
    adam: AdamConfig = AdamConfig(),
) -> ModelParameters:
    """Bias-corrected Adam update in place, descending the supplied loss grads."""
    opt.t += 1
    b1, b2 = adam.beta1, adam.beta2
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
        m = opt.m[name]
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1 ** opt.t)
        vhat = v / (1.0 - b2 ** opt.t)
        params.tensors[name] -= (lr * mhat / (np.sqrt(vhat) + adam.eps)).astype(
            params.tensors[name].dtype
        )
    return params


def separate_losses(
    batch: Batch,
    fparams: ModelParameters,
    bparams: ModelParameters,
    rng_f: np.random.Generator | None = None,
    rng_b: np.random.Generator | None = None,
) -> tuple[float, float, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """The two independent likelihood losses and their gradients (no cross terms)."""
    loss_f, grads_f = loss_and_grads(batch, fparams, "forward", rng_f)
    loss_b, grads_b = loss_and_grads(batch, bparams, "backward", rng_b)
    return loss_f, loss_b, grads_f, grads_b


def _clean_titles(hyps) -> list[TokenSeq]:
    """Unique, non-empty sampled titles in first-appearance order.

    Duplicates would double-count a term of the marginal; empty titles cannot
    condition the backward model and are dropped.
    """
    seen: set[TokenSeq] = set()
    out: list[TokenSeq] = []
    for h in hyps:
        content = h.content_tokens
        if content and content not in seen:
            seen.add(content)
            out.append(content)
    return out


def cyclic_term(
    x: TokenSeq,
    fparams: ModelParameters,
    bparams: ModelParameters,
    decode_cfg: DecodeConfig,
    titles: Sequence[TokenSeq] | None = None,
) -> CyclicTerm:
    """Approximate translate-back log-likelihood of ``x`` over sampled titles.

    ``titles`` overrides sampling (used by oracle tests that enumerate the
    full title space).
    """
    if titles is None:
        titles = _clean_titles(top_n_sample(x, fparams, decode_cfg))
    else:
        titles = list(titles)
    if not titles:
        raise ValueError("no usable sampled titles")
    fwd_lps, _ = sequence_scores([(x, y) for y in titles], fparams)
    bwd_lps, _ = sequence_scores([(y, x) for y in titles], bparams)
    joint = fwd_lps + bwd_lps
    value = log_sum_exp(list(joint))
    weights = np.exp(joint - value)
    weights /= weights.sum()
    return CyclicTerm(titles, fwd_lps, bwd_lps, weights, float(value))


def cyclic_grads(
    term: CyclicTerm,
    x: TokenSeq,
    fparams: ModelParameters,
    bparams: ModelParameters,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Ascent gradients of the translate-back log-likelihood for both models.

    The sampled title set is treated as a constant: each model receives the
    weight-averaged gradient of its own teacher-forced log-probabilities.
    """
    pairs_f = [(x, y) for y in term.titles]
    pairs_b = [(y, x) for y in term.titles]
    _, gf = weighted_logprob_grads(pad_batch(pairs_f), fparams, term.weights)
    _, gb = weighted_logprob_grads(pad_batch(pairs_b), bparams, term.weights)
    assert gf is not None and gb is not None
    return gf, gb


@dataclass
class TrainReport:
    rows: list[tuple[int, str, float]] = field(default_factory=list)

    def log(self, step: int, metric: str, value: float) -> None:
        self.rows.append((step, metric, float(value)))

    def series(self, metric: str) -> list[tuple[int, float]]:
        return [(s, v) for s, m, v in self.rows if m == metric]

    def last(self, metric: str) -> float:
        series = self.series(metric)
        if not series:
            raise KeyError(metric)
        return series[-1][1]

    def write_tsv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for step, metric, value in self.rows:
                fh.write(f"{step}\t{metric}\t{value:.6f}\n")


@dataclass
class TrainState:
    fparams: ModelParameters
    bparams: ModelParameters
    opt_f: OptimizerState
    opt_b: OptimizerState
    step: int = 0


def _optimizer_tensors(opt: OptimizerState) -> dict[str, np.ndarray]:
    out = {f"m.{k}": a for k, a in opt.m.items()}
    out.update({f"v.{k}": a for k, a in opt.v.items()})
    return out


def save_train_state(state: TrainState, out_dir: str, vocab_hash: str = "") -> None:
    os.makedirs(out_dir, exist_ok=True)
    state.fparams.step = state.step
    state.bparams.step = state.step
    save_checkpoint(state.fparams, os.path.join(out_dir, "forward.qrw"), vocab_hash)
    save_checkpoint(state.bparams, os.path.join(out_dir, "backward.qrw"), vocab_hash)
    for name, opt, params in (
        ("opt_forward.qrw", state.opt_f, state.fparams),
        ("opt_backward.qrw", state.opt_b, state.bparams),
    ):
        meta = {
            "kind": "optimizer",
            "dtype": params.config.dtype,
            "step": opt.t,
        }
        write_named_tensors(os.path.join(out_dir, name), meta, _optimizer_tensors(opt))


def load_train_state(out_dir: str) -> TrainState:
    fparams, _ = load_checkpoint(os.path.join(out_dir, "forward.qrw"))
    bparams, _ = load_checkpoint(os.path.join(out_dir, "backward.qrw"))

    def read_opt(name: str) -> OptimizerState:
        meta, tensors = read_named_tensors(os.path.join(out_dir, name))
        if meta.get("kind") != "optimizer":
            raise ValueError(f"{name}: not an optimizer state file")
        m = {k[2:]: a for k, a in tensors.items() if k.startswith("m.")}
        v = {k[2:]: a for k, a in tensors.items() if k.startswith("v.")}
        return OptimizerState(m, v, int(meta["step"]))

    return TrainState(fparams, bparams, read_opt("opt_forward.qrw"), read_opt("opt_backward.qrw"), fparams.step)


class _BatchSchedule:
    """Deterministic batch for any global step; epochs are seeded permutations."""

    def __init__(self, dataset: ClickLogDataset, batch_size: int, seed: int):
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.per_epoch = math.ceil(len(dataset.pairs) / batch_size)
        self._epoch = -1
        self._order: np.ndarray | None = None

    def batch_for_step(self, step: int) -> Batch:
        epoch, slot = divmod(step - 1, self.per_epoch)
        if epoch != self._epoch:
            rng = np.random.default_rng(derive_seed(self.seed, _SHUFFLE, epoch))
            self._order = rng.permutation(len(self.dataset.pairs))
            self._epoch = epoch
        assert self._order is not None
        rows = self._order[slot * self.batch_size : (slot + 1) * self.batch_size]
        pairs = [self.dataset.pairs[i] for i in rows]
        return pad_batch([(p.query, p.title) for p in pairs])


def _batch_cyclic_contribution(
    batch_queries: list[TokenSeq],
    fparams: ModelParameters,
    bparams: ModelParameters,
    decode_cfg: DecodeConfig,
    sample_seeds: list[int],
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray]] | None:
    """Mean translate-back value and its ascent grads over one batch of queries."""
    hyp_lists = top_n_sample_many(batch_queries, fparams, decode_cfg, sample_seeds)
    flat_f: list[tuple[TokenSeq, TokenSeq]] = []
    flat_b: list[tuple[TokenSeq, TokenSeq]] = []
    spans: list[tuple[int, int]] = []  # row span per contributing example
    for x, hyps in zip(batch_queries, hyp_lists):
        titles = _clean_titles(hyps)
        start = len(flat_f)
        flat_f.extend((x, y) for y in titles)
        flat_b.extend((y, x) for y in titles)
        spans.append((start, len(flat_f)))
    if not flat_f:
        return None
    fwd_lps, _ = weighted_logprob_grads(pad_batch(flat_f), fparams, None)
    bwd_lps, _ = weighted_logprob_grads(pad_batch(flat_b), bparams, None)
    joint = fwd_lps + bwd_lps

    n_examples = len(batch_queries)
    weights = np.zeros(len(flat_f))
    total_value = 0.0
    for start, end in spans:
        if end == start:
            continue
        value = log_sum_exp(list(joint[start:end]))
        w = np.exp(joint[start:end] - value)
        weights[start:end] = w / w.sum() / n_examples
        total_value += value
    _, gf = weighted_logprob_grads(pad_batch(flat_f), fparams, weights)
    _, gb = weighted_logprob_grads(pad_batch(flat_b), bparams, weights)
    assert gf is not None and gb is not None
    return total_value / n_examples, gf, gb


def _perplexity(pairs: list[tuple[TokenSeq, TokenSeq]], params: ModelParameters) -> float:
    lps, counts = sequence_scores(pairs, params)
    return float(np.exp(-lps.sum() / counts.sum()))


def translate_back_eval(
    queries: Sequence[TokenSeq],
    fparams: ModelParameters,
    bparams: ModelParameters,
    decode_cfg: DecodeConfig,
    seeds: Sequence[int],
) -> tuple[float, float]:
    """Mean translate-back log-prob and token-level argmax accuracy over queries.

    Accuracy weights each sampled title by its normalized forward probability
    and compares the backward model's argmax against the query token at every
    content position.
    """
    hyp_lists = top_n_sample_many(list(queries), fparams, decode_cfg, list(seeds))
    values: list[float] = []
    accs: list[float] = []
    for x, hyps in zip(queries, hyp_lists):
        titles = _clean_titles(hyps)
        if not titles:
            continue
        term = cyclic_term(x, fparams, bparams, decode_cfg, titles=titles)
        values.append(term.value)
        tw = np.exp(term.fwd_lps - log_sum_exp(list(term.fwd_lps)))
        tw /= tw.sum()
        acc = 0.0
        for w, y in zip(tw, titles):
            acc += w * _argmax_position_accuracy(y, x, bparams)
        accs.append(acc)
    if not values:
        return float("-inf"), 0.0
    return float(np.mean(values)), float(np.mean(accs))


def _argmax_position_accuracy(src: TokenSeq, gold: TokenSeq, params: ModelParameters) -> float:
    """Fraction of gold positions where the teacher-forced argmax matches."""
    ctx, _, src_mask = encode_batch([src], params)
    hits = 0
    for t in range(len(gold)):
        prefix = np.asarray([(BOS,) + tuple(gold[:t])], dtype=np.int64)
        lp = next_token_log_probs(params, ctx, src_mask, prefix)[0]
        if int(np.argmax(lp)) == gold[t]:
            hits += 1
    return hits / len(gold)


def _eval_sets(dataset: ClickLogDataset, cfg: TrainConfig):
    pairs = [(p.query, p.title) for p in dataset.pairs[: cfg.eval_pairs]]
    queries: list[TokenSeq] = []
    seen: set[TokenSeq] = set()
    for p in dataset.pairs:
        if p.query not in seen:
            seen.add(p.query)
            queries.append(p.query)
        if len(queries) >= cfg.eval_queries:
            break
    return pairs, queries


def joint_train(
    dataset: ClickLogDataset,
    cfg: TrainConfig,
    fparams: ModelParameters,
    bparams: ModelParameters,
    out_dir: str | None = None,
    resume: TrainState | None = None,
    vocab_hash: str = "",
) -> tuple[ModelParameters, ModelParameters, TrainReport]:
    """Run the two-phase training loop (warmup, then joint with the cyclic term).

    ``resume`` continues an interrupted run from its saved step; the result is
    identical to an uninterrupted run because all randomness derives from
    (seed, purpose, step).
    """
    if not dataset.pairs:
        raise ValueError("dataset is empty")
    report = TrainReport()
    if resume is not None:
        fparams, bparams = resume.fparams, resume.bparams
        opt_f, opt_b = resume.opt_f, resume.opt_b
        start_step = resume.step
    else:
        opt_f = init_optimizer(fparams)
        opt_b = init_optimizer(bparams)
        start_step = 0

    schedule = _BatchSchedule(dataset, cfg.batch_size, cfg.seed)
    eval_pairs, eval_queries = _eval_sets(dataset, cfg)

    for step in range(start_step + 1, cfg.max_steps + 1):
        batch = schedule.batch_for_step(step)
        rng_f = np.random.default_rng(derive_seed(cfg.seed, _DROP_F, step))
        rng_b = np.random.default_rng(derive_seed(cfg.seed, _DROP_B, step))
        loss_f, loss_b, grads_f, grads_b = separate_losses(batch, fparams, bparams, rng_f, rng_b)

        loss_c = 0.0
        if step > cfg.warmup_steps and cfg.lam > 0.0:
            queries = [
                tuple(int(t) for t in batch.src[i, batch.src_mask[i]])
                for i in range(len(batch))
            ]
            sample_seeds = [derive_seed(cfg.seed, _CYCLIC, step, b) for b in range(len(queries))]
            contribution = _batch_cyclic_contribution(
                queries, fparams, bparams, cfg.decode, sample_seeds
            )
            if contribution is not None:
                mean_value, cgf, cgb = contribution
                loss_c = -mean_value
                for name in grads_f:
                    grads_f[name] -= cfg.lam * cgf[name]
                for name in grads_b:
                    grads_b[name] -= cfg.lam * cgb[name]

        lr_f = noam_lr(step, fparams.config.d_model, cfg.noam_warmup, cfg.adam.lr_scale)
        lr_b = noam_lr(step, bparams.config.d_model, cfg.noam_warmup, cfg.adam.lr_scale)
        adam_step(fparams, grads_f, opt_f, lr_f, cfg.adam)
        adam_step(bparams, grads_b, opt_b, lr_b, cfg.adam)

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            report.log(step, "loss_forward", loss_f)
            report.log(step, "loss_backward", loss_b)
            report.log(step, "loss_cyclic", loss_c)
            report.log(step, "perplexity_forward", _perplexity(eval_pairs, fparams))
            report.log(
                step,
                "perplexity_backward",
                _perplexity([(t, q) for q, t in eval_pairs], bparams),
            )
            eval_seeds = [derive_seed(cfg.seed, _EVAL, qi) for qi in range(len(eval_queries))]
            tb_lp, tb_acc = translate_back_eval(
                eval_queries, fparams, bparams, cfg.decode, eval_seeds
            )
            report.log(step, "translate_back_log_prob", tb_lp)
            report.log(step, "translate_back_accuracy", tb_acc)
            if out_dir is not None:
                save_train_state(
                    TrainState(fparams, bparams, opt_f, opt_b, step), out_dir, vocab_hash
                )

    if out_dir is not None:
        save_train_state(
            TrainState(fparams, bparams, opt_f, opt_b, cfg.max_steps), out_dir, vocab_hash
        )
        report.write_tsv(os.path.join(out_dir, "report.tsv"))
    return fparams, bparams, report


def train_single(
    pairs: list[tuple[TokenSeq, TokenSeq]],
    cfg: TrainConfig,
    params: ModelParameters,
    out_dir: str | None = None,
    vocab_hash: str = "",
    ckpt_name: str | None = None,
) -> tuple[ModelParameters, TrainReport]:
    """Plain likelihood training of one model on (source, target) pairs.

    Backs the single-direction tasks, including direct query-to-query
    training on shared-click pairs.
    """
    if not pairs:
        raise ValueError("no training pairs")
    from .data import ClickPair  # local alias to reuse the batch schedule

    dataset = ClickLogDataset([ClickPair(s, t, 2) for s, t in pairs])
    schedule = _BatchSchedule(dataset, cfg.batch_size, cfg.seed)
    opt = init_optimizer(params)
    report = TrainReport()
    eval_pairs = pairs[: cfg.eval_pairs]
    for step in range(1, cfg.max_steps + 1):
        batch = schedule.batch_for_step(step)
        rng = np.random.default_rng(derive_seed(cfg.seed, _DROP_F, step))
        loss, grads = loss_and_grads(batch, params, "forward", rng)
        lr = noam_lr(step, params.config.d_model, cfg.noam_warmup, cfg.adam.lr_scale)
        adam_step(params, grads, opt, lr, cfg.adam)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            report.log(step, "loss", loss)
            report.log(step, "perplexity", _perplexity(eval_pairs, params))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        params.step = cfg.max_steps
        name = ckpt_name or f"{params.role}.qrw"
        save_checkpoint(params, os.path.join(out_dir, name), vocab_hash)
        report.write_tsv(os.path.join(out_dir, "report.tsv"))
    return params, report
