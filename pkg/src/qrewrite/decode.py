"""Sequence decoding over a trained model: greedy, beam, and top-n sampling.

The top-n sampler forces the k hypotheses to begin with the k most likely
distinct first tokens, then lets each one sample its continuation from the
renormalized top-n token distribution. That first step is what buys output
diversity; plain beam search tends to return near-duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelParameters, encode_batch, next_token_log_probs
from .textcore import BOS, EOS, TokenSeq


@dataclass(frozen=True)
class DecodeConfig:
    k: int = 3
    n: int = 40
    max_steps: int = 16
    mode: str = "top_n"
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.mode not in ("greedy", "beam", "top_n"):
            raise ValueError(f"unknown decode mode {self.mode!r}")


@dataclass(frozen=True)
class Hypothesis:
    """A decoded sequence with its accumulated log-probability.

    ``tokens`` ends with EOS exactly when ``finished`` is true; ``log_prob``
    sums the stepwise log-probabilities of every chosen token (EOS included).
    """

    tokens: TokenSeq
    log_prob: float
    finished: bool

    @property
    def content_tokens(self) -> TokenSeq:
        return self.tokens[:-1] if self.finished else self.tokens


def _step_cap(params: ModelParameters, cfg: DecodeConfig) -> int:
    # The decoder prefix carries a leading BOS, so it can hold max_len - 1 tokens.
    return min(cfg.max_steps, params.config.max_len - 1)


def greedy_decode(x: TokenSeq, params: ModelParameters, cfg: DecodeConfig) -> Hypothesis:
    """Argmax token each step (ties to the lowest id), until EOS or max_steps."""
    ctx, _, src_mask = encode_batch([x], params)
    tokens: list[int] = []
    log_prob = 0.0
    finished = False
    for _ in range(_step_cap(params, cfg)):
        prefix = np.asarray([[BOS] + tokens], dtype=np.int64)
        step_lp = next_token_log_probs(params, ctx, src_mask, prefix)[0]
        tok = int(np.argmax(step_lp))
        tokens.append(tok)
        log_prob += float(step_lp[tok])
        if tok == EOS:
            finished = True
            break
    return Hypothesis(tuple(tokens), log_prob, finished)


def beam_search(x: TokenSeq, params: ModelParameters, cfg: DecodeConfig) -> list[Hypothesis]:
    """Standard beam over length-unnormalized log-probs.

    Finished hypotheses retire into a pool; the search stops once no live
    hypothesis can still beat the pool's top k. Any live hypotheses left at
    the step cap join the pool unfinished.
    """
    ctx, _, src_mask = encode_batch([x], params)
    vocab = params.config.vocab_size
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    pool: list[Hypothesis] = []
    for _ in range(_step_cap(params, cfg)):
        prefixes = np.asarray([(BOS,) + toks for toks, _ in live], dtype=np.int64)
        ctx_rows = np.broadcast_to(ctx, (len(live),) + ctx.shape[1:])
        mask_rows = np.broadcast_to(src_mask, (len(live),) + src_mask.shape[1:])
        step_lps = next_token_log_probs(params, ctx_rows, mask_rows, prefixes)
        flat = (np.asarray([lp for _, lp in live])[:, None] + step_lps).ravel()
        # Stable sort on the flattened (hypothesis, token) grid keeps ties
        # ordered by hypothesis rank then token id.
        best = np.argsort(-flat, kind="stable")[: cfg.k]
        next_live: list[tuple[tuple[int, ...], float]] = []
        for f in best:
            i, tok = divmod(int(f), vocab)
            toks = live[i][0] + (tok,)
            lp = float(flat[f])
            if tok == EOS:
                pool.append(Hypothesis(toks, lp, True))
            else:
                next_live.append((toks, lp))
        live = next_live
        if not live:
            break
        if len(pool) >= cfg.k:
            kth = sorted(pool, key=lambda h: -h.log_prob)[cfg.k - 1].log_prob
            if max(lp for _, lp in live) <= kth:
                break
    pool.extend(Hypothesis(toks, lp, False) for toks, lp in live)
    pool.sort(key=lambda h: -h.log_prob)
    return pool[: cfg.k]


def top_n_sample_many(
    xs: Sequence[TokenSeq],
    params: ModelParameters,
    cfg: DecodeConfig,
    rng_seeds: Sequence[int],
) -> list[list[Hypothesis]]:
    """Top-n sampling for many sources at once, hypotheses advancing in lockstep.

    Source ``xs[i]`` uses per-hypothesis random streams seeded from
    ``(rng_seeds[i], hypothesis_index)``, so the decoded tokens do not depend
    on how sources were grouped into one call (accumulated log-probs may
    differ in the last float ulps across batch shapes).
    """
    if len(xs) != len(rng_seeds):
        raise ValueError("one rng seed per source is required")
    ctx, _, src_mask = encode_batch(xs, params)
    k, n = cfg.k, min(cfg.n, params.config.vocab_size)
    cap = _step_cap(params, cfg)

    bos = np.full((len(xs), 1), BOS, dtype=np.int64)
    first_lps = next_token_log_probs(params, ctx, src_mask, bos)

    tokens: dict[tuple[int, int], list[int]] = {}
    log_probs: dict[tuple[int, int], float] = {}
    finished: dict[tuple[int, int], bool] = {}
    rngs: dict[tuple[int, int], np.random.Generator] = {}
    for xi in range(len(xs)):
        lp0 = first_lps[xi]
        admissible = int(np.count_nonzero(np.exp(lp0) > 0.0))
        if admissible < k:
            raise ValueError(
                f"top-n sampling needs {k} distinct admissible first tokens, only {admissible} available"
            )
        order = np.argsort(-lp0, kind="stable")[:k]
        for hi, tok in enumerate(order):
            key = (xi, hi)
            tok = int(tok)
            tokens[key] = [tok]
            log_probs[key] = float(lp0[tok])
            finished[key] = tok == EOS
            rngs[key] = np.random.default_rng([int(rng_seeds[xi]), hi])

    for _ in range(cap - 1):
        live = [key for key in tokens if not finished[key]]
        if not live:
            break
        prefixes = np.asarray([[BOS] + tokens[key] for key in live], dtype=np.int64)
        ctx_rows = ctx[[key[0] for key in live]]
        mask_rows = src_mask[[key[0] for key in live]]
        step_lps = next_token_log_probs(params, ctx_rows, mask_rows, prefixes)
        for row, key in enumerate(live):
            lp = step_lps[row]
            top = np.argsort(-lp, kind="stable")[:n]
            shifted = lp[top] - lp[top].max()
            probs = np.exp(shifted)
            probs /= probs.sum()
            u = rngs[key].random()
            tok = int(top[np.searchsorted(np.cumsum(probs), u, side="right").clip(max=n - 1)])
            tokens[key].append(tok)
            log_probs[key] += float(lp[tok])
            if tok == EOS:
                finished[key] = True

    return [
        [
            Hypothesis(tuple(tokens[(xi, hi)]), log_probs[(xi, hi)], finished[(xi, hi)])
            for hi in range(k)
        ]
        for xi in range(len(xs))
    ]


def top_n_sample(x: TokenSeq, params: ModelParameters, cfg: DecodeConfig) -> list[Hypothesis]:
    """k hypotheses with pairwise distinct first tokens, sampled continuations."""
    return top_n_sample_many([x], params, cfg, [cfg.rng_seed])[0]
