"""Two-hop rewrite inference: query -> k synthetic titles -> candidate queries.

Every surviving candidate is scored by the marginal probability of reaching
it through ANY of the sampled titles, computed in log space: the candidate's
score is log-sum-exp over all k titles of (title log-prob under the forward
model + candidate log-prob given that title under the backward model). Titles
that did not generate a candidate still contribute to its score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .decode import DecodeConfig, top_n_sample
from .model import ModelParameters, sequence_scores
from .textcore import TokenSeq
from .util import derive_seed

_TITLE_STREAM, _CANDIDATE_STREAM = 11, 13


def log_sum_exp(values: Sequence[float]) -> float:
    """Numerically stable log(sum(exp(values))) via max shifting."""
    if len(values) == 0:
        raise ValueError("log_sum_exp of an empty list")
    peak = max(values)
    if math.isinf(peak) and peak < 0:
        return float("-inf")
    return peak + math.log(sum(math.exp(v - peak) for v in values))


@dataclass(frozen=True)
class RewriteConfig:
    k: int = 3
    n: int = 40
    max_title_len: int = 16
    max_query_len: int = 12
    exclude_identity: bool = True
    top_out: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.n < 1:
            raise ValueError("k and n must be >= 1")
        if self.top_out < 1 or self.top_out > self.k * self.k:
            raise ValueError("top_out must lie in [1, k^2]")


@dataclass(frozen=True)
class RewriteCandidate:
    query: TokenSeq
    log_prob: float
    # (title index, that title's additive contribution in log space)
    provenance: tuple[tuple[int, float], ...]


def score_candidate(
    candidate: TokenSeq,
    titles_with_fwd_lps: Sequence[tuple[TokenSeq, float]],
    bparams: ModelParameters,
) -> float:
    """Marginal log-prob of one candidate over the given titles."""
    if not titles_with_fwd_lps:
        raise ValueError("no titles to marginalize over")
    bwd_lps, _ = sequence_scores([(y, candidate) for y, _ in titles_with_fwd_lps], bparams)
    return log_sum_exp([flp + float(blp) for (_, flp), blp in zip(titles_with_fwd_lps, bwd_lps)])


def sample_titles(
    x: TokenSeq, fparams: ModelParameters, cfg: RewriteConfig
) -> tuple[list[TokenSeq], list[float]]:
    """Synthetic titles for ``x`` with their teacher-forced forward log-probs.

    Empty decoded titles are dropped; duplicates are kept, matching the
    literal sum over all k sampled titles in the marginal score.
    """
    title_cfg = DecodeConfig(
        k=cfg.k, n=cfg.n, max_steps=cfg.max_title_len,
        rng_seed=derive_seed(cfg.rng_seed, _TITLE_STREAM),
    )
    titles = [h.content_tokens for h in top_n_sample(x, fparams, title_cfg) if h.content_tokens]
    if not titles:
        return [], []
    fwd_lps, _ = sequence_scores([(x, y) for y in titles], fparams)
    return titles, [float(v) for v in fwd_lps]


def rewrite(
    x: TokenSeq,
    fparams: ModelParameters,
    bparams: ModelParameters,
    cfg: RewriteConfig,
) -> list[RewriteCandidate]:
    """Top rewrites of ``x``, sorted by marginal log-probability.

    Candidates are de-duplicated on token identity before scoring; the
    original query is removed when ``exclude_identity`` is set. Empty decoded
    sequences are dropped (the backward model cannot condition on an empty
    title, and an empty query retrieves nothing).
    """
    if not x:
        raise ValueError("empty query")
    titles, fwd_lps = sample_titles(x, fparams, cfg)
    if not titles:
        return []

    candidates: list[TokenSeq] = []
    seen: set[TokenSeq] = set()
    for t, title in enumerate(titles):
        cand_cfg = DecodeConfig(
            k=cfg.k, n=cfg.n, max_steps=cfg.max_query_len,
            rng_seed=derive_seed(cfg.rng_seed, _CANDIDATE_STREAM, t),
        )
        for hyp in top_n_sample(title, bparams, cand_cfg):
            cand = hyp.content_tokens
            if not cand or cand in seen:
                continue
            if cfg.exclude_identity and cand == tuple(x):
                continue
            seen.add(cand)
            candidates.append(cand)
    if not candidates:
        return []

    # One batched backward scoring of every (title, candidate) combination.
    pairs = [(title, cand) for cand in candidates for title in titles]
    bwd_lps, _ = sequence_scores(pairs, bparams)
    out: list[RewriteCandidate] = []
    for ci, cand in enumerate(candidates):
        contribs = tuple(
            (t, float(fwd_lps[t] + bwd_lps[ci * len(titles) + t]))
            for t in range(len(titles))
        )
        out.append(RewriteCandidate(cand, log_sum_exp([c for _, c in contribs]), contribs))
    out.sort(key=lambda c: (-c.log_prob, c.query))
    return out[: cfg.top_out]
