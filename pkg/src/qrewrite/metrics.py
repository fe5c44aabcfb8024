"""Offline evaluation quantities for the rewriting models.

The cosine metric pools the forward model's encoder states as a stand-in for
a dedicated embedding model; it preserves the metric's role (semantic
relatedness of rewrite and original), not any absolute production values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import ClickLogDataset
from .decode import DecodeConfig
from .model import ModelParameters, mean_pooled_embedding, sequence_scores
from .textcore import TokenSeq
from .train import translate_back_eval
from .util import derive_seed


def perplexity(dataset: ClickLogDataset, params: ModelParameters, direction: str = "forward") -> float:
    """exp of the mean per-token teacher-forced negative log-likelihood."""
    if not dataset.pairs:
        raise ValueError("empty dataset")
    if direction == "forward":
        pairs = [(p.query, p.title) for p in dataset.pairs]
    elif direction == "backward":
        pairs = [(p.title, p.query) for p in dataset.pairs]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    lps, counts = sequence_scores(pairs, params)
    return float(np.exp(-lps.sum() / counts.sum()))


def _eval_seeds(queries: Sequence[TokenSeq], decode_cfg: DecodeConfig) -> list[int]:
    return [derive_seed(decode_cfg.rng_seed, qi) for qi in range(len(queries))]


def translate_back_log_prob(
    queries: Sequence[TokenSeq],
    fparams: ModelParameters,
    bparams: ModelParameters,
    decode_cfg: DecodeConfig,
) -> float:
    """Mean log-prob of reproducing each query through sampled titles."""
    value, _ = translate_back_eval(queries, fparams, bparams, decode_cfg, _eval_seeds(queries, decode_cfg))
    return value


def translate_back_accuracy(
    queries: Sequence[TokenSeq],
    fparams: ModelParameters,
    bparams: ModelParameters,
    decode_cfg: DecodeConfig,
) -> float:
    """Probability-weighted fraction of positions the backward argmax reproduces."""
    _, acc = translate_back_eval(queries, fparams, bparams, decode_cfg, _eval_seeds(queries, decode_cfg))
    return acc


def _ngram_set(tokens: Sequence) -> set:
    grams: set = set(tokens)
    grams.update(zip(tokens, tokens[1:]))
    return grams


def ngram_f1(original: Sequence, rewritten: Sequence) -> float:
    """F1 of unigram+bigram SET overlap between the two token sequences."""
    if len(original) == 0 or len(rewritten) == 0:
        raise ValueError("ngram_f1 requires non-empty sequences")
    orig = _ngram_set(tuple(original))
    rewr = _ngram_set(tuple(rewritten))
    overlap = len(orig & rewr)
    p = overlap / len(rewr)
    r = overlap / len(orig)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def edit_distance(original: str, rewritten: str, level: str = "char") -> int:
    """Levenshtein distance with unit insert/delete/substitute costs.

    ``level="char"`` (default) matches short-query magnitudes; "token"
    compares whitespace tokens instead.
    """
    if level == "char":
        a: Sequence = original
        b: Sequence = rewritten
    elif level == "token":
        a = original.split()
        b = rewritten.split()
    else:
        raise ValueError(f"unknown level {level!r}")
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        current = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[len(b)]


def vector_cosine(va: np.ndarray, vb: np.ndarray) -> float:
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate zero embedding")
    return float(np.dot(va, vb) / (na * nb))


def cosine_similarity(original: TokenSeq, rewritten: TokenSeq, fparams: ModelParameters) -> float:
    """Cosine of the mean-pooled encoder embeddings of the two queries."""
    return vector_cosine(
        mean_pooled_embedding(original, fparams), mean_pooled_embedding(rewritten, fparams)
    )


def synonym_recall_at_m(
    rewrites_per_query: Mapping[str, Sequence[str]],
    ground_truth: Mapping[int, set[str]],
    m: int,
) -> float:
    """Fraction of queries whose top-m rewrites include another surface of the
    query's planted concept."""
    if not rewrites_per_query:
        raise ValueError("no queries to evaluate")
    surface_to_concept: dict[str, int] = {}
    for concept, surfaces in ground_truth.items():
        for s in surfaces:
            surface_to_concept[s] = concept
    hits = 0
    for query, rewrites in rewrites_per_query.items():
        if query not in surface_to_concept:
            raise ValueError(f"query {query!r} missing from ground truth")
        concept = surface_to_concept[query]
        others = ground_truth[concept] - {query}
        if any(r in others for r in list(rewrites)[:m]):
            hits += 1
    return hits / len(rewrites_per_query)


@dataclass
class EvalReport:
    """Aggregate metric values plus per-pair detail rows."""

    aggregates: dict[str, float] = field(default_factory=dict)
    details: list[dict] = field(default_factory=list)

    def write_tsv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for name in sorted(self.aggregates):
                fh.write(f"{name}\t{self.aggregates[name]:.6f}\n")

    def write_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.details:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
