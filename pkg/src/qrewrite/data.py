"""Click-log ingestion, synthetic world generation, query-pair extraction, batching.

The synthetic generator plants synonym structure: each concept has several
synonymous query surfaces that all click on titles built from the concept's
canonical title tokens. The ground-truth surface map is emitted only for
evaluation; models never see it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .textcore import PAD, TokenSeq, Vocabulary, build_vocab, encode


@dataclass(frozen=True)
class ClickPair:
    query: TokenSeq
    title: TokenSeq
    clicks: int


@dataclass
class ClickLogDataset:
    pairs: list[ClickPair]
    vocab: Vocabulary | None = None
    # Raw (query, title, clicks) text rows; populated by the generator so the
    # CLI can serialize the exact emitted corpus.
    rows: list[tuple[str, str, int]] | None = None

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class SynonymWorldSpec:
    concepts: int = 30
    surfaces_per_concept: int = 3
    title_tokens_per_concept: int = 2
    modifier_vocab: int = 8
    pairs_to_emit: int = 2000
    seed: int = 0

    def __post_init__(self):
        for name in (
            "concepts",
            "surfaces_per_concept",
            "title_tokens_per_concept",
            "modifier_vocab",
            "pairs_to_emit",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class QueryPair:
    source: TokenSeq
    target: TokenSeq
    shared_clicks: int


def read_click_rows(path: str) -> list[tuple[str, str, int]]:
    """Parse `query<TAB>title<TAB>clicks` rows without filtering or encoding."""
    rows: list[tuple[str, str, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            query_text, title_text, clicks_text = cols
            try:
                clicks = int(clicks_text)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: clicks column is not an integer: {clicks_text!r}") from None
            if not query_text.strip() or not title_text.strip():
                raise ValueError(f"{path}:{lineno}: empty query or title")
            rows.append((query_text, title_text, clicks))
    return rows


def load_click_log(path: str, vocab: Vocabulary) -> ClickLogDataset:
    """Read a click-log TSV, dropping rows with clicks <= 1.

    Single-click rows are treated as accidental and excluded from training.
    """
    pairs = [
        ClickPair(encode(q, vocab), encode(t, vocab), clicks)
        for q, t, clicks in read_click_rows(path)
        if clicks > 1
    ]
    return ClickLogDataset(pairs, vocab=vocab)


def write_click_log(rows: Sequence[tuple[str, str, int]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for query, title, clicks in rows:
            fh.write(f"{query}\t{title}\t{clicks}\n")


def concept_surfaces(spec: SynonymWorldSpec) -> dict[int, list[str]]:
    """The planted surface inventory: surface j of concept c is 'syn<c>_<j> cat<c>'."""
    return {
        c: [f"syn{c}_{j} cat{c}" for j in range(spec.surfaces_per_concept)]
        for c in range(spec.concepts)
    }


def concept_title_tokens(spec: SynonymWorldSpec) -> dict[int, list[str]]:
    """Canonical title tokens per concept; the category token is shared with queries."""
    return {
        c: [f"cat{c}"] + [f"ti{c}_{t}" for t in range(spec.title_tokens_per_concept - 1)]
        for c in range(spec.concepts)
    }


def generate_synthetic(spec: SynonymWorldSpec) -> tuple[ClickLogDataset, dict[int, set[str]]]:
    """Emit a click log over the planted synonym world.

    Each pair joins one query surface of a concept (sometimes with a modifier
    token) to a title made of the concept's canonical tokens plus attribute
    noise. Half the titles carry a surface-correlated flavor attribute, so a
    title CAN identify which surface produced it; that is the channel a
    consistency-trained model can exploit to translate queries back.
    Deterministic given the spec, including its seed. The returned dataset
    carries the vocabulary built from the emitted rows and the raw text rows
    for serialization.
    """
    rng = np.random.default_rng(spec.seed)
    surfaces = concept_surfaces(spec)
    titles = concept_title_tokens(spec)
    rows: list[tuple[str, str, int]] = []
    for _ in range(spec.pairs_to_emit):
        c = int(rng.integers(spec.concepts))
        j = int(rng.integers(spec.surfaces_per_concept))
        query = surfaces[c][j]
        if rng.random() < 0.4:
            query += f" mod{int(rng.integers(spec.modifier_vocab))}"
        # Titles lead with a variable token so candidate titles genuinely
        # diverge at the first decoding position: a surface flavor half the
        # time, a generic attribute a quarter of the time, bare otherwise.
        head = rng.random()
        title_tokens = []
        if head < 0.5:
            title_tokens.append(f"syf{c}_{j}")
        elif head < 0.75:
            title_tokens.append(f"attr{int(rng.integers(spec.modifier_vocab))}")
        title_tokens += titles[c]
        if rng.random() < 0.3:
            title_tokens.append(f"attr{int(rng.integers(spec.modifier_vocab))}")
        clicks = 2 + int(rng.integers(0, 7))
        rows.append((query, " ".join(title_tokens), clicks))

    token_budget = 4 + spec.concepts * (
        2 * spec.surfaces_per_concept + spec.title_tokens_per_concept
    ) + 2 * spec.modifier_vocab
    vocab = build_vocab((f"{q} {t}" for q, t, _ in rows), max_size=token_budget)
    pairs = [
        ClickPair(encode(q, vocab), encode(t, vocab), clicks) for q, t, clicks in rows
    ]
    ground_truth = {c: set(s) for c, s in surfaces.items()}
    return ClickLogDataset(pairs, vocab=vocab, rows=rows), ground_truth


def synonym_dictionary_rows(ground_truth: dict[int, set[str]]) -> list[tuple[str, str]]:
    """Phrase/synonym rows pairing every ordered couple of a concept's surfaces.

    This is the curated-dictionary stand-in for the rule-based rewriter,
    derived from the same planted synonym structure the generator emitted.
    """
    rows: list[tuple[str, str]] = []
    for concept in sorted(ground_truth):
        surfaces = sorted(ground_truth[concept])
        for a in surfaces:
            for b in surfaces:
                if a != b:
                    rows.append((a, b))
    return rows


def write_ground_truth(ground_truth: dict[int, set[str]], path: str) -> None:
    """Serialize the concept -> surfaces map as `concept_id<TAB>surface` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for c in sorted(ground_truth):
            for surface in sorted(ground_truth[c]):
                fh.write(f"{c}\t{surface}\n")


def load_ground_truth(path: str) -> dict[int, set[str]]:
    ground_truth: dict[int, set[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns")
            ground_truth.setdefault(int(cols[0]), set()).add(cols[1])
    return ground_truth


def extract_query_pairs(dataset: ClickLogDataset, min_shared_clicks: int) -> list[QueryPair]:
    """Pair up queries that share clicks on common titles.

    The shared-click score of (q1, q2) sums both queries' clicks over all
    common titles; pairs at or above the threshold are emitted in both
    directions. Duplicate (query, title) rows are aggregated first.
    """
    if min_shared_clicks < 1:
        raise ValueError("min_shared_clicks must be >= 1")
    clicks_by_query: dict[TokenSeq, dict[TokenSeq, int]] = {}
    for pair in dataset.pairs:
        per_title = clicks_by_query.setdefault(pair.query, {})
        per_title[pair.title] = per_title.get(pair.title, 0) + pair.clicks

    queries = sorted(clicks_by_query)
    out: list[QueryPair] = []
    for a in range(len(queries)):
        for b in range(a + 1, len(queries)):
            q1, q2 = queries[a], queries[b]
            t1, t2 = clicks_by_query[q1], clicks_by_query[q2]
            if len(t2) < len(t1):
                t1, t2 = t2, t1
            shared = sum(c + t2[title] for title, c in t1.items() if title in t2)
            if shared >= min_shared_clicks:
                out.append(QueryPair(q1, q2, shared))
                out.append(QueryPair(q2, q1, shared))
    return out


@dataclass
class Batch:
    """Padded id matrices with True-at-real-token masks."""

    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]

    def swapped(self) -> "Batch":
        return Batch(self.tgt, self.tgt_mask, self.src, self.src_mask)


def pad_batch(pairs: Sequence[tuple[TokenSeq, TokenSeq]]) -> Batch:
    """Pad (source, target) sequences with PAD up to the batch max lengths."""
    if not pairs:
        raise ValueError("cannot build an empty batch")

    def pad(seqs: Sequence[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
        width = max(1, max(len(s) for s in seqs))
        ids = np.full((len(seqs), width), PAD, dtype=np.int64)
        mask = np.zeros((len(seqs), width), dtype=bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = True
        return ids, mask

    src, src_mask = pad([p[0] for p in pairs])
    tgt, tgt_mask = pad([p[1] for p in pairs])
    return Batch(src, src_mask, tgt, tgt_mask)


def batches(dataset: ClickLogDataset, batch_size: int, shuffle_seed: int) -> Iterator[Batch]:
    """One epoch of (query -> title) batches in a seeded permutation order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(shuffle_seed)
    order = rng.permutation(len(dataset.pairs))
    for start in range(0, len(order), batch_size):
        chunk = [dataset.pairs[i] for i in order[start : start + batch_size]]
        yield pad_batch([(p.query, p.title) for p in chunk])
