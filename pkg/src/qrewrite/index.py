"""Toy inverted index plus boolean syntax trees with a multi-query merge.

A query retrieves conjunctively (all of its distinct tokens). Merging several
queries factors their common tokens into one top-level AND and disjoins the
per-query residues, with the contract that evaluation equals the exact union
of the per-query retrievals. Factoring is what keeps the merged tree smaller
than the sum of the separate trees.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence, Union

from .textcore import TokenSeq, Vocabulary, encode


@dataclass(frozen=True)
class Token:
    token_id: int


@dataclass(frozen=True)
class And:
    children: tuple["SyntaxTree", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("And requires at least 2 children")
        if any(isinstance(c, And) for c in self.children):
            raise ValueError("And directly under And; flatten first")


@dataclass(frozen=True)
class Or:
    children: tuple["SyntaxTree", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("Or requires at least 2 children")
        if any(isinstance(c, Or) for c in self.children):
            raise ValueError("Or directly under Or; flatten first")


SyntaxTree = Union[Token, And, Or]


@dataclass(frozen=True)
class Document:
    doc_id: int
    tokens: TokenSeq


@dataclass
class InvertedIndex:
    postings: dict[int, list[int]]


def build_index(docs: Sequence[Document]) -> InvertedIndex:
    """Sorted complete posting lists; duplicate doc ids are rejected."""
    seen: set[int] = set()
    postings: dict[int, set[int]] = {}
    for doc in docs:
        if doc.doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc.doc_id}")
        seen.add(doc.doc_id)
        for tok in doc.tokens:
            postings.setdefault(tok, set()).add(doc.doc_id)
    return InvertedIndex({tok: sorted(ids) for tok, ids in postings.items()})


def load_corpus(path: str, vocab: Vocabulary) -> list[Document]:
    """Read a `doc_id<TAB>title` TSV."""
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns")
            try:
                doc_id = int(cols[0])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: doc_id is not an integer") from None
            docs.append(Document(doc_id, encode(cols[1], vocab)))
    return docs


def _distinct(query: TokenSeq) -> list[int]:
    seen: set[int] = set()
    out: list[int] = []
    for tok in query:
        if tok not in seen:
            seen.add(tok)
            out.append(tok)
    return out


def _conjunction(tokens: Sequence[int]) -> SyntaxTree:
    if len(tokens) == 1:
        return Token(tokens[0])
    return And(tuple(Token(t) for t in tokens))


def parse_query(query: TokenSeq) -> SyntaxTree:
    """AND over the query's distinct tokens (conjunctive retrieval semantics)."""
    if not query:
        raise ValueError("empty query")
    return _conjunction(_distinct(query))


def merge_trees(queries: Sequence[TokenSeq]) -> SyntaxTree:
    """One tree retrieving exactly the union of the per-query retrievals.

    A query whose token set contains another query's set retrieves a subset
    of it and is absorbed first. The intersection of the surviving token sets
    becomes a top-level AND; per-query leftovers become an OR of residue
    groups.
    """
    if not queries:
        raise ValueError("no queries to merge")
    if any(not q for q in queries):
        raise ValueError("empty query")
    if len(queries) == 1:
        return parse_query(queries[0])
    token_sets = [set(q) for q in queries]
    minimal: list[set[int]] = []
    for s in token_sets:
        if any(other < s for other in token_sets):
            continue
        if s not in minimal:
            minimal.append(s)
    if len(minimal) == 1:
        return _conjunction(sorted(minimal[0]))

    common_set = set.intersection(*minimal)
    common = sorted(common_set)
    # Sorted residues make set-equal leftovers collapse into one group; none
    # can be empty once supersets are absorbed.
    groups: list[SyntaxTree] = []
    seen_groups: set[tuple[int, ...]] = set()
    for s in minimal:
        residue = tuple(sorted(s - common_set))
        if residue in seen_groups:
            continue
        seen_groups.add(residue)
        groups.append(_conjunction(residue))
    alternation = groups[0] if len(groups) == 1 else Or(tuple(groups))

    if not common:
        return alternation
    return And(tuple(Token(t) for t in common) + (alternation,))


def _intersect(a: list[int], b: list[int]) -> list[int]:
    out: list[int] = []
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            out.append(a[i])
            i += 1
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return out


def _union(lists: list[list[int]]) -> list[int]:
    out: list[int] = []
    for doc_id in heapq.merge(*lists):
        if not out or doc_id != out[-1]:
            out.append(doc_id)
    return out


def evaluate(tree: SyntaxTree, index: InvertedIndex) -> list[int]:
    """Ascending doc ids matching the tree; unknown tokens have empty postings."""
    if isinstance(tree, Token):
        return list(index.postings.get(tree.token_id, []))
    child_results = [evaluate(c, index) for c in tree.children]
    if isinstance(tree, And):
        child_results.sort(key=len)
        acc = child_results[0]
        for rest in child_results[1:]:
            if not acc:
                break
            acc = _intersect(acc, rest)
        return acc
    return _union(child_results)


def node_count(tree: SyntaxTree) -> int:
    if isinstance(tree, Token):
        return 1
    return 1 + sum(node_count(c) for c in tree.children)
