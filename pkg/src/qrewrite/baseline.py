"""Rule-based rewriter: substitute curated synonym phrases into the query."""

from __future__ import annotations

from dataclasses import dataclass, field

from .textcore import tokenize


@dataclass
class SynonymDictionary:
    """Phrase -> synonym phrases, in file order; no phrase maps to itself."""

    entries: dict[tuple[str, ...], list[tuple[str, ...]]] = field(default_factory=dict)

    def add(self, phrase: tuple[str, ...], synonym: tuple[str, ...]) -> None:
        if not phrase or not synonym:
            raise ValueError("phrases must be non-empty")
        if phrase == synonym:
            raise ValueError(f"phrase maps to itself: {' '.join(phrase)!r}")
        synonyms = self.entries.setdefault(phrase, [])
        if synonym not in synonyms:
            synonyms.append(synonym)


def load_dictionary(path: str) -> SynonymDictionary:
    """Read `phrase<TAB>synonym` rows; multi-token phrases are space-separated."""
    out = SynonymDictionary()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns")
            try:
                out.add(tuple(tokenize(cols[0])), tuple(tokenize(cols[1])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def _find_phrase(tokens: list[str], phrase: tuple[str, ...]) -> int:
    """Index of the leftmost occurrence of ``phrase`` as a contiguous run, or -1."""
    for start in range(len(tokens) - len(phrase) + 1):
        if tuple(tokens[start : start + len(phrase)]) == phrase:
            return start
    return -1


def rewrite_rule_based(query: str, dictionary: SynonymDictionary) -> list[str]:
    """One rewrite per (matched phrase, synonym), replacing a single occurrence.

    Matches replace only the leftmost occurrence of each phrase. Output is
    ordered by match position, then dictionary order, and de-duplicated.
    """
    tokens = tokenize(query)
    matches: list[tuple[int, int, tuple[str, ...]]] = []
    for order, phrase in enumerate(dictionary.entries):
        pos = _find_phrase(tokens, phrase)
        if pos >= 0:
            matches.append((pos, order, phrase))
    matches.sort(key=lambda m: (m[0], m[1]))
    out: list[str] = []
    seen: set[str] = set()
    for pos, _, phrase in matches:
        for synonym in dictionary.entries[phrase]:
            rewritten = " ".join(tokens[:pos] + list(synonym) + tokens[pos + len(phrase):])
            if rewritten not in seen:
                seen.add(rewritten)
                out.append(rewritten)
    return out
