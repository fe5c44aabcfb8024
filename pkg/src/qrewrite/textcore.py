"""Vocabulary construction and reversible whitespace tokenization.

Token ids are shared by both translation directions. Ids 0..3 are reserved
for the special tokens PAD, BOS, EOS, UNK in that order; real tokens start
at id 4, ranked by corpus frequency (ties broken lexicographically).
"""

from __future__ import annotations

import hashlib
from collections import Counter
from typing import Iterable, Sequence

PAD = 0
BOS = 1
EOS = 2
UNK = 3

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
NUM_SPECIALS = len(SPECIAL_TOKENS)

# A token sequence is a tuple of vocabulary ids without BOS/EOS; the model
# layer adds those around the sequence where needed.
TokenSeq = tuple[int, ...]


def tokenize(text: str) -> list[str]:
    """Whitespace-split, case-folded surface tokens."""
    return text.casefold().split()


class Vocabulary:
    """Bijection between surface tokens and integer ids, specials fixed at 0..3."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {
            tok: i for i, tok in enumerate(self.id_to_token)
        }
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_token):
            raise ValueError(f"token id {token_id} out of range for vocabulary of size {len(self)}")
        return self.id_to_token[token_id]

    def content_hash(self) -> str:
        """SHA-256 over the non-special token list; used to pin checkpoints to a vocabulary."""
        blob = "\n".join(self.id_to_token[NUM_SPECIALS:]).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def build_vocab(corpus: Iterable[str], max_size: int, min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary from text lines.

    Tokens are ranked by descending frequency, ties broken lexicographically,
    truncated to ``max_size`` (which includes the four specials). Tokens seen
    fewer than ``min_freq`` times are dropped. An empty corpus yields a
    specials-only vocabulary.
    """
    if max_size < NUM_SPECIALS:
        raise ValueError(f"max_size must be at least {NUM_SPECIALS}, got {max_size}")
    if min_freq < 1:
        raise ValueError(f"min_freq must be at least 1, got {min_freq}")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(tokenize(line))
    ranked = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(ranked[: max_size - NUM_SPECIALS])


def encode(text: str, vocab: Vocabulary) -> TokenSeq:
    """Map text to token ids; out-of-vocabulary tokens become UNK."""
    return tuple(vocab.id_of(tok) for tok in tokenize(text))


def decode_text(seq: Sequence[int], vocab: Vocabulary) -> str:
    """Space-join the surface forms of ``seq``; specials render as their markers."""
    return " ".join(vocab.token_of(i) for i in seq)


def save_vocab(vocab: Vocabulary, path: str) -> None:
    """Write one non-special token per line; line number equals id - 4."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.id_to_token[NUM_SPECIALS:]:
            fh.write(tok + "\n")


def load_vocab(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    return Vocabulary(tokens)
