"""Word-level tokenizer with a corpus-built vocabulary and reserved specials.

Ids 0..14 are reserved: pad, bos, eos, unk, mask, sep, the vertical bar, and
one type token per block type. Id 15 is always the "<type>" placeholder used
by the type-token ablation; corpus tokens start at 16.
"""

from __future__ import annotations

import re
from collections import Counter
from collections.abc import Iterable, Sequence

from .errors import InvalidTokenId
from .forms import BlockType

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
MASK_ID = 4
SEP_ID = 5
BAR_ID = 6
TYPE_ID_BASE = 7  # TYPE id for block type t is TYPE_ID_BASE + int(t)
NUM_SPECIALS = 15
TYPE_PLACEHOLDER_ID = 15
FIRST_CORPUS_ID = 16

SPECIAL_SURFACES = (
    "<pad>",
    "<s>",
    "</s>",
    "<unk>",
    "<mask>",
    "<sep>",
    "|",
    "<textfield>",
    "<choice>",
    "<time>",
    "<date>",
    "<likert>",
    "<rating>",
    "<upload>",
    "<description>",
)

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


def word_tokens(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


def type_token_id(block_type: BlockType) -> int:
    return TYPE_ID_BASE + int(block_type)


class Vocab:
    """Bijective token <-> id table with a fixed reserved prefix."""

    def __init__(self, corpus_tokens: Sequence[str]):
        self._id_to_token = list(SPECIAL_SURFACES) + ["<type>"] + list(corpus_tokens)
        self._token_to_id = {tok: i for i, tok in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._id_to_token):
            raise InvalidTokenId(f"id {token_id} outside vocabulary of size {len(self._id_to_token)}")
        return self._id_to_token[token_id]

    def encode(self, text: str) -> list[int]:
        """Token ids for a text; out-of-vocabulary words become unk."""
        return [self._token_to_id.get(tok, UNK_ID) for tok in word_tokens(text)]

    def decode(self, ids: Iterable[int]) -> str:
        """Surface string, tokens rejoined with single spaces."""
        return " ".join(self.token_of(i) for i in ids)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self._id_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        prefix = tuple(tokens[:NUM_SPECIALS])
        if prefix != SPECIAL_SURFACES or len(tokens) < FIRST_CORPUS_ID or tokens[NUM_SPECIALS] != "<type>":
            raise ValueError(f"{path}: not a formseq vocabulary file")
        return cls(tokens[FIRST_CORPUS_ID:])


def build_vocab(texts: Iterable[str], min_frequency: int = 2, max_size: int = 16384) -> Vocab:
    """Build a vocabulary from raw texts.

    Keeps tokens with frequency >= min_frequency, up to max_size corpus
    tokens by descending frequency with lexicographic tie-breaking.
    """
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(word_tokens(text))
    reserved = set(SPECIAL_SURFACES) | {"<type>"}
    candidates = [
        (token, count)
        for token, count in counts.items()
        if count >= min_frequency and token not in reserved
    ]
    candidates.sort(key=lambda tc: (-tc[1], tc[0]))
    return Vocab([token for token, _ in candidates[:max_size]])
