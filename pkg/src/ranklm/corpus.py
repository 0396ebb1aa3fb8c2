"""Corpus loading: whitespace tokens, newline = sentence boundary.

A corpus file is UTF-8 text where tokens are separated by whitespace and
every newline contributes one end-of-sentence token.  The vocabulary is
frequency-ordered (count descending, ties broken byte-lexicographically)
so builds are reproducible across platforms.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import CorpusError

EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
DEFAULT_SPECIALS = (EOS_TOKEN, UNK_TOKEN)


@dataclass(frozen=True)
class Vocabulary:
    """Dense token<->id mapping, ids ordered by (count desc, token asc)."""

    tokens: tuple[str, ...]
    id_of: dict[str, int] = field(repr=False)
    unk_id: int | None
    eos_id: int | None

    @property
    def size(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocabulary":
        if len(set(tokens)) != len(tokens):
            raise CorpusError("vocabulary tokens are not unique")
        id_of = {tok: i for i, tok in enumerate(tokens)}
        return cls(
            tokens=tuple(tokens),
            id_of=id_of,
            unk_id=id_of.get(UNK_TOKEN),
            eos_id=id_of.get(EOS_TOKEN),
        )

    def lookup(self, token: str) -> int:
        idx = self.id_of.get(token)
        if idx is None:
            if self.unk_id is None:
                raise CorpusError(f"unknown token {token!r} and no {UNK_TOKEN} in vocabulary")
            return self.unk_id
        return idx

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"cannot read vocab file {path}: {exc}") from exc
        tokens = text.splitlines()
        if not tokens:
            raise CorpusError(f"empty vocab file {path}")
        return cls.from_tokens(tokens)


@dataclass(frozen=True)
class TokenStream:
    """The corpus as one contiguous sequence of token ids."""

    ids: np.ndarray  # uint32, shape (T,)
    vocab_size: int

    def __post_init__(self) -> None:
        if self.ids.ndim != 1 or len(self.ids) < 1:
            raise CorpusError("token stream must be a non-empty 1-d id array")
        if self.ids.max(initial=0) >= self.vocab_size:
            raise CorpusError("token id out of range for vocab_size")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seq_len: int
    drop_remainder: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.seq_len < 1:
            raise CorpusError("batch_size and seq_len must be >= 1")


@dataclass(frozen=True)
class Batch:
    """Aligned input ids, next-token target ids, and the targets' absolute
    stream positions (used to gather rank ground-truth rows)."""

    inputs: np.ndarray       # (batch_size, width) uint32
    targets: np.ndarray      # (batch_size, width) uint32
    target_pos: np.ndarray   # (batch_size, width) int64, absolute stream indices


def _iter_file_tokens(text_path: str | Path) -> Iterator[str]:
    try:
        handle = open(text_path, "r", encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {text_path}: {exc}") from exc
    with handle:
        for line in handle:
            yield from line.split()
            if line.endswith("\n"):
                yield EOS_TOKEN


def build_vocab(
    text_path: str | Path,
    min_count: int = 1,
    specials: tuple[str, ...] = DEFAULT_SPECIALS,
) -> Vocabulary:
    """Count tokens (newlines count as <eos>) and build the id ordering.

    Tokens with count >= min_count are kept; specials are always kept and
    sit at the position their own count dictates.
    """
    counts = collections.Counter(_iter_file_tokens(text_path))
    if not counts:
        raise CorpusError(f"empty corpus: {text_path}")
    keep = {tok for tok, c in counts.items() if c >= min_count}
    keep.update(specials)
    ordered = sorted(keep, key=lambda tok: (-counts[tok], tok.encode("utf-8")))
    return Vocabulary.from_tokens(ordered)


def load_corpus(text_path: str | Path, vocab: Vocabulary) -> TokenStream:
    """Tokenize a file against a fixed vocabulary; unknowns map to <unk>."""
    ids = [vocab.lookup(tok) for tok in _iter_file_tokens(text_path)]
    if not ids:
        raise CorpusError(f"empty corpus: {text_path}")
    return TokenStream(ids=np.asarray(ids, dtype=np.uint32), vocab_size=vocab.size)


def detokenize(stream: TokenStream, vocab: Vocabulary) -> str:
    """Inverse of load_corpus for streams without <unk> substitutions."""
    lines: list[list[str]] = [[]]
    for idx in stream.ids:
        if vocab.eos_id is not None and int(idx) == vocab.eos_id:
            lines.append([])
        else:
            lines[-1].append(vocab.tokens[int(idx)])
    return "\n".join(" ".join(line) for line in lines)


def batchify(stream: TokenStream, plan: BatchPlan) -> list[Batch]:
    """Split the stream into batch_size contiguous lanes and step seq_len
    windows along them.  Target positions are absolute stream indices.
    """
    lane_len = len(stream) // plan.batch_size
    if lane_len < 2:
        raise CorpusError(
            f"stream too short: T={len(stream)} cannot fill {plan.batch_size} lanes"
        )
    lane_starts = np.arange(plan.batch_size, dtype=np.int64) * lane_len
    batches: list[Batch] = []
    for off in range(0, lane_len - 1, plan.seq_len):
        width = min(plan.seq_len, lane_len - 1 - off)
        if width < plan.seq_len and plan.drop_remainder:
            break
        cols = np.arange(off, off + width, dtype=np.int64)
        in_pos = lane_starts[:, None] + cols[None, :]
        batches.append(
            Batch(
                inputs=stream.ids[in_pos],
                targets=stream.ids[in_pos + 1],
                target_pos=in_pos + 1,
            )
        )
    return batches
