"""Rank ground-truth construction from N-gram branching sets.

For every stream position we build a weakly ordered top-k target row: rank 0
is the corpus ground-truth, the remaining slots are filled schema by schema
with the words observed to continue the same (past, future) context elsewhere
in the stream.  Larger contexts outrank smaller ones; words inside one
(schema, context) branching set are mutually unordered and share a group
index.  Contexts whose branching set reaches the cutoff are either discarded
or capped at cutoff-1 members, depending on overflow_mode.

Construction is the two-phase multi-pass scheme: phase 1 collects one context
table per schema, phase 2 merges them into the (T, k_max) rank matrix.  Both
phases can run on worker threads; output is bit-identical to the sequential
composition because phase-1 tables are independent and phase-2 workers write
disjoint row ranges.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import TokenStream, Vocabulary
from .errors import AlignmentError, RanklmError

PAD_ID = np.uint32(0xFFFFFFFF)
ORACLE_MAX_T = 100_000

OVERFLOW_DISCARD = "discard"
OVERFLOW_CAP = "cap"


@dataclass(frozen=True)
class ContextSchema:
    """A (past, future) context window size pair, e.g. 2p-1f."""

    past: int
    future: int

    def __post_init__(self) -> None:
        if self.past < 1:
            raise RanklmError("schema needs past >= 1 (no-context orders are excluded)")
        if self.future < 0:
            raise RanklmError("schema future must be >= 0")

    def label(self) -> str:
        return f"{self.past}p-{self.future}f" if self.future else f"{self.past}p"


@dataclass(frozen=True)
class RankBuildConfig:
    schemas: tuple[ContextSchema, ...]
    cutoff_q: int = 10
    k_max: int = 10
    overflow_mode: str = OVERFLOW_DISCARD

    def __post_init__(self) -> None:
        if self.cutoff_q < 2:
            raise RanklmError("cutoff_q must be >= 2")
        if self.k_max < 1:
            raise RanklmError("k_max must be >= 1")
        if self.overflow_mode not in (OVERFLOW_DISCARD, OVERFLOW_CAP):
            raise RanklmError(f"unknown overflow_mode {self.overflow_mode!r}")
        order = [(-s.past, -s.future) for s in self.schemas]
        if order != sorted(order):
            raise RanklmError("schemas must be sorted by (past desc, future desc)")


def enumerate_schemas(max_past: int, max_future: int) -> list[ContextSchema]:
    """All (p, f) with 1 <= p <= max_past, 0 <= f <= max_future, in
    reverse-orthographic order: 5p-4f, 5p-3f, ..., 1p-1f, 1p."""
    if max_past < 1:
        raise RanklmError("max_past must be >= 1")
    if max_future < 0:
        raise RanklmError("max_future must be >= 0")
    return [
        ContextSchema(p, f)
        for p in range(max_past, 0, -1)
        for f in range(max_future, -1, -1)
    ]


class ContextTable:
    """Branching sets for one schema: context key -> insertion-ordered word
    list, capped at cutoff_q - 1 members, plus a saturation flag for contexts
    that reached cutoff_q distinct continuations."""

    def __init__(self, schema: ContextSchema, cutoff_q: int, overflow_mode: str):
        self.schema = schema
        self.cutoff_q = cutoff_q
        self.overflow_mode = overflow_mode
        self.sets: dict[tuple, list[int]] = {}
        self.overflowed: set[tuple] = set()

    def add(self, key: tuple, word: int) -> None:
        members = self.sets.get(key)
        if members is None:
            members = []
            self.sets[key] = members
        if word in members:
            return
        if len(members) < self.cutoff_q - 1:
            members.append(word)
        else:
            self.overflowed.add(key)

    def lookup(self, key: tuple) -> list[int] | None:
        """Merge-phase view: saturated contexts contribute nothing in
        discard mode, their first cutoff_q - 1 words in cap mode."""
        if self.overflow_mode == OVERFLOW_DISCARD and key in self.overflowed:
            return None
        return self.sets.get(key)


def _context_key(ids: np.ndarray, t: int, schema: ContextSchema) -> tuple | None:
    if t - schema.past < 0 or t + schema.future >= len(ids):
        return None
    past = tuple(int(x) for x in ids[t - schema.past : t])
    future = tuple(int(x) for x in ids[t + 1 : t + 1 + schema.future])
    return (past, future)


def collect_orders(
    stream: TokenStream,
    schema: ContextSchema,
    cutoff_q: int,
    overflow_mode: str = OVERFLOW_DISCARD,
) -> ContextTable:
    """Phase 1: one scan of the stream for one schema.  Positions whose
    window crosses a stream boundary contribute nothing."""
    table = ContextTable(schema, cutoff_q, overflow_mode)
    ids = stream.ids
    for t in range(schema.past, len(ids) - schema.future):
        key = _context_key(ids, t, schema)
        table.add(key, int(ids[t]))
    return table


@dataclass
class RankGroundTruth:
    """Per-position top-k rank targets.

    ranks[t][0] is always the corpus ground-truth; lengths[t] live slots per
    row; groups[t][i] indexes the first row slot filled from the same
    (schema, context) branching set; logits carries teacher scores when a
    neural/external teacher produced the file.
    """

    ranks: np.ndarray                 # (T, k_max) uint32, PAD_ID beyond lengths
    lengths: np.ndarray               # (T,) uint16
    groups: np.ndarray                # (T, k_max) uint16, 0 beyond lengths
    vocab_size: int
    logits: np.ndarray | None = None  # (T, k_max) float32

    @property
    def T(self) -> int:
        return self.ranks.shape[0]

    @property
    def k_max(self) -> int:
        return self.ranks.shape[1]

    def row(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        n = int(self.lengths[t])
        logit_row = None if self.logits is None else self.logits[t, :n]
        return self.ranks[t, :n], self.groups[t, :n], logit_row

    def validate(self, stream: TokenStream | None = None) -> None:
        T, k_max = self.ranks.shape
        if self.lengths.shape != (T,) or self.groups.shape != (T, k_max):
            raise AlignmentError("rank arrays have inconsistent shapes")
        if self.logits is not None and self.logits.shape != (T, k_max):
            raise AlignmentError("logits block has inconsistent shape")
        lens = self.lengths.astype(np.int64)
        if lens.min(initial=1) < 1 or lens.max(initial=1) > k_max:
            raise AlignmentError("row lengths must satisfy 1 <= L[t] <= k_max")
        cols = np.arange(k_max)
        live = cols[None, :] < lens[:, None]
        if (self.ranks[live] >= self.vocab_size).any():
            raise AlignmentError("rank id >= vocab_size")
        if (self.ranks[~live] != PAD_ID).any():
            raise AlignmentError("dead rank slots must hold the pad id")
        srt = np.sort(self.ranks, axis=1)
        if ((srt[:, 1:] == srt[:, :-1]) & (srt[:, 1:] != PAD_ID)).any():
            raise AlignmentError("duplicate ids within a rank row")
        grp = self.groups.astype(np.int64)
        if (grp[live] > np.broadcast_to(cols, grp.shape)[live]).any():
            raise AlignmentError("group start exceeds its slot index")
        if stream is not None:
            if T != len(stream):
                raise AlignmentError(f"ranks T={T} but stream T={len(stream)}")
            if (self.ranks[:, 0] != stream.ids).any():
                raise AlignmentError("rank 0 must hold the stream ground-truth")


def _alloc_ranks(T: int, k_max: int, vocab_size: int) -> RankGroundTruth:
    return RankGroundTruth(
        ranks=np.full((T, k_max), PAD_ID, dtype=np.uint32),
        lengths=np.ones(T, dtype=np.uint16),
        groups=np.zeros((T, k_max), dtype=np.uint16),
        vocab_size=vocab_size,
    )


def _merge_rows(
    ids: np.ndarray,
    tables: Sequence[ContextTable],
    out: RankGroundTruth,
    t_lo: int,
    t_hi: int,
) -> None:
    k_max = out.k_max
    ranks, lengths, groups = out.ranks, out.lengths, out.groups
    for t in range(t_lo, t_hi):
        row = [int(ids[t])]
        row_groups = [0]
        for table in tables:
            if len(row) >= k_max:
                break
            key = _context_key(ids, t, table.schema)
            if key is None:
                continue
            members = table.lookup(key)
            if not members:
                continue
            group_start = -1
            for word in members:
                if word in row:
                    continue
                if len(row) >= k_max:
                    break
                if group_start < 0:
                    group_start = len(row)
                row_groups.append(group_start)
                row.append(word)
        n = len(row)
        ranks[t, :n] = row
        groups[t, :n] = row_groups
        lengths[t] = n


def merge_orders(
    stream: TokenStream,
    tables: Sequence[ContextTable],
    k_max: int,
    jobs: int = 1,
) -> RankGroundTruth:
    """Phase 2: rank 0 = GT, then append each schema's branching set words
    in schema order, skipping duplicates, truncating at k_max."""
    out = _alloc_ranks(len(stream), k_max, stream.vocab_size)
    ids = stream.ids
    if jobs <= 1 or len(stream) < 2 * jobs:
        _merge_rows(ids, tables, out, 0, len(stream))
        return out
    bounds = np.linspace(0, len(stream), jobs + 1, dtype=int)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_merge_rows, ids, tables, out, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        for fut in futures:
            fut.result()
    return out


def build_ranks(stream: TokenStream, config: RankBuildConfig, jobs: int = 1) -> RankGroundTruth:
    """collect_orders per schema, then merge_orders; jobs > 1 fans phase 1
    out per schema and phase 2 over row partitions."""
    if jobs <= 1:
        tables = [
            collect_orders(stream, s, config.cutoff_q, config.overflow_mode)
            for s in config.schemas
        ]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            tables = list(
                pool.map(
                    lambda s: collect_orders(stream, s, config.cutoff_q, config.overflow_mode),
                    config.schemas,
                )
            )
    return merge_orders(stream, tables, config.k_max, jobs=jobs)


def brute_force_ranks(stream: TokenStream, config: RankBuildConfig) -> RankGroundTruth:
    """Equivalence oracle: one pass, one monolithic dictionary, then a
    definitional per-position merge.  Independent of the multi-pass path."""
    if len(stream) > ORACLE_MAX_T:
        raise RanklmError(f"stream too large for oracle mode (T > {ORACLE_MAX_T})")
    ids = stream.ids
    T = len(ids)
    discard = config.overflow_mode == OVERFLOW_DISCARD
    cap = config.cutoff_q - 1

    sets: dict[tuple, dict[int, None]] = {}
    saturated: set[tuple] = set()
    for t in range(T):
        for si, schema in enumerate(config.schemas):
            if t < schema.past or t + schema.future >= T:
                continue
            key = (
                si,
                tuple(int(x) for x in ids[t - schema.past : t]),
                tuple(int(x) for x in ids[t + 1 : t + 1 + schema.future]),
            )
            bag = sets.setdefault(key, {})
            w = int(ids[t])
            if w not in bag:
                if len(bag) < cap:
                    bag[w] = None
                else:
                    saturated.add(key)

    out = _alloc_ranks(T, config.k_max, stream.vocab_size)
    for t in range(T):
        row = [int(ids[t])]
        row_groups = [0]
        for si, schema in enumerate(config.schemas):
            if t < schema.past or t + schema.future >= T or len(row) >= config.k_max:
                continue
            key = (
                si,
                tuple(int(x) for x in ids[t - schema.past : t]),
                tuple(int(x) for x in ids[t + 1 : t + 1 + schema.future]),
            )
            if discard and key in saturated:
                continue
            start = -1
            for w in sets.get(key, {}):
                if w in row or len(row) >= config.k_max:
                    continue
                if start < 0:
                    start = len(row)
                row_groups.append(start)
                row.append(w)
        out.ranks[t, : len(row)] = row
        out.groups[t, : len(row)] = row_groups
        out.lengths[t] = len(row)
    return out


def render_branching_set(
    ranks: RankGroundTruth,
    vocab: Vocabulary,
    position: int,
    context_width: int = 1,
    cell_width: int = 12,
) -> str:
    """Column-per-position grid: header row is the ground-truth text, each
    column lists that position's rank members with a '|' marking each new
    weak-order group.  Over-long words are cut and marked with '-'."""
    if position < 0 or position >= ranks.T:
        raise RanklmError(f"position {position} out of range for T={ranks.T}")
    t_lo = position
    t_hi = min(ranks.T, position + max(1, context_width))

    def clip(token: str) -> str:
        return token if len(token) <= cell_width else token[: cell_width - 1] + "-"

    columns: list[list[str]] = []
    for t in range(t_lo, t_hi):
        row_ids, row_groups, _ = ranks.row(t)
        col = [clip(vocab.tokens[int(row_ids[0])])]
        for i in range(1, len(row_ids)):
            mark = "|" if int(row_groups[i]) == i else " "
            col.append(mark + clip(vocab.tokens[int(row_ids[i])]))
        columns.append(col)

    height = max(len(c) for c in columns)
    width = max(cell_width + 1, max(len(x) for c in columns for x in c))
    lines = []
    header = "  ".join(f"t={t}".ljust(width) for t in range(t_lo, t_hi))
    lines.append(header)
    lines.append("  ".join(columns[i][0].ljust(width) for i in range(len(columns))))
    lines.append("  ".join("-" * width for _ in columns))
    for r in range(1, height):
        cells = [
            (columns[i][r] if r < len(columns[i]) else "").ljust(width)
            for i in range(len(columns))
        ]
        lines.append("  ".join(cells))
    return "\n".join(lines)
