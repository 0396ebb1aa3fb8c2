"""Teacher rank file ingestion, post-processing, and synthesis.

This module owns the two interchange formats:

RKGT v1 (binary, little-endian)
    header: magic "RKGT" | u32 version=1 | u64 T | u16 k_max | u32 vocab_size
            | u8 flags (bit0 = logits block present)
    body:   L as T x u16
            R as T x k_max x u32, row-major, pad 0xFFFFFFFF beyond L[t]
            O as T x k_max x u16, 0 beyond L[t]
            F as T x k_max x f32 (only when flags bit0 is set)

JSON-lines (debug/interchange)
    first line: header object {"format", "version", "T", "k_max",
    "vocab_size", optional "meta"}; then one object per position:
    {"t": int, "ranks": [token strings], "groups": [ints], "logits": [floats]?}
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .corpus import TokenStream, Vocabulary
from .errors import AlignmentError, RankFormatError, RanklmError
from .rankgen import PAD_ID, RankGroundTruth

MAGIC = b"RKGT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQHIB")

# PRNG identity recorded for random-teacher reproducibility.
RANDOM_TEACHER_PRNG = "numpy.random.PCG64"


def write_ranks(ranks: RankGroundTruth, path: str | Path) -> None:
    ranks.validate()
    flags = 1 if ranks.logits is not None else 0
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, ranks.T, ranks.k_max, ranks.vocab_size, flags
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ranks.lengths, dtype="<u2").tobytes())
        fh.write(np.ascontiguousarray(ranks.ranks, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(ranks.groups, dtype="<u2").tobytes())
        if flags:
            fh.write(np.ascontiguousarray(ranks.logits, dtype="<f4").tobytes())


def read_ranks(path: str | Path) -> RankGroundTruth:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise RankFormatError(f"{path}: truncated header")
    magic, version, T, k_max, vocab_size, flags = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise RankFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise RankFormatError(f"{path}: unsupported version {version}")
    if T < 1 or k_max < 1:
        raise RankFormatError(f"{path}: empty rank matrix")

    off = _HEADER.size
    want = T * 2 + T * k_max * 4 + T * k_max * 2 + (T * k_max * 4 if flags & 1 else 0)
    if len(blob) - off != want:
        raise RankFormatError(f"{path}: body has {len(blob) - off} bytes, expected {want}")

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    lengths = take("<u2", T).copy()
    ranks = take("<u4", T * k_max).reshape(T, k_max).copy()
    groups = take("<u2", T * k_max).reshape(T, k_max).copy()
    logits = take("<f4", T * k_max).reshape(T, k_max).copy() if flags & 1 else None

    out = RankGroundTruth(
        ranks=ranks, lengths=lengths, groups=groups, vocab_size=vocab_size, logits=logits
    )
    try:
        out.validate()
    except AlignmentError as exc:
        raise RankFormatError(f"{path}: {exc}") from exc
    return out


def write_ranks_jsonl(
    ranks: RankGroundTruth,
    vocab: Vocabulary,
    path: str | Path,
    meta: dict | None = None,
) -> None:
    header = {
        "format": "rkgt-jsonl",
        "version": FORMAT_VERSION,
        "T": ranks.T,
        "k_max": ranks.k_max,
        "vocab_size": ranks.vocab_size,
    }
    if meta:
        header["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in range(ranks.T):
            row_ids, row_groups, row_logits = ranks.row(t)
            obj: dict = {
                "t": t,
                "ranks": [vocab.tokens[int(i)] for i in row_ids],
                "groups": [int(g) for g in row_groups],
            }
            if row_logits is not None:
                obj["logits"] = [float(x) for x in row_logits]
            fh.write(json.dumps(obj) + "\n")


def read_ranks_jsonl(path: str | Path, vocab: Vocabulary) -> RankGroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "rkgt-jsonl":
            raise RankFormatError(f"{path}: not a rkgt-jsonl file")
        T, k_max = header["T"], header["k_max"]
        out = RankGroundTruth(
            ranks=np.full((T, k_max), PAD_ID, dtype=np.uint32),
            lengths=np.ones(T, dtype=np.uint16),
            groups=np.zeros((T, k_max), dtype=np.uint16),
            vocab_size=header["vocab_size"],
        )
        has_logits = None
        for line in fh:
            obj = json.loads(line)
            t = obj["t"]
            ids = [vocab.id_of[tok] for tok in obj["ranks"]]
            n = len(ids)
            out.ranks[t, :n] = ids
            out.groups[t, :n] = obj["groups"]
            out.lengths[t] = n
            if "logits" in obj:
                if has_logits is None:
                    has_logits = np.zeros((T, k_max), dtype=np.float32)
                has_logits[t, :n] = obj["logits"]
        out.logits = has_logits
    out.validate()
    return out


def is_strongly_ordered(ranks: RankGroundTruth) -> bool:
    cols = np.arange(ranks.k_max, dtype=np.int64)
    live = cols[None, :] < ranks.lengths.astype(np.int64)[:, None]
    return bool((ranks.groups.astype(np.int64)[live] == np.broadcast_to(cols, ranks.groups.shape)[live]).all())


def float_gt_to_top(teacher: RankGroundTruth, stream: TokenStream) -> RankGroundTruth:
    """Post-process teacher ranks so the corpus ground-truth sits at rank 0.

    A GT found at rank j moves to rank 0 and ranks 0..j-1 shift down one,
    logits travelling with their tokens.  A GT absent from the row is
    inserted at rank 0 with the row-maximum logit; the row grows by one if
    it has room, otherwise the last entry is dropped.
    """
    if teacher.T != len(stream):
        raise AlignmentError(f"teacher T={teacher.T} but stream T={len(stream)}")
    if teacher.logits is None:
        raise RankFormatError("GT floating needs a teacher logits block")
    if not is_strongly_ordered(teacher):
        raise RankFormatError("teacher rows must be strongly ordered")

    ranks = teacher.ranks.copy()
    lengths = teacher.lengths.copy()
    logits = teacher.logits.copy()
    k_max = teacher.k_max
    for t in range(teacher.T):
        gt = int(stream.ids[t])
        n = int(lengths[t])
        row = ranks[t, :n]
        hits = np.nonzero(row == gt)[0]
        if hits.size and hits[0] == 0:
            continue
        if hits.size:
            j = int(hits[0])
            gt_logit = logits[t, j]
            ranks[t, 1 : j + 1] = ranks[t, :j].copy()
            logits[t, 1 : j + 1] = logits[t, :j].copy()
            logits[t, 0] = gt_logit
        else:
            top = float(logits[t, :n].max())
            keep = min(n, k_max - 1)
            ranks[t, 1 : keep + 1] = ranks[t, :keep].copy()
            logits[t, 1 : keep + 1] = logits[t, :keep].copy()
            if n < k_max:
                lengths[t] = n + 1
            logits[t, 0] = top
        ranks[t, 0] = gt

    # output rows remain strongly ordered; rebuild groups so grown rows
    # carry a valid group index in their new last slot
    groups = np.tile(np.arange(k_max, dtype=np.uint16), (teacher.T, 1))
    groups[np.arange(k_max)[None, :] >= lengths.astype(np.int64)[:, None]] = 0
    out = RankGroundTruth(
        ranks=ranks,
        lengths=lengths,
        groups=groups,
        vocab_size=teacher.vocab_size,
        logits=logits,
    )
    out.validate(stream)
    return out


def random_teacher(
    stream: TokenStream, k: int, vocab_size: int, seed: int
) -> RankGroundTruth:
    """Ablation teacher: rank 0 is the GT, ranks 1..k-1 are distinct uniform
    draws from V minus the GT (PCG64-seeded, reproducible)."""
    if k > vocab_size:
        raise RanklmError(f"k={k} exceeds vocab size {vocab_size}")
    if k < 1:
        raise RanklmError("k must be >= 1")
    T = len(stream)
    rng = np.random.Generator(np.random.PCG64(seed))
    ranks = np.full((T, k), PAD_ID, dtype=np.uint32)
    ranks[:, 0] = stream.ids
    for t in range(T):
        gt = int(stream.ids[t])
        draw = rng.choice(vocab_size - 1, size=k - 1, replace=False)
        draw = draw + (draw >= gt)
        ranks[t, 1:] = draw
    groups = np.tile(np.arange(k, dtype=np.uint16), (T, 1))
    return RankGroundTruth(
        ranks=ranks,
        lengths=np.full(T, k, dtype=np.uint16),
        groups=groups,
        vocab_size=vocab_size,
    )
