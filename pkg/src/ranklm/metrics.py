"""Perplexity, top-k accuracy, and rank/frequency statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import BatchPlan, TokenStream
from .errors import AlignmentError, RanklmError
from .rankgen import RankGroundTruth
from .student import StudentParams, forward_batch


@dataclass(frozen=True)
class PerplexityResult:
    ppl: float
    mean_ce: float
    n_scored: int
    n_skipped: int

    def __float__(self) -> float:
        return self.ppl


def _scorable_positions(params: StudentParams, stream: TokenStream) -> np.ndarray:
    ctx = params.config.context_len
    return np.arange(ctx, len(stream), dtype=np.int64)


def _context_matrix(stream: TokenStream, positions: np.ndarray, ctx: int) -> np.ndarray:
    offsets = np.arange(-ctx, 0, dtype=np.int64)
    return stream.ids[positions[:, None] + offsets[None, :]].astype(np.int64)


def perplexity(
    params: StudentParams, stream: TokenStream, plan: BatchPlan | None = None
) -> PerplexityResult:
    """exp(mean CE) over every position with a full context window.
    Positions 0..context_len-1 are skipped and counted."""
    positions = _scorable_positions(params, stream)
    if positions.size == 0:
        raise RanklmError("no scorable positions: stream shorter than context")
    chunk = (plan.batch_size * plan.seq_len) if plan is not None else 4096
    ctx = params.config.context_len
    total = np.float64(0.0)
    for lo in range(0, positions.size, chunk):
        pos = positions[lo : lo + chunk]
        logits, _ = forward_batch(params, _context_matrix(stream, pos, ctx))
        logits = logits.astype(np.float64)
        m = logits.max(axis=1)
        lse = np.log(np.exp(logits - m[:, None]).sum(axis=1)) + m
        gt = stream.ids[pos].astype(np.int64)
        total += (lse - logits[np.arange(len(pos)), gt]).sum()
    mean_ce = float(total / positions.size)
    return PerplexityResult(
        ppl=float(np.exp(mean_ce)),
        mean_ce=mean_ce,
        n_scored=int(positions.size),
        n_skipped=ctx,
    )


def topk_accuracy(
    params: StudentParams, stream: TokenStream, ks: list[int]
) -> dict[int, float]:
    """Fraction of scorable positions whose GT falls in the k highest logits;
    logit ties resolve in favour of the lower id."""
    if ks != sorted(ks):
        raise RanklmError("ks must be sorted ascending")
    if ks and ks[-1] > params.config.vocab_size:
        raise RanklmError("k exceeds vocabulary size")
    positions = _scorable_positions(params, stream)
    if positions.size == 0:
        raise RanklmError("no scorable positions: stream shorter than context")
    ctx = params.config.context_len
    hits = {k: 0 for k in ks}
    for lo in range(0, positions.size, 4096):
        pos = positions[lo : lo + 4096]
        logits, _ = forward_batch(params, _context_matrix(stream, pos, ctx))
        gt = stream.ids[pos].astype(np.int64)
        gt_logit = logits[np.arange(len(pos)), gt]
        stronger = (logits > gt_logit[:, None]).sum(axis=1)
        tied_lower = (
            (logits == gt_logit[:, None])
            & (np.arange(logits.shape[1])[None, :] < gt[:, None])
        ).sum(axis=1)
        gt_rank = stronger + tied_lower  # 0-based rank of the GT
        for k in ks:
            hits[k] += int((gt_rank < k).sum())
    return {k: hits[k] / positions.size for k in ks}


def rank_frequency_stats(
    ranks: RankGroundTruth, stream: TokenStream, n_bins: int = 20
) -> list[tuple[int, float, float, float]]:
    """Rows (word_rank, gt_freq, topk_freq, bin_avg), one per vocab id,
    ordered by GT frequency: the GT frequency-rank curve, the 1/k-scaled
    top-k occurrence frequency per word type, and binned averages of it."""
    if ranks.T != len(stream):
        raise AlignmentError(f"ranks T={ranks.T} != stream T={len(stream)}")
    if n_bins < 1:
        raise RanklmError("n_bins must be >= 1")
    V = ranks.vocab_size
    gt_freq = np.bincount(stream.ids.astype(np.int64), minlength=V).astype(np.float64)

    live = np.arange(ranks.k_max)[None, :] < ranks.lengths.astype(np.int64)[:, None]
    members = ranks.ranks[live].astype(np.int64)
    topk_freq = np.bincount(members, minlength=V).astype(np.float64) / ranks.k_max

    order = np.lexsort((np.arange(V), -gt_freq))
    gt_sorted = gt_freq[order]
    topk_sorted = topk_freq[order]
    bins = (np.arange(V, dtype=np.int64) * n_bins) // V
    bin_sum = np.bincount(bins, weights=topk_sorted, minlength=n_bins)
    bin_count = np.bincount(bins, minlength=n_bins)
    bin_avg = bin_sum / np.maximum(bin_count, 1)
    return [
        (int(r), float(gt_sorted[r]), float(topk_sorted[r]), float(bin_avg[bins[r]]))
        for r in range(V)
    ]


def write_rank_frequency_csv(
    rows: list[tuple[int, float, float, float]], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word_rank", "gt_freq", "topk_freq", "bin_avg"])
        writer.writerows(rows)
