"""Training objectives and their analytic gradients.

All losses operate on a logit vector w over the full vocabulary and return
(loss, dloss/dw).  The rank losses consume a RankTargets row: distinct token
ids in rank order, weak-order group-start indices, and optional per-rank
discounts.

The top-k list loss treats ranking as sampling from a softmax without
replacement: term i is log(Z - sum_{j < start(i)} e^{w_yj} + eps*e^m) - w_yi,
where start(i) is the group-start index, so members of one weak-order group
share the normalizer of their group's first slot (plain softmax cross-entropy
within the group).  The eps guard is added after the max shift, exactly where
the vectorized form puts it, which keeps the scalar reference, the batched
path, and shift invariance in agreement.

Two implementations are provided on purpose: a per-position scalar reference
(pl_loss) and the batched cumsum/gather path (pl_loss_batch) used in
training.  Tests hold them to each other and to a term-by-term oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import RanklmError

VARIANTS = ("CE", "KL", "PL", "PL_t", "PL_s", "wPL", "wPL_s", "PWH")
DEFAULT_EPSILON = 1e-5


@dataclass
class LossConfig:
    variant: str = "CE"
    k: int = 10
    eta: float = 0.4               # top-rank weight for stepped discounting
    tau: float = 4.0               # teacher temperature (KL, PL_t)
    epsilon: float = DEFAULT_EPSILON
    alpha_min: float = 0.5
    cycle_epochs: int = 2
    margin: float = 1.0            # PWH
    n_negatives: int = 10          # PWH
    # average discounts inside each weak-order group; restores within-group
    # permutation invariance when discounts vary by rank (off by default)
    group_mean_discounts: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise RanklmError(f"unknown loss variant {self.variant!r}")
        if self.k < 1:
            raise RanklmError("k must be >= 1")
        if self.variant in ("PL_s", "wPL_s") and not 0.0 < self.eta < 1.0:
            raise RanklmError("stepped variants need 0 < eta < 1")
        if self.variant in ("KL", "PL_t") and self.tau <= 0.0:
            raise RanklmError("temperature variants need tau > 0")
        if self.epsilon < 0.0:
            raise RanklmError("epsilon must be >= 0")
        if not 0.0 < self.alpha_min <= 1.0:
            raise RanklmError("alpha_min must lie in (0, 1]")
        if self.cycle_epochs < 1:
            raise RanklmError("cycle_epochs must be >= 1")
        if self.variant == "PWH" and self.n_negatives < 0:
            raise RanklmError("n_negatives must be >= 0")


@dataclass
class RankTargets:
    """One rank row: ids in rank order, group-start indices, discounts."""

    ids: np.ndarray
    groups: np.ndarray
    discounts: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        k = len(self.ids)
        if k < 1:
            raise RanklmError("rank targets cannot be empty")
        if len(np.unique(self.ids)) != k:
            raise RanklmError("duplicate ids in rank targets")
        if self.groups.shape != (k,) or self.groups[0] != 0:
            raise RanklmError("groups must have groups[0] = 0")
        idx = np.arange(k)
        if (self.groups > idx).any() or (self.groups[self.groups] != self.groups).any():
            raise RanklmError("groups must be idempotent start indices")
        if self.discounts is not None:
            self.discounts = np.asarray(self.discounts, dtype=np.float64)
            if self.discounts.shape != (k,) or (self.discounts < 0).any():
                raise RanklmError("discounts must be non-negative, one per rank")

    @classmethod
    def strong(cls, ids: Sequence[int], discounts=None) -> "RankTargets":
        ids = np.asarray(ids, dtype=np.int64)
        return cls(ids=ids, groups=np.arange(len(ids)), discounts=discounts)

    @property
    def k_used(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class ForwardOutput:
    """Logits plus the log-sum-exp pieces every loss reuses."""

    logits: np.ndarray
    max_logit: float
    partition: float


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise RanklmError("non-finite logits")
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss(logits: np.ndarray, gt_id: int) -> tuple[float, np.ndarray]:
    """log Z - w_gt with the log-sum-exp shift; grad = softmax - onehot."""
    logits = _check_logits(logits)
    if not 0 <= gt_id < len(logits):
        raise RanklmError(f"gt_id {gt_id} out of range")
    m = logits.max()
    e = np.exp(logits - m)
    z = e.sum()
    loss = float(np.log(z) + m - logits[gt_id])
    grad = e / z
    grad[gt_id] -= 1.0
    return loss, grad


def pl_loss(
    logits: np.ndarray,
    targets: RankTargets,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[float, np.ndarray]:
    """Scalar reference for the top-k list loss (weak orders, discounts).

    loss = sum_i d_i * [log(Z - sum_{j<start(i)} e^{w_yj} + eps*e^m) - w_yi].
    The gradient is exact for the guarded expression, including the eps*e^m
    term, which (like autodiff through a max) falls on the argmax logit.
    """
    logits = _check_logits(logits)
    k = targets.k_used
    if k > len(logits):
        raise RanklmError("more rank targets than vocabulary entries")
    ids = targets.ids
    starts = targets.groups
    d = (
        np.ones(k, dtype=np.float64)
        if targets.discounts is None
        else targets.discounts
    )

    m = logits.max()
    argmax = int(np.argmax(logits))
    s = np.exp(logits - m)
    z = s.sum()

    g = s[ids]
    excluded = np.concatenate(([0.0], np.cumsum(g)[:-1]))  # sum_{j<i} e^{w_yj - m}
    denom = z - excluded[starts] + epsilon                  # S_i, shifted space
    loss = float(np.sum(d * (np.log(denom) + m - logits[ids])))

    grad = np.zeros_like(s, dtype=np.float64)
    coef = d / denom
    # full-vocab part: every term's log contributes s_v / S_i unless v is
    # excluded for that term; the eps*e^m guard differentiates onto argmax
    grad += s * coef.sum()
    grad[argmax] += epsilon * coef.sum()
    for j in range(k):
        # y_j is excluded from terms whose group starts after slot j
        grad[ids[j]] -= s[ids[j]] * coef[starts > j].sum()
    np.subtract.at(grad, ids, d)
    return loss, grad


def softmax_pieces(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(max, exp(w - max), rowsum) for a (B, V) logit matrix, in its dtype."""
    m = logits.max(axis=1, keepdims=True)
    s = np.exp(logits - m)
    return m, s, s.sum(axis=1, keepdims=True)


def _pl_core(
    logits: np.ndarray,
    pieces: tuple[np.ndarray, np.ndarray, np.ndarray],
    ids: np.ndarray,
    lengths: np.ndarray,
    groups: np.ndarray,
    discounts: np.ndarray | None,
    epsilon: float,
) -> tuple[np.ndarray, np.ndarray]:
    """List loss over precomputed softmax pieces.  The (B, V)-sized work
    stays in the logits' dtype; the (B, K) rank math runs in float64."""
    m, s, z = pieces
    B, V = logits.shape
    K = ids.shape[1]
    lengths = np.asarray(lengths, dtype=np.int64)
    live = np.arange(K)[None, :] < lengths[:, None]
    ids = np.where(live, ids, 0).astype(np.int64)
    groups = np.where(live, groups, 0).astype(np.int64)

    rows = np.arange(B)[:, None]
    g = s[rows, ids].astype(np.float64)
    shifted = np.concatenate([np.zeros((B, 1)), g[:, :-1]], axis=1)
    zi = np.take_along_axis(np.cumsum(shifted, axis=1), groups, axis=1)
    denom = z.astype(np.float64) - zi + epsilon

    w_y = logits[rows, ids].astype(np.float64)
    d = np.ones((B, K)) if discounts is None else np.asarray(discounts, dtype=np.float64)
    d = np.where(live, d, 0.0)
    loss = (d * (np.log(denom) + m.astype(np.float64) - w_y)).sum(axis=1)

    coef = d / denom                                   # (B, K), 0 on padding
    coef_total = coef.sum(axis=1)
    grad = s * coef_total[:, None].astype(s.dtype)
    grad[np.arange(B), np.argmax(logits, axis=1)] += (epsilon * coef_total).astype(s.dtype)
    # exclusion correction: y_j leaves the denominator of terms with start > j
    excl = (groups[:, None, :] > np.arange(K)[:, None]).astype(np.float64)  # (B, j, i)
    excl_coef = np.einsum("bji,bi->bj", excl, coef)
    np.add.at(grad, (rows, ids), (-(g * excl_coef + d)).astype(s.dtype))
    return loss, grad


def pl_loss_batch(
    logits: np.ndarray,       # (B, V)
    ids: np.ndarray,          # (B, K) int64, pad arbitrary beyond lengths
    lengths: np.ndarray,      # (B,)
    groups: np.ndarray,       # (B, K)
    discounts: np.ndarray | None = None,  # (B, K)
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized list loss: max-shift, gather, zero-shifted cumsum, group
    gather, masked discount multiply.  Returns per-row loss and (B, V) grad.
    """
    logits = np.asarray(logits)
    return _pl_core(
        logits, softmax_pieces(logits), ids, lengths, groups, discounts, epsilon
    )


def group_mean_discounts(discounts: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Replace each discount with the mean over its weak-order group."""
    discounts = np.asarray(discounts, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    out = discounts.copy()
    for start in np.unique(groups):
        members = groups == start
        out[members] = discounts[members].mean()
    return out


def stepped_discounts(k: int, eta: float) -> np.ndarray:
    """eta on rank 1; the remaining 1-eta spread over ranks 2..k as a
    strictly decreasing arithmetic sequence (d_i proportional to k-i)."""
    if k < 1:
        raise RanklmError("k must be >= 1")
    if k == 1:
        return np.ones(1, dtype=np.float64)
    if not 0.0 < eta < 1.0:
        raise RanklmError("eta must lie in (0, 1)")
    i = np.arange(1, k, dtype=np.float64)
    tail = (1.0 - eta) * 2.0 * (k - i) / (k * (k - 1))
    return np.concatenate(([eta], tail))


def teacher_prob_discounts(teacher_logits: np.ndarray, tau: float) -> np.ndarray:
    """Teacher probabilities renormalized over the top-k support at
    temperature tau."""
    if tau <= 0:
        raise RanklmError("tau must be > 0")
    teacher_logits = _check_logits(teacher_logits)
    return softmax(np.asarray(teacher_logits, dtype=np.float64) / tau)


def topk_kl_loss(
    logits: np.ndarray,
    targets: RankTargets,
    teacher_logits: np.ndarray,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Cross-support divergence: teacher softmax over its top-k (temperature
    tau, teacher only) against the student's full-vocabulary softmax read off
    at the top-k ids.  No tau^2 gradient scaling."""
    logits = _check_logits(logits)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if teacher_logits.shape != (targets.k_used,):
        raise RanklmError("teacher logits must cover every rank slot")
    p = teacher_prob_discounts(teacher_logits, tau)
    m = logits.max()
    e = np.exp(logits - m)
    z = e.sum()
    log_q = logits[targets.ids] - (np.log(z) + m)
    loss = float(np.sum(p * (np.log(p) - log_q)))
    grad = e / z
    np.subtract.at(grad, targets.ids, p)
    return loss, grad


def pairwise_hinge_loss(
    logits: np.ndarray,
    targets: RankTargets,
    negatives: np.ndarray,
    margin: float,
) -> tuple[float, np.ndarray]:
    """Mean hinge over consecutive-rank pairs plus every target against every
    negative.  The subgradient at the kink takes the zero branch."""
    logits = _check_logits(logits)
    negatives = np.asarray(negatives, dtype=np.int64)
    if np.intersect1d(negatives, targets.ids).size:
        raise RanklmError("negatives overlap rank targets")
    hi: list[int] = []
    lo: list[int] = []
    for a, b in zip(targets.ids[:-1], targets.ids[1:]):
        hi.append(int(a))
        lo.append(int(b))
    for a in targets.ids:
        for b in negatives:
            hi.append(int(a))
            lo.append(int(b))
    if not hi:
        return 0.0, np.zeros_like(logits, dtype=np.float64)
    hi_arr = np.asarray(hi)
    lo_arr = np.asarray(lo)
    viol = margin - (logits[hi_arr] - logits[lo_arr])
    active = viol > 0.0
    loss = float(viol[active].sum() / len(hi))
    grad = np.zeros_like(logits, dtype=np.float64)
    scale = 1.0 / len(hi)
    np.subtract.at(grad, hi_arr[active], scale)
    np.add.at(grad, lo_arr[active], scale)
    return loss, grad


def cycle_alpha(global_epoch: float, cycle_epochs: int, alpha_min: float) -> float:
    """Sawtooth: 1 at each cycle start, linearly down to alpha_min at the
    cycle end, then reset."""
    if cycle_epochs < 1:
        raise RanklmError("cycle_epochs must be >= 1")
    if not 0.0 < alpha_min <= 1.0:
        raise RanklmError("alpha_min must lie in (0, 1]")
    phase = (global_epoch % cycle_epochs) / cycle_epochs
    return 1.0 - (1.0 - alpha_min) * phase


def _discounts_for(config: LossConfig, targets: RankTargets, teacher_logits) -> np.ndarray | None:
    if config.variant in ("PL_s", "wPL_s"):
        return stepped_discounts(targets.k_used, config.eta)
    if config.variant == "PL_t":
        if teacher_logits is None:
            raise RanklmError("PL_t needs teacher logits")
        return teacher_prob_discounts(teacher_logits, config.tau)
    return targets.discounts


def combined_loss(
    logits: np.ndarray,
    gt_id: int,
    targets: RankTargets | None,
    config: LossConfig,
    alpha: float,
    teacher_logits: np.ndarray | None = None,
    negatives: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """alpha * CE + (1 - alpha) * auxiliary.  The CE variant ignores alpha;
    strong variants flatten any group structure, weak variants keep it."""
    ce_l, ce_g = ce_loss(logits, gt_id)
    if config.variant == "CE":
        return ce_l, ce_g
    if targets is None:
        raise RanklmError(f"variant {config.variant} needs rank targets")
    if config.variant in ("PL", "PL_t", "PL_s"):
        targets = RankTargets.strong(targets.ids)
    if config.variant == "KL":
        if teacher_logits is None:
            raise RanklmError("KL needs teacher logits")
        aux_l, aux_g = topk_kl_loss(logits, targets, teacher_logits, config.tau)
    elif config.variant == "PWH":
        if negatives is None:
            raise RanklmError("PWH needs negative samples")
        aux_l, aux_g = pairwise_hinge_loss(logits, targets, negatives, config.margin)
    else:
        discounts = _discounts_for(config, targets, teacher_logits)
        if config.group_mean_discounts and discounts is not None:
            discounts = group_mean_discounts(discounts, targets.groups)
        targets = RankTargets(
            ids=targets.ids, groups=targets.groups, discounts=discounts
        )
        aux_l, aux_g = pl_loss(logits, targets, config.epsilon)
    loss = alpha * ce_l + (1.0 - alpha) * aux_l
    grad = alpha * ce_g + (1.0 - alpha) * aux_g
    return float(loss), grad
