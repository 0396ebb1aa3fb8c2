"""Training orchestration: epochs, rank-row gathering, alpha scheduling,
batched loss/gradient application, validation, checkpoints, metrics CSV.

Validation always scores plain CE perplexity whatever the training variant,
so runs stay comparable to the CE baseline.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .corpus import BatchPlan, TokenStream, Vocabulary, batchify, load_corpus
from .errors import AlignmentError, DivergenceError, RanklmError
from .losses import (
    LossConfig,
    RankTargets,
    _pl_core,
    combined_loss,
    cycle_alpha,
    pairwise_hinge_loss,
    softmax_pieces,
    stepped_discounts,
)
from .metrics import perplexity
from .rankgen import RankGroundTruth
from .student import (
    StudentConfig,
    StudentParams,
    backward,
    backward_batch,
    forward,
    forward_batch,
    init_optimizer,
    init_params,
    optimizer_step,
    save_checkpoint,
)
from .teacherio import read_ranks

METRICS_COLUMNS = ("step", "epoch", "alpha", "train_loss", "val_ppl", "wall_ms")


@dataclass
class TrainConfig:
    student: StudentConfig
    loss: LossConfig
    epochs: int
    batch: BatchPlan
    train_path: str
    valid_path: str
    vocab_path: str
    ranks_path: str | None = None
    eval_every: int = 1
    checkpoint_dir: str = "checkpoints"
    lr: float = 1e-3
    clip_norm: float = 5.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise RanklmError("epochs must be >= 1")
        if self.eval_every < 1:
            raise RanklmError("eval_every must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        return cls(
            student=StudentConfig(**raw["student"]),
            loss=LossConfig(**raw.get("loss", {})),
            epochs=raw["epochs"],
            batch=BatchPlan(**raw.get("batch", {"batch_size": 32, "seq_len": 16})),
            train_path=raw["train_path"],
            valid_path=raw["valid_path"],
            vocab_path=raw["vocab_path"],
            ranks_path=raw.get("ranks_path"),
            eval_every=raw.get("eval_every", 1),
            checkpoint_dir=raw.get("checkpoint_dir", "checkpoints"),
            lr=raw.get("lr", 1e-3),
            clip_norm=raw.get("clip_norm", 5.0),
        )

    def resolved(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: StudentParams
    vocab: Vocabulary
    metrics: list[dict]
    metrics_path: Path
    checkpoint_path: Path


def _ce_batch(
    logits: np.ndarray, gt: np.ndarray, pieces=None
) -> tuple[np.ndarray, np.ndarray]:
    m, e, z = softmax_pieces(logits) if pieces is None else pieces
    B = logits.shape[0]
    loss = (np.log(z[:, 0]) + m[:, 0]).astype(np.float64) - logits[np.arange(B), gt]
    grad = e / z
    grad[np.arange(B), gt] -= 1.0
    return loss, grad


def _masked_teacher_probs(
    teacher_logits: np.ndarray, live: np.ndarray, tau: float
) -> np.ndarray:
    t = np.where(live, teacher_logits.astype(np.float64) / tau, -np.inf)
    t -= t.max(axis=1, keepdims=True)
    p = np.exp(t)
    p /= p.sum(axis=1, keepdims=True)
    return np.where(live, p, 0.0)


@dataclass
class BatchTargets:
    """Rank rows for one batch, truncated to the loss's k."""

    ids: np.ndarray       # (B, k) int64, 0 on padding
    lengths: np.ndarray   # (B,)
    groups: np.ndarray    # (B, k) int64, 0 on padding
    teacher_logits: np.ndarray | None


def gather_rank_rows(
    ranks: RankGroundTruth, positions: np.ndarray, k: int
) -> BatchTargets:
    """Truncate (never resample) each row to the first k slots."""
    k = min(k, ranks.k_max)
    lens = np.minimum(ranks.lengths[positions].astype(np.int64), k)
    live = np.arange(k)[None, :] < lens[:, None]
    ids = np.where(live, ranks.ranks[positions, :k], 0).astype(np.int64)
    groups = np.where(live, ranks.groups[positions, :k], 0).astype(np.int64)
    teacher = None
    if ranks.logits is not None:
        teacher = np.where(live, ranks.logits[positions, :k].astype(np.float64), 0.0)
    return BatchTargets(ids=ids, lengths=lens, groups=groups, teacher_logits=teacher)


def _pwh_negatives(
    logits: np.ndarray, targets: BatchTargets, n_negatives: int
) -> list[np.ndarray]:
    """Student's own top-(n+k) predictions, minus the teacher's top-k."""
    B, V = logits.shape
    out: list[np.ndarray] = []
    for b in range(B):
        k_used = int(targets.lengths[b])
        want = min(n_negatives + k_used, V)
        top = np.argpartition(-logits[b], want - 1)[:want]
        top = top[np.argsort(-logits[b][top], kind="stable")]
        banned = set(int(i) for i in targets.ids[b, :k_used])
        negs = [int(i) for i in top if int(i) not in banned][:n_negatives]
        out.append(np.asarray(negs, dtype=np.int64))
    return out


def batched_objective(
    logits: np.ndarray,
    gt: np.ndarray,
    targets: BatchTargets | None,
    config: LossConfig,
    alpha: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-position combined loss and (B, V) logit gradients.

    Runs in the logits' own dtype (float32 during training) with one shared
    softmax pass; tests drive the same code in float64.
    """
    logits = np.asarray(logits)
    pieces = softmax_pieces(logits)
    ce_l, ce_g = _ce_batch(logits, gt, pieces)
    if config.variant == "CE":
        return ce_l, ce_g

    if targets is None:
        raise RanklmError(f"variant {config.variant} needs rank targets")
    B, k = targets.ids.shape
    live = np.arange(k)[None, :] < targets.lengths[:, None]
    groups = targets.groups
    if config.variant in ("PL", "PL_t", "PL_s", "KL"):
        groups = np.where(live, np.arange(k)[None, :], 0)

    if config.variant == "KL":
        if targets.teacher_logits is None:
            raise RanklmError("KL needs teacher logits in the ranks file")
        p = _masked_teacher_probs(targets.teacher_logits, live, config.tau)
        m, e, z = pieces
        rows = np.arange(B)[:, None]
        log_q = (logits[rows, targets.ids] - (np.log(z) + m)).astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        aux_l = (plogp - p * log_q).sum(axis=1)
        aux_g = e / z
        np.add.at(aux_g, (rows, targets.ids), -p.astype(aux_g.dtype))
    elif config.variant == "PWH":
        neg_rows = _pwh_negatives(logits, targets, config.n_negatives)
        aux_l = np.zeros(B)
        aux_g = np.zeros_like(logits)
        for b in range(B):
            n = int(targets.lengths[b])
            row = RankTargets.strong(targets.ids[b, :n])
            aux_l[b], aux_g[b] = pairwise_hinge_loss(
                logits[b].astype(np.float64), row, neg_rows[b], config.margin
            )
    else:
        discounts = None
        if config.variant in ("PL_s", "wPL_s"):
            table = np.zeros((k + 1, k))
            for n in range(1, k + 1):
                table[n, :n] = stepped_discounts(n, config.eta)
            discounts = table[targets.lengths]
        elif config.variant == "PL_t":
            if targets.teacher_logits is None:
                raise RanklmError("PL_t needs teacher logits in the ranks file")
            discounts = _masked_teacher_probs(targets.teacher_logits, live, config.tau)
        if config.group_mean_discounts and discounts is not None:
            same = (groups[:, :, None] == groups[:, None, :]) & live[:, :, None] & live[:, None, :]
            counts = same.sum(axis=2)
            discounts = np.where(
                live, np.einsum("bij,bj->bi", same, discounts) / np.maximum(counts, 1), 0.0
            )
        aux_l, aux_g = _pl_core(
            logits,
            pieces,
            targets.ids,
            targets.lengths,
            groups,
            discounts,
            config.epsilon,
        )

    loss = alpha * ce_l + (1.0 - alpha) * aux_l
    grad = alpha * ce_g + (1.0 - alpha) * aux_g
    return loss, grad


def _load_aligned_ranks(config: TrainConfig, stream: TokenStream) -> RankGroundTruth | None:
    if config.loss.variant == "CE":
        return None
    if config.ranks_path is None:
        raise RanklmError(f"variant {config.loss.variant} requires a ranks file")
    ranks = read_ranks(config.ranks_path)
    if ranks.T != len(stream):
        raise AlignmentError(
            f"ranks T={ranks.T} does not match training stream T={len(stream)}"
        )
    if (ranks.ranks[:, 0] != stream.ids).any():
        raise AlignmentError("rank rows do not hold the training stream's ground-truths")
    if config.loss.variant in ("KL", "PL_t") and ranks.logits is None:
        raise RanklmError(f"variant {config.loss.variant} needs a logits block")
    return ranks


def train(config: TrainConfig) -> TrainResult:
    """Run the full loop and leave metrics.csv plus checkpoints behind."""
    vocab = Vocabulary.load(config.vocab_path)
    if vocab.size != config.student.vocab_size:
        raise AlignmentError(
            f"student vocab_size {config.student.vocab_size} != vocab file {vocab.size}"
        )
    train_stream = load_corpus(config.train_path, vocab)
    valid_stream = load_corpus(config.valid_path, vocab)
    ranks = _load_aligned_ranks(config, train_stream)

    params = init_params(config.student, dtype=np.float32)
    opt = init_optimizer(params, lr=config.lr, clip_norm=config.clip_norm)
    batches = batchify(train_stream, config.batch)
    steps_per_epoch = len(batches)
    ctx = config.student.context_len
    offsets = np.arange(-ctx, 0, dtype=np.int64)

    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics: list[dict] = []
    global_step = 0
    t0 = time.perf_counter()

    for epoch in range(config.epochs):
        loss_sum = 0.0
        loss_count = 0
        alpha = 1.0
        for b_idx, batch in enumerate(batches):
            positions = batch.target_pos.reshape(-1)
            positions = positions[positions >= ctx]
            if positions.size == 0:
                continue
            contexts = train_stream.ids[positions[:, None] + offsets[None, :]].astype(
                np.int64
            )
            gt = train_stream.ids[positions].astype(np.int64)
            logits, cache = forward_batch(params, contexts)
            alpha = cycle_alpha(
                epoch + b_idx / steps_per_epoch,
                config.loss.cycle_epochs,
                config.loss.alpha_min,
            )
            targets = (
                gather_rank_rows(ranks, positions, config.loss.k)
                if ranks is not None
                else None
            )
            pos_loss, pos_grad = batched_objective(
                logits, gt, targets, config.loss, alpha
            )
            if not np.isfinite(pos_loss).all():
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} step {b_idx}"
                )
            loss_sum += float(pos_loss.sum())
            loss_count += int(positions.size)
            upstream = (pos_grad / positions.size).astype(np.float32)
            grads = backward_batch(params, cache, upstream)
            optimizer_step(opt, params, grads)
            global_step += 1

        eval_now = ((epoch + 1) % config.eval_every == 0) or (epoch + 1 == config.epochs)
        val_ppl = ""
        if eval_now:
            val_ppl = f"{perplexity(params, valid_stream, config.batch).ppl:.6f}"
            save_checkpoint(params, ckpt_dir / f"epoch{epoch + 1:04d}.ckpt")
        metrics.append(
            {
                "step": global_step,
                "epoch": epoch + 1,
                "alpha": repr(alpha),
                "train_loss": f"{loss_sum / max(loss_count, 1):.10f}",
                "val_ppl": val_ppl,
                "wall_ms": f"{(time.perf_counter() - t0) * 1000.0:.1f}",
            }
        )

    final_path = ckpt_dir / "final.ckpt"
    save_checkpoint(params, final_path)
    metrics_path = ckpt_dir / "metrics.csv"
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        writer.writerows(metrics)
    return TrainResult(
        params=params,
        vocab=vocab,
        metrics=metrics,
        metrics_path=metrics_path,
        checkpoint_path=final_path,
    )


# ---------------------------------------------------------------------------
# gradient checking harness
# ---------------------------------------------------------------------------

GRADCHECK_VARIANTS = ("CE", "PL", "wPL", "PL_t", "PL_s", "KL", "PWH")
GRADCHECK_EPSILON = 1e-5


@dataclass
class VariantReport:
    variant: str
    n_cases: int
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    reports: list[VariantReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def format(self) -> str:
        lines = []
        for r in self.reports:
            status = "PASS" if r.passed else "FAIL"
            lines.append(
                f"{status} {r.variant:5s} cases={r.n_cases} "
                f"max_rel_err={r.max_rel_err:.3e} tol={self.tolerance:.1e}"
            )
        return "\n".join(lines)


def _random_case(rng: np.random.Generator, variant: str):
    """One tiny seeded (params, context, targets, alpha) tuple with the
    degeneracies that break finite differences resampled away."""
    V = int(rng.integers(8, 19))
    cfg = StudentConfig(
        vocab_size=V,
        context_len=2,
        embed_dim=int(rng.integers(2, 5)),
        hidden_dim=int(rng.integers(3, 6)),
        init_scale=0.5,
        seed=int(rng.integers(0, 2**31)),
    )
    params = init_params(cfg, dtype=np.float64)
    context = rng.integers(0, V, size=cfg.context_len)
    gt = int(rng.integers(0, V))
    k_used = int(rng.integers(1, min(7, V)))
    others = rng.permutation(np.setdiff1d(np.arange(V), [gt]))[: k_used - 1]
    ids = np.concatenate(([gt], others))
    if variant in ("wPL", "wPL_s"):
        groups = [0]
        for i in range(1, k_used):
            groups.append(i if rng.random() < 0.6 else groups[-1])
        groups = np.asarray(groups)
        groups = np.minimum(groups, np.arange(k_used))
    else:
        groups = np.arange(k_used)
    targets = RankTargets(ids=ids, groups=groups)
    teacher_logits = rng.normal(size=k_used) if variant in ("KL", "PL_t") else None
    negatives = None
    if variant == "PWH":
        pool = np.setdiff1d(np.arange(V), ids)
        n_neg = int(min(len(pool), rng.integers(1, 4)))
        negatives = rng.permutation(pool)[:n_neg]
    alpha = float(rng.uniform(0.0, 1.0))
    loss_cfg = LossConfig(
        variant=variant,
        k=k_used,
        eta=float(rng.uniform(0.25, 0.55)),
        tau=float(rng.uniform(1.0, 8.0)),
        epsilon=GRADCHECK_EPSILON,
    )
    return params, context, gt, targets, teacher_logits, negatives, alpha, loss_cfg


def _case_is_fd_safe(logits: np.ndarray, loss_cfg: LossConfig, targets, negatives) -> bool:
    top2 = np.partition(logits, -2)[-2:]
    if top2[1] - top2[0] < 1e-3:
        return False  # argmax must survive the FD perturbation (eps*e^m term)
    if loss_cfg.variant == "PWH":
        ids = targets.ids
        pairs = [(ids[i], ids[i + 1]) for i in range(len(ids) - 1)]
        pairs += [(a, b) for a in ids for b in negatives]
        for a, b in pairs:
            if abs(loss_cfg.margin - (logits[a] - logits[b])) < 1e-3:
                return False  # keep clear of the hinge kink
    return True


def grad_check(
    n_cases: int = 100,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
    variants: tuple[str, ...] = GRADCHECK_VARIANTS,
) -> GradCheckReport:
    """End-to-end analytic vs central-difference gradients through the
    student, per loss variant, on tiny seeded cases (64-bit)."""
    report = GradCheckReport(tolerance=tolerance, step=step)
    for v_idx, variant in enumerate(variants):
        rng = np.random.Generator(np.random.PCG64(seed * 1000 + v_idx))
        worst = 0.0
        done = 0
        while done < n_cases:
            case = _random_case(rng, variant)
            params, context, gt, targets, teacher_logits, negatives, alpha, loss_cfg = case
            logits = forward(params, context).logits
            if not _case_is_fd_safe(logits, loss_cfg, targets, negatives):
                continue

            def loss_at(p: StudentParams) -> float:
                w = forward(p, context).logits
                l, _ = combined_loss(
                    w, gt, targets, loss_cfg, alpha,
                    teacher_logits=teacher_logits, negatives=negatives,
                )
                return l

            _, logit_grad = combined_loss(
                logits, gt, targets, loss_cfg, alpha,
                teacher_logits=teacher_logits, negatives=negatives,
            )
            grads = backward(params, context, logit_grad)
            for name, block in params.blocks().items():
                it = np.nditer(block, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = block[idx]
                    block[idx] = orig + step
                    up = loss_at(params)
                    block[idx] = orig - step
                    down = loss_at(params)
                    block[idx] = orig
                    fd = (up - down) / (2.0 * step)
                    a = grads[name][idx]
                    rel = abs(a - fd) / max(abs(a), abs(fd), 1e-4)
                    worst = max(worst, rel)
            done += 1
        report.reports.append(
            VariantReport(
                variant=variant,
                n_cases=n_cases,
                max_rel_err=worst,
                passed=worst < tolerance,
            )
        )
    return report
