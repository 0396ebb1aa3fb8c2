"""Desk-scale feedforward window language model.

logits = W2 . tanh(W1 . concat(E[context]) + b1) + b2

The backward pass is hand-derived (no autodiff), the optimizer is a standard
adaptive-moment update with bias correction and global-norm clipping.
Training runs in float32; tests drive the same code in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import DivergenceError, RanklmError
from .losses import ForwardOutput

CHECKPOINT_MAGIC = b"RLCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StudentConfig:
    vocab_size: int
    context_len: int = 5
    embed_dim: int = 64
    hidden_dim: int = 128
    tie_embeddings: bool = False
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.vocab_size, self.context_len, self.embed_dim, self.hidden_dim) < 1:
            raise RanklmError("all model dimensions must be >= 1")
        if self.init_scale < 0:
            raise RanklmError("init_scale must be >= 0")
        if self.tie_embeddings and self.embed_dim != self.hidden_dim:
            raise RanklmError("tied embeddings require hidden_dim == embed_dim")


@dataclass
class StudentParams:
    config: StudentConfig
    embed: np.ndarray            # (V, embed_dim)
    w1: np.ndarray               # (context_len * embed_dim, hidden_dim)
    b1: np.ndarray               # (hidden_dim,)
    w2_free: np.ndarray | None   # (hidden_dim, V); None when tied
    b2: np.ndarray               # (V,)

    @property
    def w2(self) -> np.ndarray:
        return self.embed.T if self.config.tie_embeddings else self.w2_free

    def blocks(self) -> dict[str, np.ndarray]:
        out = {"embed": self.embed, "w1": self.w1, "b1": self.b1}
        if not self.config.tie_embeddings:
            out["w2"] = self.w2_free
        out["b2"] = self.b2
        return out

    def astype(self, dtype) -> "StudentParams":
        return StudentParams(
            config=self.config,
            embed=self.embed.astype(dtype),
            w1=self.w1.astype(dtype),
            b1=self.b1.astype(dtype),
            w2_free=None if self.w2_free is None else self.w2_free.astype(dtype),
            b2=self.b2.astype(dtype),
        )


def init_params(config: StudentConfig, dtype=np.float32) -> StudentParams:
    """Uniform [-init_scale, init_scale] weights, zero biases, seeded."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    s = config.init_scale

    def uni(*shape):
        return rng.uniform(-s, s, size=shape).astype(dtype)

    return StudentParams(
        config=config,
        embed=uni(config.vocab_size, config.embed_dim),
        w1=uni(config.context_len * config.embed_dim, config.hidden_dim),
        b1=np.zeros(config.hidden_dim, dtype=dtype),
        w2_free=None
        if config.tie_embeddings
        else uni(config.hidden_dim, config.vocab_size),
        b2=np.zeros(config.vocab_size, dtype=dtype),
    )


def _check_context(params: StudentParams, context: np.ndarray) -> np.ndarray:
    context = np.asarray(context, dtype=np.int64)
    if context.shape[-1] != params.config.context_len:
        raise RanklmError(
            f"context length {context.shape[-1]} != {params.config.context_len}"
        )
    return context


def forward_batch(
    params: StudentParams, contexts: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Batched forward over (B, context_len) id rows; returns logits (B, V)
    and the activation cache the backward pass needs."""
    contexts = _check_context(params, contexts)
    B = contexts.shape[0]
    x = params.embed[contexts].reshape(B, -1)
    h = np.tanh(x @ params.w1 + params.b1)
    logits = h @ params.w2 + params.b2
    return logits, {"contexts": contexts, "x": x, "h": h}


def forward(params: StudentParams, context: np.ndarray) -> ForwardOutput:
    """Single-position forward with log-sum-exp bookkeeping."""
    logits, _ = forward_batch(params, np.asarray(context)[None, :])
    w = logits[0]
    m = float(w.max())
    partition = float(np.exp(w - m).sum() * np.exp(m))
    return ForwardOutput(logits=w, max_logit=m, partition=partition)


def backward_batch(
    params: StudentParams, cache: dict, upstream: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact gradients of sum_b (logits_b . upstream_b) w.r.t. parameters."""
    h, x, contexts = cache["h"], cache["x"], cache["contexts"]
    cfg = params.config
    grads: dict[str, np.ndarray] = {}

    g_b2 = upstream.sum(axis=0)
    g_w2 = h.T @ upstream
    g_h = upstream @ params.w2.T
    g_a = g_h * (1.0 - h * h)
    grads["w1"] = x.T @ g_a
    grads["b1"] = g_a.sum(axis=0)
    g_x = (g_a @ params.w1.T).reshape(-1, cfg.embed_dim)

    g_embed = np.zeros_like(params.embed, dtype=g_x.dtype)
    np.add.at(g_embed, contexts.reshape(-1), g_x)
    if cfg.tie_embeddings:
        g_embed += g_w2.T
    else:
        grads["w2"] = g_w2
    grads["embed"] = g_embed
    grads["b2"] = g_b2
    return grads


def backward(
    params: StudentParams, context: np.ndarray, upstream: np.ndarray
) -> dict[str, np.ndarray]:
    """Single-position gradients; recomputes the forward activations."""
    _, cache = forward_batch(params, np.asarray(context)[None, :])
    return backward_batch(params, cache, np.asarray(upstream)[None, :])


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    clip_norm: float = 5.0
    step: int = 0
    m: dict[str, np.ndarray] | None = None
    v: dict[str, np.ndarray] | None = None


def init_optimizer(
    params: StudentParams,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_opt: float = 1e-8,
    clip_norm: float = 5.0,
) -> OptimState:
    blocks = params.blocks()
    return OptimState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps_opt=eps_opt,
        clip_norm=clip_norm,
        m={k: np.zeros_like(v) for k, v in blocks.items()},
        v={k: np.zeros_like(v) for k, v in blocks.items()},
    )


def clip_global_norm(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if clip_norm > 0 and total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return total


def optimizer_step(
    state: OptimState, params: StudentParams, grads: dict[str, np.ndarray]
) -> StudentParams:
    """Global-norm clip, then adaptive-moment update with bias correction.
    Mutates params/state in place and returns params."""
    blocks = params.blocks()
    if set(grads) != set(blocks):
        raise RanklmError(f"gradient blocks {sorted(grads)} != {sorted(blocks)}")
    for k, g in grads.items():
        if g.shape != blocks[k].shape:
            raise RanklmError(f"gradient shape mismatch for {k}")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient in {k}")
    clip_global_norm(grads, state.clip_norm)
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, g in grads.items():
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        blocks[k] -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps_opt)).astype(
            blocks[k].dtype
        )
    return params


def save_checkpoint(params: StudentParams, path: str | Path) -> None:
    """Header (config JSON) + raw little-endian f32 blocks in declaration
    order (embed, w1, b1, [w2], b2)."""
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "config": asdict(params.config)}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for block in params.blocks().values():
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> StudentParams:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise RanklmError(f"{path}: not a checkpoint file")
    try:
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise RanklmError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(blob[12 : 12 + hlen])
        config = StudentConfig(**header["config"])
        params = init_params(config)
        off = 12 + hlen
        for name, block in params.blocks().items():
            flat = np.frombuffer(blob, dtype="<f4", count=block.size, offset=off)
            block[...] = flat.reshape(block.shape)
            off += flat.nbytes
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise RanklmError(f"{path}: corrupt checkpoint ({exc})") from exc
    if off != len(blob):
        raise RanklmError(f"{path}: trailing bytes after parameter blocks")
    return params
