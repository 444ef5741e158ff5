"""Prompt assembly machinery: intrinsic projections, cross-task attention,
the observation gate, and the input pattern builder.

Low-dimensional learnable vectors are expanded to full parameter space
through fixed random affine projections; everything here is a pure function
of (seeds, vectors, prompts).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigError, ShapeError
from .frozen_model import EncodedInput, FrozenModel
from .numerics import RngStream, gaussian_matrix, matmul, softmax_rows

# Fixed attention offsets are identity-centered: queries and keys start as
# the raw prompt rows (content-matched attention) and the value map starts
# as a pass-through scaled so the head sum stays at prompt magnitude. The
# random part keeps them "fixed random" draws rather than exact identities.
ATTN_OFFSET_NOISE_FACTOR = 0.25  # noise std, multiplied by 1/d
ATTN_QK_IDENTITY = 1.0
ATTN_VALUE_IDENTITY_FACTOR = 1.0  # divided by head count


@dataclass(frozen=True)
class SubspaceProjection:
    """Fixed random affine map from intrinsic space to a parameter block."""

    A: np.ndarray  # (target_dim, intrinsic_dim)
    offset: np.ndarray  # (target_dim,)
    seed: int

    def __post_init__(self):
        self.A.flags.writeable = False
        self.offset.flags.writeable = False

    @property
    def intrinsic_dim(self) -> int:
        return self.A.shape[1]

    @property
    def target_dim(self) -> int:
        return self.A.shape[0]

    def project(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape[0] != self.intrinsic_dim:
            raise ShapeError(
                f"intrinsic vector length {z.shape[0]} does not match projection "
                f"intrinsic_dim {self.intrinsic_dim}"
            )
        return matmul(self.A, z[:, None])[:, 0] + self.offset


def make_projection(seed_stream: RngStream, target_dim: int, intrinsic_dim: int,
                    offset: np.ndarray) -> SubspaceProjection:
    """Create a fixed projection; entries N(0, 1/sqrt(intrinsic_dim))."""
    offset = np.asarray(offset, dtype=np.float64).reshape(-1).copy()
    if offset.shape[0] != target_dim:
        raise ShapeError(f"offset length {offset.shape[0]} != target_dim {target_dim}")
    A = gaussian_matrix(seed_stream, target_dim, intrinsic_dim, std=1.0 / np.sqrt(intrinsic_dim))
    return SubspaceProjection(A=A, offset=offset, seed=seed_stream.seed)


@dataclass(frozen=True)
class AttentionParams:
    """Query/key/value maps for cross-task attention; d divisible by heads."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    heads: int

    def __post_init__(self):
        d = self.wq.shape[0]
        for name, w in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv)):
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be square {d}x{d}, got {w.shape}")
        if d % self.heads:
            raise ShapeError(f"embed dim {d} not divisible by head count {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.wq.shape[0] // self.heads


def default_prompt_offset(model: FrozenModel, n: int) -> np.ndarray:
    """Initial prompt: embeddings of the n most frequent non-special tokens."""
    ids = model.vocab.most_frequent(n)
    return model.params["embed"][ids].reshape(-1).copy()


def make_prompt_projection(model: FrozenModel, n: int, intrinsic_dim: int,
                           seed_stream: RngStream) -> SubspaceProjection:
    d = model.config.embed_dim
    return make_projection(seed_stream, n * d, intrinsic_dim, default_prompt_offset(model, n))


def make_attention_projection(embed_dim: int, intrinsic_dim: int,
                              seed_stream: RngStream, heads: int = 4) -> SubspaceProjection:
    """Projection whose target is the concatenated Q, K, V parameter blocks."""
    d = embed_dim
    offset_rng = seed_stream.child("offsets")
    noise = offset_rng.normal(size=(3, d, d), std=ATTN_OFFSET_NOISE_FACTOR / d)
    eye = np.eye(d)
    noise[0] += ATTN_QK_IDENTITY * eye
    noise[1] += ATTN_QK_IDENTITY * eye
    noise[2] += (ATTN_VALUE_IDENTITY_FACTOR / heads) * eye
    return make_projection(seed_stream.child("matrix"), 3 * d * d, intrinsic_dim,
                           noise.reshape(-1))


def make_gate_projection(n: int, intrinsic_dim: int, seed_stream: RngStream,
                         g0: np.ndarray | None = None) -> SubspaceProjection:
    offset = np.zeros(n) if g0 is None else np.asarray(g0, dtype=np.float64)
    return make_projection(seed_stream, n, intrinsic_dim, offset)


# -- operations ----------------------------------------------------------------


def project_prompt(proj: SubspaceProjection, z: np.ndarray, n: int, d: int) -> np.ndarray:
    """Expand an intrinsic vector to an (n, d) prompt matrix."""
    if proj.target_dim != n * d:
        raise ShapeError(f"projection target_dim {proj.target_dim} != n*d = {n * d}")
    return proj.project(z).reshape(n, d)


def unpack_attention(proj: SubspaceProjection, z: np.ndarray, d: int, heads: int) -> AttentionParams:
    """Split a projected vector into Q, K, V blocks (in that order)."""
    if proj.target_dim != 3 * d * d:
        raise ConfigError(
            f"attention projection target_dim {proj.target_dim} != 3*d^2 = {3 * d * d}"
        )
    flat = proj.project(z)
    blocks = flat.reshape(3, d, d)
    return AttentionParams(wq=blocks[0], wk=blocks[1], wv=blocks[2], heads=heads)


def cross_task_attend(target: np.ndarray, sources: list[np.ndarray],
                      params: AttentionParams) -> np.ndarray:
    """Aggregate source prompts into a cross-task prompt.

    For each source, queries come from the target prompt and keys/values
    from the source; per-head scores use 1/sqrt(head_dim) scaling, each
    head's attention pattern is applied to the full value matrix, and heads
    and sources are combined by summation (no output projection).
    """
    if not sources:
        raise ArgumentError("cross-task attention requires at least one source prompt")
    n, d = target.shape
    hd = params.head_dim
    q_full = matmul(target, params.wq.T)
    out = np.zeros((n, d))
    for src in sources:
        if src.shape != (n, d):
            raise ShapeError(f"source prompt shape {src.shape} != target shape {(n, d)}")
        k_full = matmul(src, params.wk.T)
        v_full = matmul(src, params.wv.T)
        for h in range(params.heads):
            sl = slice(h * hd, (h + 1) * hd)
            scores = matmul(q_full[:, sl], k_full[:, sl].T)
            attn = softmax_rows(scores, scale=1.0 / np.sqrt(hd))
            out += matmul(attn, v_full)
    return out


def attention_row_weights(target: np.ndarray, source: np.ndarray,
                          params: AttentionParams) -> np.ndarray:
    """Per-head attention weights (heads, n, n); rows sum to 1."""
    hd = params.head_dim
    q_full = matmul(target, params.wq.T)
    k_full = matmul(source, params.wk.T)
    out = np.zeros((params.heads, target.shape[0], source.shape[0]))
    for h in range(params.heads):
        sl = slice(h * hd, (h + 1) * hd)
        out[h] = softmax_rows(matmul(q_full[:, sl], k_full[:, sl].T), scale=1.0 / np.sqrt(hd))
    return out


def project_gate(proj: SubspaceProjection, z: np.ndarray) -> np.ndarray:
    """Gate vector in (0, 1): logistic squash of the affine projection."""
    pre = proj.project(z)
    return 1.0 / (1.0 + np.exp(-pre))


def gate_combine(gate: np.ndarray, task_prompt: np.ndarray,
                 cross_prompt: np.ndarray) -> np.ndarray:
    """Per-token convex mix: row k = g[k]*task + (1-g[k])*cross."""
    gate = np.asarray(gate, dtype=np.float64).reshape(-1)
    if task_prompt.shape != cross_prompt.shape:
        raise ShapeError(
            f"prompt shapes differ: {task_prompt.shape} vs {cross_prompt.shape}"
        )
    if gate.shape[0] != task_prompt.shape[0]:
        raise ShapeError(
            f"gate length {gate.shape[0]} != prompt rows {task_prompt.shape[0]}"
        )
    return gate[:, None] * task_prompt + (1.0 - gate)[:, None] * cross_prompt


def build_pattern(model: FrozenModel, prompt: np.ndarray, token_ids: np.ndarray) -> EncodedInput:
    """Turn a prompt and conversation tokens into one model input.

    The final prompt row is overwritten with the [UNK] embedding, a single
    [MASK] is appended at the answer slot, and over-long inputs are
    left-truncated so the most recent tokens survive.
    """
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.size == 0:
        raise ArgumentError("cannot build a pattern from an empty conversation")
    n = prompt.shape[0]
    patterned = prompt.copy()
    patterned[-1] = model.embedding_row(model.vocab.unk_id)
    budget = model.config.max_len - n - 1
    if budget <= 0:
        raise ArgumentError(f"prompt length {n} leaves no room under max_len")
    if len(token_ids) > budget:
        token_ids = token_ids[-budget:]
    ids = np.concatenate([token_ids, [model.vocab.mask_id]])
    return EncodedInput(token_ids=ids, mask_index=len(ids) - 1, prompt=patterned)
