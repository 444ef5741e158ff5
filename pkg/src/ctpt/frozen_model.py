"""Small deterministic masked-token transformer encoder.

The model is pretrained once on a synthetic corpus with a masked-token
objective, then frozen; every later stage only runs the forward pass.
Pretraining is the sole gradient-using code in the package and is private
to :func:`pretrain`.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_records, save_records
from .corpus import SPECIALS
from .errors import ArgumentError, FormatError
from .numerics import RNG_ALGORITHM, RngStream

_NEG = -1e30  # additive attention mask; exp() underflows to exactly 0.0
_LN_EPS = 1e-5


class Vocabulary:
    """Ordered token inventory with special ids and corpus frequencies."""

    def __init__(self, tokens: list[str], frequencies: dict[str, int] | None = None):
        if len(set(tokens)) != len(tokens):
            raise ArgumentError("vocabulary tokens must be unique")
        for special in SPECIALS:
            if tokens.count(special) != 1:
                raise ArgumentError(f"special token {special} must appear exactly once")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(tokens)}
        self.pad_id = self.index["[PAD]"]
        self.unk_id = self.index["[UNK]"]
        self.mask_id = self.index["[MASK]"]
        self.sep_id = self.index["[SEP]"]
        self.special_ids = frozenset((self.pad_id, self.unk_id, self.mask_id, self.sep_id))
        freq = frequencies or {}
        self.frequencies = np.array(
            [0 if t in SPECIALS else int(freq.get(t, 0)) for t in tokens], dtype=np.int64
        )

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: list[str]) -> np.ndarray:
        return np.array([self.index.get(w, self.unk_id) for w in words], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def most_frequent(self, n: int) -> np.ndarray:
        """Ids of the n most frequent non-special tokens (ties by id)."""
        order = np.lexsort((np.arange(len(self.tokens)), -self.frequencies))
        order = [i for i in order if i not in self.special_ids]
        if len(order) < n:
            raise ArgumentError(f"vocabulary has only {len(order)} non-special tokens, need {n}")
        return np.array(order[:n], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "frequencies": {t: int(c) for t, c in zip(self.tokens, self.frequencies) if c},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["tokens"], d.get("frequencies", {}))


def build_vocabulary(tokens: list[str], corpus: list[list[str]]) -> Vocabulary:
    counts = Counter(tok for sent in corpus for tok in sent)
    return Vocabulary(tokens, dict(counts))


@dataclass
class ModelConfig:
    embed_dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 256
    # pretraining schedule
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    mask_prob: float = 0.15
    mask_last_prob: float = 0.5  # chance to mask only the final token

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        cfg.mask_last_prob = float(d.get("mask_last_prob", cfg.mask_last_prob))
        return cfg


@dataclass
class EncodedInput:
    """One model input: continuous prompt rows plus discrete token ids.

    ``token_ids`` contains exactly one [MASK]; ``mask_index`` points at it.
    ``prompt`` may be None for plain text inputs.
    """

    token_ids: np.ndarray
    mask_index: int
    prompt: np.ndarray | None = None

    def prompt_len(self) -> int:
        return 0 if self.prompt is None else self.prompt.shape[0]


class FrozenModel:
    """Transformer encoder with a mask-prediction head; immutable once frozen."""

    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocabulary,
        params: dict[str, np.ndarray],
        rng_record: dict,
    ):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.rng_record = dict(rng_record)
        self.frozen = False

    # -- lifecycle ----------------------------------------------------------

    def freeze(self) -> None:
        for arr in self.params.values():
            arr.flags.writeable = False
        self.frozen = True

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    def embedding_row(self, token_id: int) -> np.ndarray:
        return self.params["embed"][token_id]

    # -- inference ----------------------------------------------------------

    def forward(self, enc: EncodedInput) -> np.ndarray:
        """Logits over the vocabulary at the single mask position."""
        return self.forward_batch([enc])[0]

    def forward_batch(self, inputs: list[EncodedInput]) -> np.ndarray:
        """Vectorized forward over variable-length inputs; (B, |V|) logits.

        Padding positions are attention-masked, so any amount of [PAD] tail
        leaves the mask logits bit-for-bit unchanged.
        """
        if not self.frozen:
            raise ArgumentError("model must be frozen before inference forward passes")
        cfg, p = self.config, self.params
        d = cfg.embed_dim
        batch = len(inputs)
        lengths = []
        for enc in inputs:
            ids = np.asarray(enc.token_ids)
            if np.count_nonzero(ids == self.vocab.mask_id) != 1:
                raise ArgumentError("input must contain exactly one [MASK] token")
            if ids[enc.mask_index] != self.vocab.mask_id:
                raise ArgumentError(f"mask_index {enc.mask_index} does not point at [MASK]")
            total = enc.prompt_len() + len(ids)
            if total > cfg.max_len:
                raise ArgumentError(f"encoded length {total} exceeds max_len {cfg.max_len}")
            if enc.prompt is not None and enc.prompt.shape[1] != d:
                raise ArgumentError(
                    f"prompt width {enc.prompt.shape[1]} does not match embed dim {d}"
                )
            lengths.append(total)

        L = max(lengths)
        x = np.zeros((batch, L, d))
        kmask = np.zeros((batch, L), dtype=bool)
        mask_rows = np.zeros(batch, dtype=np.int64)
        for i, enc in enumerate(inputs):
            n = enc.prompt_len()
            if n:
                x[i, :n] = enc.prompt
            ids = np.asarray(enc.token_ids, dtype=np.int64)
            x[i, n : n + len(ids)] = p["embed"][ids]
            x[i, : lengths[i]] += p["pos"][: lengths[i]]
            kmask[i, : lengths[i]] = True
            kmask[i, n : n + len(ids)] = ids != self.vocab.pad_id
            mask_rows[i] = n + enc.mask_index

        h = _encode(x, kmask, cfg, p)
        at_mask = h[np.arange(batch), mask_rows]
        return at_mask @ p["head.w"] + p["head.b"]


# -- shared forward pieces ----------------------------------------------------


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return g * (x - mu) / np.sqrt(var + _LN_EPS) + b


def _attention(a, kmask, wq, wk, wv, wo, heads):
    B, L, d = a.shape
    dh = d // heads
    q = (a @ wq).reshape(B, L, heads, dh).transpose(0, 2, 1, 3)
    k = (a @ wk).reshape(B, L, heads, dh).transpose(0, 2, 1, 3)
    v = (a @ wv).reshape(B, L, heads, dh).transpose(0, 2, 1, 3)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    scores = np.where(kmask[:, None, None, :], scores, _NEG)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    o = (attn @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
    return o @ wo


def _encode(x: np.ndarray, kmask: np.ndarray, cfg: ModelConfig, p: dict) -> np.ndarray:
    for i in range(cfg.layers):
        a = _layer_norm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
        x = x + _attention(
            a, kmask, p[f"l{i}.wq"], p[f"l{i}.wk"], p[f"l{i}.wv"], p[f"l{i}.wo"], cfg.heads
        )
        b = _layer_norm(x, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
        f = np.maximum(b @ p[f"l{i}.w1"] + p[f"l{i}.b1"], 0.0) @ p[f"l{i}.w2"] + p[f"l{i}.b2"]
        x = x + f
    return _layer_norm(x, p["lnf.g"], p["lnf.b"])


# -- pretraining --------------------------------------------------------------


def _init_params(cfg: ModelConfig, vocab_size: int, rng: RngStream) -> dict[str, np.ndarray]:
    d, ff = cfg.embed_dim, cfg.ffn_dim
    p: dict[str, np.ndarray] = {
        "embed": rng.normal(size=(vocab_size, d), std=0.1),
        "pos": rng.normal(size=(cfg.max_len, d), std=0.1),
    }
    for i in range(cfg.layers):
        for name in ("wq", "wk", "wv", "wo"):
            p[f"l{i}.{name}"] = rng.normal(size=(d, d), std=1 / np.sqrt(d))
        p[f"l{i}.w1"] = rng.normal(size=(d, ff), std=1 / np.sqrt(d))
        p[f"l{i}.b1"] = np.zeros(ff)
        p[f"l{i}.w2"] = rng.normal(size=(ff, d), std=1 / np.sqrt(ff))
        p[f"l{i}.b2"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            p[f"l{i}.{ln}.g"] = np.ones(d)
            p[f"l{i}.{ln}.b"] = np.zeros(d)
    p["lnf.g"] = np.ones(d)
    p["lnf.b"] = np.zeros(d)
    p["head.w"] = rng.normal(size=(d, vocab_size), std=1 / np.sqrt(d))
    p["head.b"] = np.zeros(vocab_size)
    return p


def _training_forward(ids, kmask, targets, cfg, p):
    """Forward with cached intermediates; loss averaged over target positions.

    ``targets`` is (B, L) with -1 everywhere except masked positions.
    """
    B, L = ids.shape
    d = cfg.embed_dim
    x = p["embed"][ids] + p["pos"][:L]
    cache: dict = {"ids": ids, "kmask": kmask, "layers": []}
    for i in range(cfg.layers):
        lc: dict = {"x_in": x}
        a = _layer_norm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
        lc["a"] = a
        dh = d // cfg.heads
        q = (a @ p[f"l{i}.wq"]).reshape(B, L, cfg.heads, dh).transpose(0, 2, 1, 3)
        k = (a @ p[f"l{i}.wk"]).reshape(B, L, cfg.heads, dh).transpose(0, 2, 1, 3)
        v = (a @ p[f"l{i}.wv"]).reshape(B, L, cfg.heads, dh).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
        scores = np.where(kmask[:, None, None, :], scores, _NEG)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctx = attn @ v
        merged = ctx.transpose(0, 2, 1, 3).reshape(B, L, d)
        lc.update(q=q, k=k, v=v, attn=attn, merged=merged)
        x = x + merged @ p[f"l{i}.wo"]
        lc["x_mid"] = x
        b = _layer_norm(x, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
        lc["b"] = b
        pre = b @ p[f"l{i}.w1"] + p[f"l{i}.b1"]
        hid = np.maximum(pre, 0.0)
        lc.update(pre=pre, hid=hid)
        x = x + hid @ p[f"l{i}.w2"]
        x = x + p[f"l{i}.b2"]
        cache["layers"].append(lc)
    cache["x_final"] = x
    h = _layer_norm(x, p["lnf.g"], p["lnf.b"])
    cache["h"] = h
    logits = h @ p["head.w"] + p["head.b"]

    sel = targets >= 0
    rows = logits[sel]
    gold = targets[sel]
    shifted = rows - rows.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(len(gold)), gold]))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    dlogits = np.zeros_like(logits)
    grad_rows = probs
    grad_rows[np.arange(len(gold)), gold] -= 1.0
    dlogits[sel] = grad_rows / len(gold)
    cache["dlogits"] = dlogits
    return loss, cache


def _layer_norm_backward(dy, x, g):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _training_backward(cache, cfg, p):
    B, L = cache["ids"].shape
    d = cfg.embed_dim
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    dlogits = cache["dlogits"]
    grads["head.w"] += cache["h"].reshape(-1, d).T @ dlogits.reshape(-1, len(p["head.b"]))
    grads["head.b"] += dlogits.sum(axis=(0, 1))
    dh = dlogits @ p["head.w"].T
    dx, dg, db = _layer_norm_backward(dh, cache["x_final"], p["lnf.g"])
    grads["lnf.g"] += dg
    grads["lnf.b"] += db

    for i in reversed(range(cfg.layers)):
        lc = cache["layers"][i]
        # feed-forward residual branch
        grads[f"l{i}.b2"] += dx.sum(axis=(0, 1))
        dhid = dx @ p[f"l{i}.w2"].T
        grads[f"l{i}.w2"] += lc["hid"].reshape(-1, cfg.ffn_dim).T @ dx.reshape(-1, d)
        dpre = dhid * (lc["pre"] > 0)
        grads[f"l{i}.w1"] += lc["b"].reshape(-1, d).T @ dpre.reshape(-1, cfg.ffn_dim)
        grads[f"l{i}.b1"] += dpre.sum(axis=(0, 1))
        db_in = dpre @ p[f"l{i}.w1"].T
        dx_mid, dg, dbv = _layer_norm_backward(db_in, lc["x_mid"], p[f"l{i}.ln2.g"])
        grads[f"l{i}.ln2.g"] += dg
        grads[f"l{i}.ln2.b"] += dbv
        dx = dx + dx_mid

        # attention residual branch
        dmerged = dx @ p[f"l{i}.wo"].T
        grads[f"l{i}.wo"] += lc["merged"].reshape(-1, d).T @ dx.reshape(-1, d)
        heads = cfg.heads
        dhd = d // heads
        dctx = dmerged.reshape(B, L, heads, dhd).transpose(0, 2, 1, 3)
        dattn = dctx @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["attn"].transpose(0, 1, 3, 2) @ dctx
        attn = lc["attn"]
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(dhd)
        dq = dscores @ lc["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ lc["q"]
        da = np.zeros_like(lc["a"])
        for mat, dmat, name in ((lc["q"], dq, "wq"), (lc["k"], dk, "wk"), (lc["v"], dv, "wv")):
            flat = dmat.transpose(0, 2, 1, 3).reshape(B, L, d)
            grads[f"l{i}.{name}"] += lc["a"].reshape(-1, d).T @ flat.reshape(-1, d)
            da += flat @ p[f"l{i}.{name}"].T
        dx_in, dg, dbv = _layer_norm_backward(da, lc["x_in"], p[f"l{i}.ln1.g"])
        grads[f"l{i}.ln1.g"] += dg
        grads[f"l{i}.ln1.b"] += dbv
        dx = dx + dx_in

    grads["pos"][:L] += dx.sum(axis=0)
    np.add.at(grads["embed"], cache["ids"], dx)
    return grads


def pretrain(corpus: list[list[str]], vocab: Vocabulary, config: ModelConfig, rng: RngStream) -> FrozenModel:
    """Train a masked-token encoder on the corpus, then freeze it.

    The returned model is immutable; its checkpoint records the RNG
    algorithm and seed that produced every parameter.
    """
    if not corpus:
        raise ArgumentError("pretraining corpus is empty")
    seed = rng.seed
    init_rng = rng.child("init")
    sched_rng = rng.child("schedule")
    params = _init_params(config, len(vocab), init_rng)

    encoded = [vocab.encode(sent) for sent in corpus]
    too_long = [i for i, ids in enumerate(encoded) if len(ids) > config.max_len]
    if too_long:
        raise ArgumentError(f"corpus sentence {too_long[0]} exceeds max_len {config.max_len}")

    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    for step in range(config.steps):
        picks = sched_rng.integers(0, len(encoded), size=config.batch_size)
        seqs = [encoded[int(i)] for i in picks]
        L = max(len(s) for s in seqs)
        ids = np.full((config.batch_size, L), vocab.pad_id, dtype=np.int64)
        kmask = np.zeros((config.batch_size, L), dtype=bool)
        targets = np.full((config.batch_size, L), -1, dtype=np.int64)
        for b, seq in enumerate(seqs):
            ids[b, : len(seq)] = seq
            kmask[b, : len(seq)] = True
            if sched_rng.uniform() < config.mask_last_prob:
                positions = [len(seq) - 1]
            else:
                flips = sched_rng.uniform(size=len(seq)) < config.mask_prob
                positions = [j for j in range(len(seq)) if flips[j]] or [
                    int(sched_rng.integers(0, len(seq)))
                ]
            for j in positions:
                targets[b, j] = ids[b, j]
                ids[b, j] = vocab.mask_id

        loss, cache = _training_forward(ids, kmask, targets, config, params)
        grads = _training_backward(cache, config, params)
        t = step + 1
        lr_t = config.learning_rate * np.sqrt(1 - beta2**t) / (1 - beta1**t)
        for name, g in grads.items():
            adam_m[name] = beta1 * adam_m[name] + (1 - beta1) * g
            adam_v[name] = beta2 * adam_v[name] + (1 - beta2) * g * g
            params[name] -= lr_t * adam_m[name] / (np.sqrt(adam_v[name]) + eps)

    model = FrozenModel(
        config, vocab, params, {"algorithm": RNG_ALGORITHM, "seed": seed}
    )
    model.freeze()
    return model


# -- persistence ---------------------------------------------------------------


def save_model(model: FrozenModel, path) -> None:
    metadata = {
        "kind": "frozen-model",
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "rng": model.rng_record,
        "checksum": model.checksum(),
    }
    save_records(path, metadata, model.params)


def load_model(path) -> FrozenModel:
    metadata, records = load_records(path)
    if metadata.get("kind") != "frozen-model":
        raise FormatError(f"container holds {metadata.get('kind')!r}, expected 'frozen-model'")
    model = FrozenModel(
        ModelConfig.from_dict(metadata["config"]),
        Vocabulary.from_dict(metadata["vocab"]),
        records,
        metadata["rng"],
    )
    model.freeze()
    if model.checksum() != metadata["checksum"]:
        raise FormatError("parameter checksum mismatch; checkpoint corrupt")
    return model
