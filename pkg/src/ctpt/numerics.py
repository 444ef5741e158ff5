"""Dense float64 linear algebra primitives and seeded randomness.

Every stochastic draw in the package flows through :class:`RngStream`, so a
single top-level seed pins down all "fixed random" matrices, sampling
decisions, and optimizer noise.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ArgumentError, ShapeError

# Name recorded in checkpoints next to the seed; changing the generator
# breaks reproducibility of every fixed projection, so it is a constant.
RNG_ALGORITHM = "philox4x64-numpy"


class RngStream:
    """Deterministic random stream (counter-based Philox core).

    Identical seeds produce identical draw sequences across runs and
    platforms. A stream is single-owner: share the values it produces,
    never the stream itself. Use :meth:`child` to derive independent
    streams for subcomponents.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ArgumentError(f"seed must be a non-negative integer, got {seed}")
        self.seed = int(seed)
        self.position = 0
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, position={self.position})"

    def child(self, tag: str) -> "RngStream":
        """Derive an independent stream keyed by ``tag``.

        The child seed is a stable hash of (parent seed, tag), so the
        derivation itself consumes no draws from this stream.
        """
        digest = hashlib.blake2b(
            self.seed.to_bytes(16, "little") + tag.encode("utf-8"), digest_size=8
        ).digest()
        return RngStream(int.from_bytes(digest, "little"))

    def _count(self, size) -> int:
        if size is None:
            return 1
        return int(np.prod(size))

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        self.position += self._count(size)
        return self._gen.normal(loc=mean, scale=std, size=size)

    def standard_normal(self, size=None):
        self.position += self._count(size)
        return self._gen.standard_normal(size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        self.position += self._count(size)
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        self.position += self._count(size)
        return self._gen.integers(low, high, size=size)

    def choice(self, seq, size=None, replace: bool = True):
        self.position += self._count(size)
        return self._gen.choice(seq, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        self.position += int(n)
        return self._gen.permutation(n)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises :class:`ShapeError` naming both operand shapes when the inner
    dimensions disagree. Result elements are verified finite.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ShapeError(f"matmul produced non-finite values for shapes {a.shape} x {b.shape}")
    return out


def softmax_rows(m: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``m * scale`` with max-subtraction for stability.

    Each output row is nonnegative and sums to 1; adding a constant to a
    row leaves its output unchanged.
    """
    m = np.asarray(m, dtype=np.float64)
    z = m * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax of a 1-D vector."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max()
    return shifted - np.log(np.exp(shifted).sum())


def gaussian_matrix(rng: RngStream, rows: int, cols: int, std: float) -> np.ndarray:
    """Fresh (rows, cols) matrix of i.i.d. N(0, std^2) entries.

    Deterministic for a fixed stream state; used for every fixed random
    projection in the package.
    """
    if std <= 0:
        raise ArgumentError(f"std must be positive, got {std}")
    if rows < 1 or cols < 1:
        raise ArgumentError(f"matrix dims must be >= 1, got {rows}x{cols}")
    return rng.normal(size=(rows, cols), std=std)
