"""Covariance Matrix Adaptation Evolution Strategy with an ask/tell interface.

The optimizer never touches an objective function: callers draw a
:class:`CandidateBatch` with :meth:`CmaEs.ask`, fill in the losses however
they like (sequentially or in parallel), and hand the batch back through
:meth:`CmaEs.tell`. Strategy parameters follow the standard published
defaults for the rank-mu update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ProtocolError
from .numerics import RngStream

log = logging.getLogger(__name__)

# Smallest admissible covariance eigenvalue; anything below is floored.
EIGENVALUE_FLOOR = 1e-12


def default_population_size(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


@dataclass
class CandidateBatch:
    """One generation of samples plus caller-supplied losses."""

    candidates: np.ndarray  # (lam, dim)
    losses: np.ndarray = field(init=False)

    def __post_init__(self):
        self.losses = np.full(len(self.candidates), np.nan)

    def __len__(self) -> int:
        return len(self.candidates)


class CmaEs:
    """Minimizer state: sampling mean, step size sigma, covariance C.

    The instance owns the RngStream handed to the constructor. ``ask`` may
    only be called once per generation; ``tell`` requires the batch most
    recently produced by ``ask`` with every loss finite.
    """

    def __init__(
        self,
        dim: int,
        initial_mean: np.ndarray,
        initial_sigma: float,
        rng: RngStream,
        population_size: int | None = None,
    ):
        if dim < 1:
            raise ArgumentError(f"dim must be >= 1, got {dim}")
        if initial_sigma <= 0:
            raise ArgumentError(f"initial_sigma must be positive, got {initial_sigma}")
        initial_mean = np.asarray(initial_mean, dtype=np.float64).reshape(-1)
        if initial_mean.shape != (dim,):
            raise ArgumentError(
                f"initial_mean length {initial_mean.shape[0]} does not match dim {dim}"
            )

        self.dim = dim
        self.mean = initial_mean.copy()
        self.sigma = float(initial_sigma)
        self.rng = rng

        lam = population_size if population_size is not None else default_population_size(dim)
        if lam < 2:
            raise ArgumentError(f"population_size must be >= 2, got {lam}")
        self.lam = int(lam)
        self.mu = self.lam // 2

        # Log-linear recombination weights over the mu best candidates.
        raw = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = raw / raw.sum()
        self.mu_eff = 1.0 / np.sum(self.weights**2)

        n, mu_eff = float(dim), self.mu_eff
        self.c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
        self.d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + self.c_sigma
        self.c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
        self.c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
        self.c_mu = min(1 - self.c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.C = np.eye(dim)
        self.p_sigma = np.zeros(dim)
        self.p_c = np.zeros(dim)
        self.generation = 0
        self.evaluations = 0
        self.best_vector: np.ndarray | None = None
        self.best_loss = math.inf
        self._pending: CandidateBatch | None = None

    # -- sampling -----------------------------------------------------------

    def ask(self) -> CandidateBatch:
        """Draw lam candidates from N(mean, sigma^2 C)."""
        if self._pending is not None:
            raise ProtocolError("ask called again before tell for the previous batch")
        eigvals, eigvecs = np.linalg.eigh(self.C)
        floored = eigvals < EIGENVALUE_FLOOR
        if floored.any():
            log.warning("flooring %d covariance eigenvalues to %g", floored.sum(), EIGENVALUE_FLOOR)
            eigvals = np.maximum(eigvals, EIGENVALUE_FLOOR)
            self.C = (eigvecs * eigvals) @ eigvecs.T
        scales = np.sqrt(eigvals)
        z = self.rng.standard_normal((self.lam, self.dim))
        candidates = self.mean + self.sigma * (z * scales) @ eigvecs.T
        self._eigvals = eigvals
        self._eigvecs = eigvecs
        batch = CandidateBatch(candidates)
        self._pending = batch
        return batch

    # -- update -------------------------------------------------------------

    def tell(self, batch: CandidateBatch) -> None:
        """Consume evaluated losses and adapt mean, sigma, C, and paths."""
        if self._pending is None or batch is not self._pending:
            raise ProtocolError("tell requires the batch from the most recent ask")
        losses = np.asarray(batch.losses, dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(losses))
        if bad.size:
            raise ProtocolError(f"non-finite loss for candidate index {int(bad[0])}")
        self._pending = None
        self.evaluations += self.lam
        self.generation += 1

        # Stable sort keeps candidate-index order on loss ties.
        order = np.argsort(losses, kind="stable")
        xs = batch.candidates[order]
        if losses[order[0]] < self.best_loss:
            self.best_loss = float(losses[order[0]])
            self.best_vector = xs[0].copy()

        x_old = self.mean
        self.mean = self.weights @ xs[: self.mu]
        y_mean = (self.mean - x_old) / self.sigma

        inv_sqrt_scale = 1.0 / np.sqrt(self._eigvals)
        c_inv_sqrt_y = (self._eigvecs * inv_sqrt_scale) @ (self._eigvecs.T @ y_mean)
        self.p_sigma = (1 - self.c_sigma) * self.p_sigma + math.sqrt(
            self.c_sigma * (2 - self.c_sigma) * self.mu_eff
        ) * c_inv_sqrt_y

        ps_norm2 = float(self.p_sigma @ self.p_sigma)
        expected_decay = 1 - (1 - self.c_sigma) ** (2 * self.generation)
        h_sigma = ps_norm2 / expected_decay / self.dim < 2 + 4 / (self.dim + 1)
        self.p_c = (1 - self.c_c) * self.p_c + h_sigma * math.sqrt(
            self.c_c * (2 - self.c_c) * self.mu_eff
        ) * y_mean

        ys = (xs[: self.mu] - x_old) / self.sigma
        rank_mu = ys.T @ (self.weights[:, None] * ys)
        c1_adjust = (1 - h_sigma) * self.c_c * (2 - self.c_c)
        self.C = (
            (1 - self.c_1 - self.c_mu) * self.C
            + self.c_1 * (np.outer(self.p_c, self.p_c) + c1_adjust * self.C)
            + self.c_mu * rank_mu
        )
        self.C = (self.C + self.C.T) / 2

        self.sigma *= math.exp(
            (self.c_sigma / self.d_sigma) * (math.sqrt(ps_norm2) / self.chi_n - 1)
        )

    # -- reporting ----------------------------------------------------------

    def trace_record(self) -> dict:
        """One line-delimited trace entry: generation, evals, best loss, sigma."""
        return {
            "generation": self.generation,
            "evaluations": self.evaluations,
            "best_loss": self.best_loss,
            "sigma": self.sigma,
        }
