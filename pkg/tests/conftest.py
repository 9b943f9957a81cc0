"""Shared test helpers: random graph generators and dense oracles."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from segprop.graph import NormalizedAdjacency, SparseAdjacency, symmetric_normalize


def random_adjacency(
    rng: np.random.Generator,
    n: int,
    density: float = 0.2,
    ensure_connected: bool = False,
) -> SparseAdjacency:
    """A random symmetric non-negative zero-diagonal weight matrix."""
    dense = rng.uniform(0.0, 1.0, size=(n, n))
    mask = rng.uniform(size=(n, n)) < density
    dense = np.where(mask, dense, 0.0)
    dense = (dense + dense.T) / 2.0
    np.fill_diagonal(dense, 0.0)
    if ensure_connected:
        # chain of edges guarantees no isolated nodes
        for i in range(n - 1):
            w = rng.uniform(0.1, 1.0)
            dense[i, i + 1] = w
            dense[i + 1, i] = w
    return SparseAdjacency.from_matrix(sparse.csr_matrix(dense))


def random_normalized(
    rng: np.random.Generator, n: int, density: float = 0.2, ensure_connected: bool = False
) -> NormalizedAdjacency:
    return symmetric_normalize(random_adjacency(rng, n, density, ensure_connected))


def dense_lp_oracle(s_hat: NormalizedAdjacency, scores: np.ndarray, alpha: float) -> np.ndarray:
    """Closed-form fixed point (1 - alpha) (I - alpha S_hat)^{-1} Y by dense solve."""
    n = s_hat.n
    mat = np.eye(n) - alpha * s_hat.matrix.toarray()
    return (1.0 - alpha) * np.linalg.solve(mat, np.asarray(scores, dtype=np.float64))
