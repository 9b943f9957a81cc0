"""Sparse affinity graphs over patches and pixels.

The patch graph combines a kNN appearance affinity with a spatial kernel
(elementwise product); the pixel graph combines a color kernel with a binary
square-neighborhood mask. Both are symmetric, non-negative and zero-diagonal,
so the propagation system matrix stays symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

_KNN_CHUNK = 1024


@dataclass(frozen=True)
class PatchGraphConfig:
    """Patch-graph hyper-parameters.

    k: neighbors kept per node (exact brute-force kNN by cosine similarity).
    gamma: sharpening exponent of the appearance kernel; for the
        ``exp_one_minus_s`` variant it acts as the inverse bandwidth.
    sigma: spatial bandwidth in squared pixel units of the resized image.
    appearance_kernel: ``power`` -> max(cos, 0)**gamma;
        ``exp_one_minus_s`` -> exp(-gamma * (1 - cos)).
    spatial_kernel: ``rbf`` -> exp(-d^2 / sigma);
        ``linear`` -> max(0, 1 - d^2 / sigma).
    """

    k: int = 400
    gamma: float = 3.0
    sigma: float = 100.0
    appearance_kernel: str = "power"
    spatial_kernel: str = "rbf"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.appearance_kernel not in ("power", "exp_one_minus_s"):
            raise ValueError(f"unknown appearance_kernel {self.appearance_kernel!r}")
        if self.spatial_kernel not in ("rbf", "linear"):
            raise ValueError(f"unknown spatial_kernel {self.spatial_kernel!r}")


@dataclass(frozen=True)
class PixelGraphConfig:
    """Pixel-graph hyper-parameters.

    r: side of the square neighborhood (odd); every pixel pair with
        |dy| <= (r-1)/2 and |dx| <= (r-1)/2 is connected.
    tau: color bandwidth for exp(-||z_i - z_j||^2 / tau), assuming
        unit-scale features (e.g. rescaled Lab).
    max_edges: guard against accidental huge graphs (H * W * (r^2 - 1)).
    """

    r: int = 13
    tau: float = 0.01
    max_edges: int = 1 << 27

    def __post_init__(self):
        if self.r < 3 or self.r % 2 == 0:
            raise ValueError("r must be odd and >= 3")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


class GraphConstructionError(ValueError):
    """Invalid inputs or configuration for graph construction."""


@dataclass(frozen=True)
class SparseAdjacency:
    """Symmetric, zero-diagonal, non-negative sparse weight matrix (CSR)."""

    matrix: sparse.csr_matrix
    degrees: np.ndarray

    @classmethod
    def from_matrix(cls, mat, validate: bool = True) -> "SparseAdjacency":
        mat = sparse.csr_matrix(mat, dtype=np.float64)
        mat.eliminate_zeros()
        mat.sort_indices()
        if validate:
            _validate_adjacency(mat)
        degrees = np.asarray(mat.sum(axis=1)).ravel()
        return cls(matrix=mat, degrees=degrees)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def weights(self) -> np.ndarray:
        return self.matrix.data

    @property
    def num_edges(self) -> int:
        return self.matrix.nnz


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetrically degree-normalized adjacency: s_ij / sqrt(d_i * d_j).

    Rows of isolated nodes (degree 0) carry no entries, so propagation
    returns the damped initial scores there.
    """

    matrix: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _validate_adjacency(mat: sparse.csr_matrix) -> None:
    if mat.shape[0] != mat.shape[1]:
        raise GraphConstructionError(f"adjacency must be square, got {mat.shape}")
    if mat.nnz:
        if not np.isfinite(mat.data).all():
            raise GraphConstructionError("adjacency weights must be finite")
        if mat.data.min() < 0:
            raise GraphConstructionError("adjacency weights must be non-negative")
    if np.abs(mat.diagonal()).max(initial=0.0) != 0.0:
        raise GraphConstructionError("adjacency must have a zero diagonal")
    asym = (mat - mat.T).tocoo()
    if asym.nnz and np.abs(asym.data).max() > 1e-12:
        raise GraphConstructionError("adjacency must be symmetric")


def _appearance_weights(sims: np.ndarray, cfg: PatchGraphConfig) -> np.ndarray:
    if cfg.appearance_kernel == "power":
        # gamma may be odd and non-integer: clamp negatives before the power
        return np.maximum(sims, 0.0) ** cfg.gamma
    return np.exp(-cfg.gamma * (1.0 - sims))


def _spatial_weights(d2: np.ndarray, cfg: PatchGraphConfig) -> np.ndarray:
    if cfg.spatial_kernel == "rbf":
        return np.exp(-d2 / cfg.sigma)
    return np.maximum(0.0, 1.0 - d2 / cfg.sigma)


def build_patch_graph(
    features: np.ndarray, positions: np.ndarray, cfg: PatchGraphConfig
) -> SparseAdjacency:
    """Build the kNN patch graph from unit-norm features and pixel positions.

    For each node the ``cfg.k`` most cosine-similar other nodes are selected
    (ties broken by smaller index), each candidate edge weighted by
    appearance_kernel(cos) * spatial_kernel(||p_i - p_j||^2). The directed
    result is symmetrized as (W + W^T) / 2, with a missing direction
    contributing 0; zero-weight edges are pruned.

    Args:
        features: (N, d) array, rows l2-normalized.
        positions: (N, 2) array of (y, x) image coordinates.
        cfg: graph hyper-parameters; requires cfg.k < N.

    Returns:
        SparseAdjacency over the N nodes.
    """
    feats = np.asarray(features, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    if feats.ndim != 2 or pos.shape != (feats.shape[0], 2):
        raise GraphConstructionError(
            f"expected (N, d) features and (N, 2) positions, got {feats.shape}, {pos.shape}"
        )
    n = feats.shape[0]
    if n < 2:
        raise GraphConstructionError("need at least 2 nodes")
    if cfg.k >= n:
        raise GraphConstructionError(f"k too large: k={cfg.k} with {n} nodes")
    if not np.isfinite(feats).all():
        raise GraphConstructionError("features must be finite")
    if not np.isfinite(pos).all():
        raise GraphConstructionError("positions must be finite")

    rows = np.empty((n, cfg.k), dtype=np.int64)
    cols = np.empty((n, cfg.k), dtype=np.int64)
    vals = np.empty((n, cfg.k), dtype=np.float64)
    for start in range(0, n, _KNN_CHUNK):
        stop = min(start + _KNN_CHUNK, n)
        sims = feats[start:stop] @ feats.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        # stable sort on -sims keeps ascending index order among ties
        nbrs = np.argsort(-sims, axis=1, kind="stable")[:, : cfg.k]
        sel = np.take_along_axis(sims, nbrs, axis=1)
        d2 = ((pos[start:stop, None, :] - pos[nbrs]) ** 2).sum(axis=2)
        rows[start:stop] = np.arange(start, stop)[:, None]
        cols[start:stop] = nbrs
        vals[start:stop] = _appearance_weights(sel, cfg) * _spatial_weights(d2, cfg)

    directed = sparse.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
    ).tocsr()
    sym = (directed + directed.T) * 0.5
    sym.setdiag(0.0)
    return SparseAdjacency.from_matrix(sym)


def build_pixel_graph(pixel_features, cfg: PixelGraphConfig) -> SparseAdjacency:
    """Build the square-neighborhood pixel graph from a feature grid.

    One node per grid cell; edges connect exactly the pixel pairs within the
    r x r neighborhood (self excluded) with weight exp(-||z_i - z_j||^2 / tau).

    Args:
        pixel_features: FeatureGrid (or (H, W, d) array), e.g. rescaled Lab.
        cfg: pixel-graph hyper-parameters.
    """
    feats = np.asarray(getattr(pixel_features, "data", pixel_features), dtype=np.float64)
    if feats.ndim != 3:
        raise GraphConstructionError(f"expected (H, W, d) features, got {feats.shape}")
    if not np.isfinite(feats).all():
        raise GraphConstructionError("features must be finite")
    h, w = feats.shape[:2]
    n = h * w
    radius = (cfg.r - 1) // 2
    budget = n * (cfg.r * cfg.r - 1)
    if budget > cfg.max_edges:
        raise GraphConstructionError(
            f"pixel graph too large: ~{budget} edges exceeds max_edges={cfg.max_edges}"
        )

    node_ids = np.arange(n, dtype=np.int64).reshape(h, w)
    rows_acc, cols_acc, vals_acc = [], [], []
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue  # keep one of each symmetric offset pair
            ys = slice(0, h - dy)
            xs = slice(max(0, -dx), min(w, w - dx))
            ys2 = slice(dy, h)
            xs2 = slice(max(0, dx), min(w, w + dx))
            diff = feats[ys, xs] - feats[ys2, xs2]
            wgt = np.exp(-(diff * diff).sum(axis=2) / cfg.tau).ravel()
            i = node_ids[ys, xs].ravel()
            j = node_ids[ys2, xs2].ravel()
            rows_acc.extend((i, j))
            cols_acc.extend((j, i))
            vals_acc.extend((wgt, wgt))

    mat = sparse.coo_matrix(
        (np.concatenate(vals_acc), (np.concatenate(rows_acc), np.concatenate(cols_acc))),
        shape=(n, n),
    ).tocsr()
    return SparseAdjacency.from_matrix(mat)


def symmetric_normalize(adj: SparseAdjacency) -> NormalizedAdjacency:
    """Return D^{-1/2} S D^{-1/2}; isolated-node rows stay empty."""
    deg = adj.degrees
    dinv = np.zeros_like(deg)
    nz = deg > 0
    dinv[nz] = 1.0 / np.sqrt(deg[nz])
    mat = adj.matrix.tocoo(copy=True)
    mat.data = mat.data * dinv[mat.row] * dinv[mat.col]
    out = mat.tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return NormalizedAdjacency(matrix=out)
