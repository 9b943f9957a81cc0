"""Label propagation solvers over a normalized adjacency.

Propagation refines initial node scores Y by iterating
``Y_hat <- alpha * S_hat @ Y_hat + (1 - alpha) * Y`` or, equivalently, by
solving the SPD system ``(I - alpha * S_hat) X = Y`` per class column with
conjugate gradient. The two differ by the fixed scale (1 - alpha), selected
via ``scale_convention``; per-node argmax is invariant to that choice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import NormalizedAdjacency, SparseAdjacency


@dataclass(frozen=True)
class PropagationConfig:
    """Damping and stopping parameters for label propagation.

    scale_convention: ``fixed_point`` returns (1-alpha) (I - alpha S)^-1 Y,
    matching the iterative update's limit; ``system`` returns the raw linear
    system solution (I - alpha S)^-1 Y.
    """

    alpha: float = 0.95
    cg_tol: float = 1e-6
    cg_max_iter: int = 1000
    iter_tol: float = 1e-8
    iter_max: int = 10000
    scale_convention: str = "fixed_point"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.cg_tol <= 0 or self.iter_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.scale_convention not in ("system", "fixed_point"):
            raise ValueError(f"unknown scale_convention {self.scale_convention!r}")


class ConvergenceError(RuntimeError):
    """A solver failed to reach its tolerance within the iteration budget."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def _check_scores(s_hat: NormalizedAdjacency, scores: np.ndarray) -> np.ndarray:
    y = np.asarray(scores, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != s_hat.n:
        raise ValueError(f"scores must be ({s_hat.n}, C), got {y.shape}")
    if not np.isfinite(y).all():
        raise ValueError("scores must be finite")
    return y


def lp_iterate(
    s_hat: NormalizedAdjacency, scores: np.ndarray, cfg: PropagationConfig
) -> np.ndarray:
    """Run the damped propagation update to its fixed point.

    Starts from Y and repeats ``alpha * S_hat @ Y_hat + (1 - alpha) * Y``
    until the max-abs update falls below ``cfg.iter_tol``.

    Raises:
        ConvergenceError: update still above tolerance after ``iter_max``.
    """
    y = _check_scores(s_hat, scores)
    mat = s_hat.matrix
    y_hat = y.copy()
    delta = np.inf
    for it in range(1, cfg.iter_max + 1):
        nxt = cfg.alpha * (mat @ y_hat) + (1.0 - cfg.alpha) * y
        delta = float(np.abs(nxt - y_hat).max(initial=0.0))
        y_hat = nxt
        if delta < cfg.iter_tol:
            return y_hat
    raise ConvergenceError("propagation did not converge", cfg.iter_max, delta)


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, int, float]:
    """Plain conjugate gradient for an SPD operator.

    Stops when ``||A x - b|| / max(||b||, 1e-30) < tol``. Returns
    (solution, iterations, relative residual).

    Raises:
        ConvergenceError: tolerance not reached within ``max_iter``.
    """
    b = np.asarray(rhs, dtype=np.float64)
    bnorm = max(float(np.linalg.norm(b)), 1e-30)
    x = np.zeros_like(b)
    r = b.copy()
    rs = float(r @ r)
    if np.sqrt(rs) / bnorm < tol:
        return x, 0, np.sqrt(rs) / bnorm
    p = r.copy()
    for it in range(1, max_iter + 1):
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            raise ConvergenceError("operator is not positive definite", it, np.sqrt(rs) / bnorm)
        step = rs / denom
        x += step * p
        r -= step * ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) / bnorm < tol:
            return x, it, np.sqrt(rs_new) / bnorm
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ConvergenceError("conjugate gradient did not converge", max_iter, np.sqrt(rs) / bnorm)


def lp_solve_cg(
    s_hat: NormalizedAdjacency, scores: np.ndarray, cfg: PropagationConfig
) -> np.ndarray:
    """Solve (I - alpha S_hat) X = Y per class column with conjugate gradient.

    Under ``scale_convention == "fixed_point"`` the solution is multiplied by
    (1 - alpha) so it matches :func:`lp_iterate`.

    Raises:
        ConvergenceError: a column failed to converge (carries iteration
            count and residual).
    """
    y = _check_scores(s_hat, scores)
    mat = s_hat.matrix
    alpha = cfg.alpha

    def matvec(x: np.ndarray) -> np.ndarray:
        return x - alpha * (mat @ x)

    out = np.empty_like(y)
    for c in range(y.shape[1]):
        out[:, c], _, _ = conjugate_gradient(matvec, y[:, c], cfg.cg_tol, cfg.cg_max_iter)
    if cfg.scale_convention == "fixed_point":
        out *= 1.0 - alpha
    return out


def quadratic_criterion(
    adj: SparseAdjacency, refined: np.ndarray, initial: np.ndarray, alpha: float
) -> float:
    """Evaluate the objective that propagation minimizes.

    ``(1 - alpha) * sum_i ||Y_hat_i - Y_i||^2
    + alpha * sum_{edges {i,j}} S_ij ||Y_hat_i / sqrt(D_ii) - Y_hat_j / sqrt(D_jj)||^2``

    with each undirected edge counted once; on graphs without isolated nodes
    the fixed-point propagation output is the unique minimizer. Isolated
    nodes contribute only the fidelity term (their damped fixed point
    (1-alpha) Y intentionally trades fidelity for scale consistency).
    """
    y_hat = np.asarray(refined, dtype=np.float64)
    y = np.asarray(initial, dtype=np.float64)
    if y_hat.shape != y.shape or y_hat.shape[0] != adj.n:
        raise ValueError("score shapes must agree with the graph")
    fidelity = float(((y_hat - y) ** 2).sum())
    dinv = np.zeros_like(adj.degrees)
    nz = adj.degrees > 0
    dinv[nz] = 1.0 / np.sqrt(adj.degrees[nz])
    u = y_hat * dinv[:, None]
    coo = adj.matrix.tocoo()
    upper = coo.row < coo.col
    diff = u[coo.row[upper]] - u[coo.col[upper]]
    smooth = float((coo.data[upper] * (diff * diff).sum(axis=1)).sum())
    return (1.0 - alpha) * fidelity + alpha * smooth
