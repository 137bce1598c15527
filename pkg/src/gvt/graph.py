"""Token graphs: grid adjacency, feature-similarity edges, normalization, spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError
from .tensor import Tensor, softmax, sqrt, stack, tabs, tsum

NORM_EPS = 1e-8
DEGREE_EPS = 1e-6
EDGE_SIGNS = ("distance", "similarity")


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @property
    def n(self) -> int:
        return self.rows * self.cols


@dataclass
class TokenGraph:
    V: Tensor
    A: Tensor


def build_grid_adjacency(grid: GridSpec, dtype=np.float32) -> Tensor:
    """Binary 8-neighbourhood adjacency of a row-major token grid (zero diagonal)."""
    r, c = np.divmod(np.arange(grid.n), grid.cols)
    cheb = np.maximum(np.abs(r[:, None] - r[None, :]), np.abs(c[:, None] - c[None, :]))
    return Tensor((cheb == 1).astype(dtype))


def _row_norms(V: Tensor) -> Tensor:
    # sqrt(|v|^2 + eps^2) ~ |v| + eps, but keeps a finite derivative at v = 0
    return sqrt(tsum(V * V, axis=-1, keepdims=True) + NORM_EPS ** 2)


def cosine_distance_matrix(V: Tensor) -> Tensor:
    """Pairwise 1 - cos(v_i, v_j) over the last two axes of ``V`` (..., n, d)."""
    U = V / _row_norms(V)
    return 1.0 - U @ U.T


def cosine_distance(v_i: Tensor, v_j: Tensor) -> Tensor:
    if v_i.shape != v_j.shape or v_i.ndim != 1:
        raise DimensionError(f"expected two equal-length vectors, got {v_i.shape} and {v_j.shape}")
    return cosine_distance_matrix(stack([v_i, v_j], axis=0))[0, 1]


def edge_softmax(V: Tensor, edge_sign: str = "distance") -> Tensor:
    """Row-softmax of pairwise cosine distances.

    ``edge_sign="distance"`` uses exp(+D_cos) exactly as written, which favours
    dissimilar pairs; ``"similarity"`` uses exp(-D_cos).
    """
    if edge_sign not in EDGE_SIGNS:
        raise ConfigError(f"edge_sign must be one of {EDGE_SIGNS}, got {edge_sign!r}")
    D = cosine_distance_matrix(V)
    return softmax(D if edge_sign == "distance" else -D, axis=-1)


def fuse_adjacency(A_I: Tensor, E: Tensor) -> Tensor:
    """(A_I + I) * E elementwise. ``A_I`` may be shared across a batch of ``E``."""
    if A_I.shape[-2:] != E.shape[-2:] or A_I.shape[-1] != A_I.shape[-2]:
        raise DimensionError(f"adjacency {A_I.shape} and edge weights {E.shape} disagree")
    n = A_I.shape[-1]
    return (A_I + np.eye(n, dtype=A_I.dtype)) * E


def sym_normalize(A: Tensor, eps: float = DEGREE_EPS) -> Tensor:
    """D^-1/2 A D^-1/2 with d_i = sum_j |A_ij| + eps, over the last two axes."""
    deg = tsum(tabs(A), axis=-1) + eps
    dinv = deg ** -0.5
    # one outer-product scale, so a symmetric A stays exactly symmetric in any precision
    scale = dinv.reshape(dinv.shape + (1,)) * dinv.reshape(dinv.shape[:-1] + (1, dinv.shape[-1]))
    return A * scale


def symmetrize(R: Tensor) -> Tensor:
    return (R + R.T) * 0.5


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pair schedule visiting every (p, q) once per sweep, n/2 disjoint pairs per round."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = (np.array(v) for v in zip(*pairs))
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(M: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100,
                vectors: bool = False):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so the
    rotations of one round act on disjoint index pairs and are applied together.
    Stops when the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||M||_F)``. Returns ascending eigenvalues, plus matching
    orthonormal eigenvectors as columns when ``vectors`` is set.
    """
    A = np.array(M, dtype=np.float64)
    n = A.shape[0] if A.ndim == 2 else -1
    if A.ndim != 2 or A.shape != (n, n):
        raise DimensionError(f"expected a square matrix, got {A.shape}")
    Q = np.eye(n)
    target = tol * max(1.0, float(np.linalg.norm(A)))
    rounds = _round_robin(n)
    offdiag = ~np.eye(n, dtype=bool)
    sweep = 0
    while True:
        off = float(np.linalg.norm(A[offdiag]))
        if off < target:
            break
        if sweep >= max_sweeps:
            raise NumericError(f"Jacobi eigensolver did not converge after {sweep} sweeps (off-norm {off:.3e})")
        sweep += 1
        for p, q in rounds:
            apq = A[p, q]
            diff = A[q, q] - A[p, p]
            # smaller root of t^2 + 2 t diff / (2 apq) - 1 = 0, written without dividing by apq
            denom = np.abs(diff) + np.hypot(diff, 2.0 * apq)
            active = apq != 0.0
            t = np.where(diff >= 0, 2.0, -2.0) * apq / np.where(active, denom, 1.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            ap, aq = A[:, p], A[:, q]
            A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
            rp, rq = A[p, :], A[q, :]
            A[p, :], A[q, :] = c[:, None] * rp - s[:, None] * rq, s[:, None] * rp + c[:, None] * rq
            A[p, q] = 0.0
            A[q, p] = 0.0
            if vectors:
                qp, qq = Q[:, p], Q[:, q]
                Q[:, p], Q[:, q] = c * qp - s * qq, s * qp + c * qq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    if vectors:
        return w[order], Q[:, order]
    return w[order]


def laplacian_spectrum(R_sym, sym_tol: float = 1e-8) -> np.ndarray:
    """Ascending eigenvalues of I - R_sym for a symmetric normalized relation matrix."""
    R = np.asarray(R_sym.data if isinstance(R_sym, Tensor) else R_sym, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionError(f"expected a square matrix, got {R.shape}")
    asym = float(np.max(np.abs(R - R.T))) if R.size else 0.0
    if asym > sym_tol:
        raise ContractError(f"relation matrix is not symmetric (max |R - R^T| = {asym:.3e})")
    R = 0.5 * (R + R.T)
    return jacobi_eigh(np.eye(R.shape[0]) - R)


def frequency_response(eigenvalues, alpha: int = 1) -> np.ndarray:
    """Graph-filter response (1 - lambda)^alpha after ``alpha`` stacked propagations."""
    return (1.0 - np.asarray(eigenvalues, dtype=np.float64)) ** alpha


def relation_spectrum(R) -> np.ndarray:
    """Spectrum of I - sym_normalize(symmetrize(R)) for a raw relation matrix R."""
    R = R if isinstance(R, Tensor) else Tensor(np.asarray(R, dtype=np.float64))
    return laplacian_spectrum(sym_normalize(symmetrize(R)))
