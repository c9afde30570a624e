"""Small dense linear algebra used by the corrector construction.

The matrices are tiny (d <= 3 rows, a few hundred to a few thousand columns),
so everything goes through LAPACK via numpy; the wrappers only fix the rank
cutoff rule and the error contract.
"""

import numpy as np

from src.utils.errors import DimensionError

DEFAULT_RANK_TOL = 1e-12
SYMMETRY_TOL = 1e-10


def _as_matrix(a) -> np.ndarray:
    mat = np.asarray(a, dtype=float)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("matrix has non-finite entries")
    return mat


def pseudoinverse(a, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Moore-Penrose inverse via SVD.

    Singular values below ``rank_tol * sigma_max`` are treated as zero.
    """
    if not 0.0 < rank_tol < 1.0:
        raise ValueError(f"rank_tol must lie in (0, 1), got {rank_tol}")
    mat = _as_matrix(a)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((mat.shape[1], mat.shape[0]))
    keep = s >= rank_tol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def numerical_rank(a, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    mat = _as_matrix(a)
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s >= rank_tol * s[0]))


def operator_norm(a) -> float:
    """Spectral norm (largest singular value)."""
    mat = _as_matrix(a)
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def trace(a) -> float:
    mat = _as_matrix(a)
    if mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"trace needs a square matrix, got shape {mat.shape}")
    return float(np.trace(mat))


def min_quadratic_form(q) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    mat = _as_matrix(q)
    if mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL * scale:
        raise ValueError("min_quadratic_form needs a symmetric matrix")
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])


def penrose_residuals(a, a_plus) -> tuple:
    """Relative residuals of the four Penrose identities (diagnostic helper)."""
    mat = _as_matrix(a)
    inv = _as_matrix(a_plus)
    na = max(np.linalg.norm(mat), 1e-300)
    ni = max(np.linalg.norm(inv), 1e-300)
    aa = mat @ inv
    ia = inv @ mat
    return (
        float(np.linalg.norm(aa @ mat - mat) / na),
        float(np.linalg.norm(ia @ inv - inv) / ni),
        float(np.linalg.norm(aa - aa.T) / max(np.linalg.norm(aa), 1e-300)),
        float(np.linalg.norm(ia - ia.T) / max(np.linalg.norm(ia), 1e-300)),
    )
