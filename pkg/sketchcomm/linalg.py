"""
Dense Linear Algebra Module
Classical GEMM, kernel-matrix construction, a cyclic Jacobi eigensolver for
symmetric matrices, the symmetric pseudoinverse, and Nyström reconstruction error.

DenseMatrix is a 2-D float64 numpy array in column-major (Fortran) order:
element (i, j) lives at flat offset j*rows + i.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from config.settings import settings
from sketchcomm.errors import DimensionError

logger = logging.getLogger(__name__)

DenseMatrix = np.ndarray


def as_dense(matrix, name: str = "matrix") -> DenseMatrix:
    """Return `matrix` as a 2-D float64 column-major array (copy only if needed)."""
    array = np.asarray(matrix, dtype=np.float64)
    if array.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {array.shape}")
    return np.asfortranarray(array)


def _mirror_upper(matrix: DenseMatrix) -> DenseMatrix:
    """Copy the upper triangle onto the lower one so the result is bit-symmetric."""
    upper = np.triu(matrix)
    return np.asfortranarray(upper + np.triu(upper, 1).T)


def gemm(a: DenseMatrix, b: DenseMatrix, transpose_a: bool = False) -> DenseMatrix:
    """
    Classical matrix product op(A)·B with op(A) = Aᵀ when transpose_a is set.

    Every output entry is accumulated in ascending inner-index order, one
    multiply and one add per step, so the result is bit-identical to a naive
    (i, k, j) triple loop.
    """
    a = as_dense(a, "A")
    b = as_dense(b, "B")
    left = a.T if transpose_a else a

    rows, inner = left.shape
    inner_b, cols = b.shape
    if inner != inner_b:
        op = "Aᵀ" if transpose_a else "A"
        raise DimensionError(
            f"gemm inner dimensions disagree: {op} is {rows}x{inner}, B is {inner_b}x{cols}"
        )

    out = np.zeros((rows, cols), dtype=np.float64, order="F")
    for k in range(inner):
        out += left[:, k, None] * b[None, k, :]
    return out


def kernel_linear(points: DenseMatrix) -> DenseMatrix:
    """Linear kernel K(i, j) = <x_i, x_j> for the rows x_i of `points`."""
    x = as_dense(points, "points")
    if x.size == 0:
        raise DimensionError("kernel_linear needs a non-empty point matrix")
    return _mirror_upper(gemm(x, x.T))


def frobenius_sigma(points: DenseMatrix) -> float:
    """RBF bandwidth ||X||_F / sqrt(m) for m points."""
    x = as_dense(points, "points")
    if x.shape[0] == 0:
        raise DimensionError("frobenius_sigma needs at least one point")
    return float(np.linalg.norm(x) / np.sqrt(x.shape[0]))


def kernel_rbf(points: DenseMatrix, sigma: float) -> DenseMatrix:
    """RBF kernel K(i, j) = exp(-||x_i - x_j||² / (2σ²))."""
    if not sigma > 0:
        raise DimensionError(f"RBF sigma must be positive, got {sigma}")
    x = as_dense(points, "points")
    if x.size == 0:
        raise DimensionError("kernel_rbf needs a non-empty point matrix")

    m = x.shape[0]
    two_sigma_sq = 2.0 * sigma * sigma
    out = np.zeros((m, m), dtype=np.float64, order="F")
    for i in range(m):
        diff = x[i:, :] - x[i, :]
        out[i, i:] = np.exp(-np.sum(diff * diff, axis=1) / two_sigma_sq)
    return _mirror_upper(out)


def _tournament_rounds(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Round-robin pairings covering every (p, q), p < q, once; pairs in a round are disjoint."""
    size = n + (n % 2)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        pairs = [
            (min(players[i], players[size - 1 - i]), max(players[i], players[size - 1 - i]))
            for i in range(size // 2)
        ]
        pairs = [(p, q) for p, q in pairs if q < n]
        if pairs:
            p_idx, q_idx = zip(*pairs)
            rounds.append((np.array(p_idx), np.array(q_idx)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: DenseMatrix) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def jacobi_eigh(
    matrix: DenseMatrix,
    tol: Optional[float] = None,
    max_sweeps: Optional[int] = None,
) -> Tuple[np.ndarray, DenseMatrix]:
    """
    Eigendecomposition M = Q·diag(w)·Qᵀ of a symmetric matrix by cyclic Jacobi sweeps.

    Each sweep visits every off-diagonal pair once, in round-robin rounds of
    disjoint pairs that are rotated together. Stops once off(M) < tol·||M||_F,
    when a sweep no longer reduces off(M), or after max_sweeps.

    Returns:
        (w, Q) with eigenvalues unsorted and Q orthogonal.
    """
    tol = settings.JACOBI_TOLERANCE if tol is None else tol
    max_sweeps = settings.JACOBI_MAX_SWEEPS if max_sweeps is None else max_sweeps

    a = as_dense(matrix).copy(order="F")
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"jacobi_eigh needs a square matrix, got {a.shape}")

    v = np.eye(n, dtype=np.float64, order="F")
    scale = float(np.linalg.norm(a))
    if n < 2 or scale == 0.0:
        return np.diag(a).copy(), v

    rounds = _tournament_rounds(n)
    previous_off = np.inf
    converged = False

    with np.errstate(over="ignore"):
        for _ in range(max_sweeps):
            off = _off_norm(a)
            if off < tol * scale:
                converged = True
                break
            if off >= previous_off:
                # Rounding floor reached
                break
            previous_off = off

            for p, q in rounds:
                apq = a[p, q]
                active = apq != 0.0
                if not active.any():
                    continue
                p, q, apq = p[active], q[active], apq[active]

                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                col_p, col_q = a[:, p], a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q

                row_p, row_q = a[p, :], a[q, :]
                a[p, :] = c[:, None] * row_p - s[:, None] * row_q
                a[q, :] = s[:, None] * row_p + c[:, None] * row_q

                vec_p, vec_q = v[:, p], v[:, q]
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    if not converged:
        residual = _off_norm(a) / scale
        log = logger.warning if residual > 1e-8 else logger.debug
        log("[LINALG] Jacobi stopped at off(M)/||M||_F = %.3e (n=%d)", residual, n)
    return np.diag(a).copy(), v


def pseudoinverse_spsd(matrix: DenseMatrix, tol: Optional[float] = None) -> DenseMatrix:
    """
    Moore–Penrose pseudoinverse of a symmetric (positive semi-definite) matrix.

    M is symmetrised as (M + Mᵀ)/2, decomposed by Jacobi, and eigenvalues with
    |λ| <= tol·max|λ| are treated as zero.
    """
    tol = settings.PINV_TOLERANCE if tol is None else tol
    m = as_dense(matrix)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"pseudoinverse_spsd needs a square matrix, got {m.shape}")

    eigenvalues, q = jacobi_eigh((m + m.T) / 2.0)
    largest = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0

    inverted = np.zeros_like(eigenvalues)
    keep = np.abs(eigenvalues) > tol * largest
    inverted[keep] = 1.0 / eigenvalues[keep]

    return _mirror_upper(gemm(q * inverted, q.T))


def nystrom_reconstruct(b: DenseMatrix, c: DenseMatrix, tol: Optional[float] = None) -> DenseMatrix:
    """Ã = B·C†·Bᵀ."""
    b = as_dense(b, "B")
    c = as_dense(c, "C")
    if c.shape != (b.shape[1], b.shape[1]):
        raise DimensionError(f"C must be {b.shape[1]}x{b.shape[1]} for B of shape {b.shape}, got {c.shape}")
    return gemm(gemm(b, pseudoinverse_spsd(c, tol)), b.T)


def relative_frobenius(reference: DenseMatrix, approx: DenseMatrix) -> float:
    """||reference - approx||_F / ||reference||_F."""
    reference = as_dense(reference, "reference")
    approx = as_dense(approx, "approx")
    if reference.shape != approx.shape:
        raise DimensionError(f"shapes differ: {reference.shape} vs {approx.shape}")
    norm = float(np.linalg.norm(reference))
    if norm == 0.0:
        raise DimensionError("relative error is undefined for a zero reference matrix")
    return float(np.linalg.norm(reference - approx)) / norm


def nystrom_error(
    a: DenseMatrix, b: DenseMatrix, c: DenseMatrix, tol: Optional[float] = None
) -> float:
    """Relative Frobenius error of the Nyström approximation B·C†·Bᵀ of A."""
    a = as_dense(a, "A")
    b = as_dense(b, "B")
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise DimensionError(f"A must be n x n and B n x r; got A {a.shape}, B {b.shape}")
    return relative_frobenius(a, nystrom_reconstruct(b, c, tol))


def is_symmetric(matrix: DenseMatrix, tol: Optional[float] = None) -> bool:
    """True when max|M - Mᵀ| <= tol·max|M|."""
    tol = settings.SYMMETRY_TOLERANCE if tol is None else tol
    m = as_dense(matrix)
    if m.shape[0] != m.shape[1]:
        return False
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    return float(np.max(np.abs(m - m.T), initial=0.0)) <= tol * scale
