"""Dense linear-algebra kernel used by the rest of the package.

All matrices are 2-D float64 numpy arrays in C (row-major) order and all
tensors are n-D float64 arrays, so ``vec`` is ``reshape(-1)`` and
``vec(u v^T) = kron(u, v)``.  Every routine here is a pure function.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

DEFAULT_PINV_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(x, name="matrix") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array, rejecting other ranks."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Columnwise Kronecker product.

    Column j of the result is ``kron(a[:, j], b[:, j])``, so entry
    ``(i_a * b.rows + i_b, j)`` equals ``a[i_a, j] * b[i_b, j]``.

    Args:
        a: (m, n) matrix.
        b: (q, n) matrix with the same column count.

    Returns:
        (m * q, n) matrix.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"khatri_rao needs equal column counts, got {a.shape[1]} and {b.shape[1]}"
        )
    m, n = a.shape
    q = b.shape[0]
    return (a[:, None, :] * b[None, :, :]).reshape(m * q, n)


def randomized_svd(
    x: np.ndarray,
    p: int,
    oversample: int = 10,
    power_iters: int = 2,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Rank-p approximate left singular basis of ``x`` (Halko et al. scheme).

    Args:
        x: (m, n) matrix.
        p: target rank, at most min(m, n).
        oversample: extra sketch columns beyond p.
        power_iters: subspace (power) iterations; each sharpens the spectrum.
        seed: RNG seed; the output is deterministic given the seed.

    Returns:
        Tuple ``(u, proj)`` where ``u`` is (m, p) with orthonormal columns
        and ``proj = u.T @ x`` is (p, n).
    """
    x = as_matrix(x, "x")
    m, n = x.shape
    if p > min(m, n):
        raise DimensionError(f"p={p} exceeds min(m, n)={min(m, n)}")
    if p < 1:
        raise DimensionError(f"p must be >= 1, got {p}")

    rng = np.random.default_rng(seed)
    ell = min(p + oversample, min(m, n))
    sketch = rng.standard_normal((n, ell))
    y = x @ sketch
    # Re-orthonormalize between multiplications to avoid losing directions
    # to floating-point collapse onto the dominant singular vectors.
    q = np.linalg.qr(y)[0]
    for _ in range(power_iters):
        q = np.linalg.qr(x.T @ q)[0]
        q = np.linalg.qr(x @ q)[0]
    b = q.T @ x
    ub, _, _ = np.linalg.svd(b, full_matrices=False)
    u = q @ ub[:, :p]
    return u, u.T @ x


def ridge_solve(inputs: np.ndarray, targets: np.ndarray, lam: float) -> np.ndarray:
    """Solve the ridge regression ``min_W ||targets - W inputs||_F^2 + lam ||W||_F^2``.

    Both operands store one sample per column.  The (d_in, d_in) normal
    system is solved with a Cholesky factorization; if that fails (singular
    normal matrix with lam == 0) the solve falls back to a pseudo-inverse.

    Args:
        inputs: (d_in, n) design matrix.
        targets: (d_out, n) target matrix.
        lam: ridge coefficient, >= 0.

    Returns:
        (d_out, d_in) weight matrix.
    """
    inputs = as_matrix(inputs, "inputs")
    targets = as_matrix(targets, "targets")
    if inputs.shape[1] != targets.shape[1]:
        raise DimensionError(
            f"sample counts differ: inputs has {inputs.shape[1]}, "
            f"targets has {targets.shape[1]}"
        )
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    d_in = inputs.shape[0]
    gram = inputs @ inputs.T + lam * np.eye(d_in)
    cross = targets @ inputs.T
    try:
        cho = scipy.linalg.cho_factor(gram, lower=True)
        return scipy.linalg.cho_solve(cho, cross.T).T
    except np.linalg.LinAlgError:
        return cross @ pinv(gram)
    except scipy.linalg.LinAlgError:
        return cross @ pinv(gram)


def mode_multiply(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Contract matrix ``m`` with tensor ``t`` along ``mode``.

    The result replaces ``t.shape[mode]`` with ``m.shape[0]``; all other
    modes keep their size and position.

    Args:
        t: tensor with ``t.shape[mode] == m.shape[1]``.
        m: (r, s) matrix.
        mode: tensor mode to contract over.
    """
    t = np.asarray(t, dtype=np.float64)
    m = as_matrix(m, "m")
    if not 0 <= mode < t.ndim:
        raise DimensionError(f"mode {mode} out of range for {t.ndim}-mode tensor")
    if m.shape[1] != t.shape[mode]:
        raise DimensionError(
            f"m has {m.shape[1]} columns but tensor mode {mode} has size {t.shape[mode]}"
        )
    out = np.tensordot(m, t, axes=([1], [mode]))
    return np.moveaxis(out, 0, mode)


def pinv(x: np.ndarray, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values at or below ``tol * sigma_max`` are treated as zero.
    An all-zero matrix maps to an all-zero matrix.
    """
    x = as_matrix(x, "x")
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    return np.linalg.pinv(x, rcond=tol)


def vec(x: np.ndarray) -> np.ndarray:
    """Row-major flattening; inverse of ``reshape`` under the C layout."""
    return np.asarray(x, dtype=np.float64).reshape(-1)


def symmetrize(x: np.ndarray) -> np.ndarray:
    """Average a square matrix with its transpose."""
    x = as_matrix(x, "x")
    if x.shape[0] != x.shape[1]:
        raise DimensionError(f"symmetrize needs a square matrix, got {x.shape}")
    return 0.5 * (x + x.T)
