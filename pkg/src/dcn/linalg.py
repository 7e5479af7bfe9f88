"""Dense matrix conventions and kernels used by every other module.

A "matrix" throughout this package is a 2-D, C-contiguous ``float64``
numpy array with samples stored as rows.  Mini-batches are therefore
contiguous row slices.  The helpers here validate that convention and
enforce the finiteness contract: public operations either return fully
finite arrays or raise.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array and validate it.

    Parameters
    ----------
    a : array-like
        Anything numpy can turn into a 2-D array.
    name : str
        Used in error messages.

    Returns
    -------
    ndarray of shape (rows, cols), dtype float64, C-contiguous.

    Raises
    ------
    ShapeError
        If the input is not 2-D.
    ValueError
        If any entry is NaN or infinite.
    """
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    w = np.ascontiguousarray(v, dtype=np.float64)
    if w.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} contains non-finite entries")
    return w


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with explicit shape checking.

    Raises
    ------
    ShapeError
        If inner dimensions disagree; the message names both shapes.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, a is {a.shape}, b is {b.shape}"
        )
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ValueError("matmul overflowed to non-finite values")
    return out


def rowwise_sqnorm_diff(h, m_row) -> np.ndarray:
    """Squared Euclidean distance from every row of ``h`` to one point.

    Parameters
    ----------
    h : ndarray of shape (n, d)
    m_row : ndarray of shape (d,)

    Returns
    -------
    ndarray of shape (n,) with entries ``||h[i] - m_row||_2^2``.
    """
    h = as_matrix(h, "h")
    m_row = as_vector(m_row, "m_row")
    if h.shape[1] != m_row.shape[0]:
        raise ShapeError(
            f"rowwise_sqnorm_diff: h has {h.shape[1]} columns but the point "
            f"has length {m_row.shape[0]}"
        )
    diff = h - m_row
    return np.einsum("ij,ij->i", diff, diff)
