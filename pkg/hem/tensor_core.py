"""
tensor_core.py - dense float64 matrix primitives shared by every stage.

A Matrix is a 2-D numpy array of dtype float64 (row-major, C order).
All public functions return new arrays and never mutate their inputs.
"""

#####################################
# Import Modules
#####################################

# Import external packages
import numpy as np

# Import functions from local modules
from hem.errors import ShapeError
from utils.utils_logger import logger

#####################################
# Type Aliases
#####################################

Matrix = np.ndarray
DTYPE = np.float64

#####################################
# Validation Helpers
#####################################


def ensure_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Raise ValueError if x holds NaN or Inf; return x unchanged otherwise."""
    if not np.all(np.isfinite(x)):
        msg = f"{name} contains non-finite values (NaN/Inf)."
        logger.error(msg)
        raise ValueError(msg)
    return x


def as_matrix(x, name: str = "matrix") -> Matrix:
    """Coerce x to a finite C-ordered float64 2-D array."""
    m = np.ascontiguousarray(x, dtype=DTYPE)
    if m.ndim != 2:
        msg = f"{name} must be 2-D, got shape {m.shape}."
        logger.error(msg)
        raise ShapeError(msg)
    return ensure_finite(m, name)


#####################################
# Matrix Operations
#####################################


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """
    Standard matrix product of a (m x k) and b (k x n).

    Raises:
        ShapeError: If the inner dimensions differ.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        msg = f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}."
        logger.error(msg)
        raise ShapeError(msg)
    return ensure_finite(a @ b, "matmul result")


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction; every row sums to 1."""
    m = as_matrix(m, "softmax input")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cosine(u, v) -> float:
    """
    Cosine similarity of two equal-length vectors, clamped to [-1, 1].

    Raises:
        ShapeError: If the lengths differ.
        ValueError: If either vector is all zeros.
    """
    u = ensure_finite(np.asarray(u, dtype=DTYPE).ravel(), "cosine left vector")
    v = ensure_finite(np.asarray(v, dtype=DTYPE).ravel(), "cosine right vector")
    if u.shape != v.shape:
        msg = f"cosine needs equal lengths, got {u.size} and {v.size}."
        logger.error(msg)
        raise ShapeError(msg)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        msg = "cosine undefined for a zero vector."
        logger.error(msg)
        raise ValueError(msg)
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def spatial_mean(x: np.ndarray) -> np.ndarray:
    """Average over the last two (spatial) axes: (..., H, W) -> (...)."""
    x = ensure_finite(np.asarray(x, dtype=DTYPE), "pooling input")
    if x.ndim < 2:
        msg = f"spatial_mean needs at least 2 axes, got shape {x.shape}."
        logger.error(msg)
        raise ShapeError(msg)
    return x.mean(axis=(-2, -1))


def flatten_blocks(*blocks: Matrix) -> np.ndarray:
    """Row-major flatten of one or more blocks into a single vector."""
    return np.concatenate([np.asarray(b, dtype=DTYPE).ravel() for b in blocks])


def hstack(blocks: list[Matrix], rows: int) -> Matrix:
    """Column-wise concatenation; an empty list yields a rows x 0 matrix."""
    if not blocks:
        return np.zeros((rows, 0), dtype=DTYPE)
    for b in blocks:
        if b.shape[0] != rows:
            msg = f"cannot concatenate a block with {b.shape[0]} rows onto {rows} rows."
            logger.error(msg)
            raise ShapeError(msg)
    return np.hstack(blocks)
