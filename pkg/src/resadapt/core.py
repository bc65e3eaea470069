"""Dense-vector primitives: validation, normalization, cosine similarity,
temperature softmax.

Storage convention across the package: embeddings and parameter tables are
float32, every reduction (dot products, norms, loss sums) runs in float64.
All functions here are pure; values can be shared freely across threads.
"""

import numpy as np

from .errors import ConfigInvalid, DegenerateVector, DimMismatch

# Norms at or below this are treated as zero vectors.
NORM_EPS = 1e-12


def as_vec(values) -> np.ndarray:
    """Coerce to a float32 1-d vector, checking finiteness and length."""
    a = np.asarray(values, dtype=np.float32)
    if a.ndim != 1 or a.shape[0] < 1:
        raise DimMismatch(f"expected a non-empty 1-d vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigInvalid("vector contains non-finite values")
    return a


def as_matrix(data, dim: int | None = None) -> np.ndarray:
    """Coerce to a C-contiguous float32 matrix with at least one column."""
    a = np.ascontiguousarray(data, dtype=np.float32)
    if a.ndim != 2:
        raise DimMismatch(f"expected a 2-d matrix, got shape {a.shape}")
    if a.shape[1] < 1:
        raise DimMismatch("matrix must have at least one column")
    if dim is not None and a.shape[1] != dim:
        raise DimMismatch(f"expected dim {dim}, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ConfigInvalid("matrix contains non-finite values")
    return a


def check_tau(tau) -> float:
    t = float(tau)
    if not np.isfinite(t) or t <= 0.0:
        raise ConfigInvalid(f"temperature must be a positive real, got {tau!r}")
    return t


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors, accumulated in float64.

    Raises DegenerateVector if either norm is <= 1e-12 and DimMismatch if
    the lengths differ.
    """
    va = as_vec(a).astype(np.float64)
    vb = as_vec(b).astype(np.float64)
    if va.shape[0] != vb.shape[0]:
        raise DimMismatch(f"vector lengths differ: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.sqrt(np.dot(va, va)))
    nb = float(np.sqrt(np.dot(vb, vb)))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateVector(f"norm at or below {NORM_EPS}")
    return float(np.dot(va, vb) / (na * nb))


def l2_normalize(a) -> np.ndarray:
    """Rescale to unit norm (float32 output, float64 norm)."""
    v = as_vec(a)
    n = float(np.sqrt(np.dot(v.astype(np.float64), v.astype(np.float64))))
    if n <= NORM_EPS:
        raise DegenerateVector(f"cannot normalize: norm {n} <= {NORM_EPS}")
    return (v.astype(np.float64) / n).astype(np.float32)


def softmax_scaled(scores, tau) -> np.ndarray:
    """Temperature softmax with max-subtraction, float64 throughout.

    Max-subtraction matters: at tau = 0.01 cosine scores become logits of
    magnitude 100, which overflows naive exponentiation.
    """
    t = check_tau(tau)
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DimMismatch(f"expected a non-empty 1-d score vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ConfigInvalid("scores contain non-finite values")
    z = (s - s.max()) / t
    e = np.exp(z)
    return e / e.sum()
