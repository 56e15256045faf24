"""Matrix Cosine Similarity between same-shaped feature tensors."""

from __future__ import annotations

import numpy as np


def normalize(t: np.ndarray) -> np.ndarray:
    """Scale a tensor to unit Frobenius norm. Zero tensors are rejected."""
    t = np.asarray(t, dtype=np.float64)
    norm = np.sqrt(np.sum(t * t))
    if not norm > 0:
        raise ValueError("cannot normalize a zero-norm tensor")
    return t / norm


def mcs(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product of the unit-normalized tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    value = float(np.vdot(normalize(a), normalize(b)))
    return min(1.0, max(-1.0, value))


def gram(tensors) -> np.ndarray:
    """Symmetric matrix of pairwise MCS values for a stack or list of tensors."""
    stack = np.asarray(tensors, dtype=np.float64)
    if stack.ndim < 2:
        raise ValueError("gram expects a sequence of same-shaped tensors")
    flat = stack.reshape(stack.shape[0], -1)
    norms = np.sqrt(np.einsum("ij,ij->i", flat, flat))
    if np.any(norms <= 0):
        raise ValueError("cannot normalize a zero-norm tensor")
    unit = flat / norms[:, None]
    k = unit @ unit.T
    # same bound as mcs: round-off can push entries past +-1
    return np.clip(0.5 * (k + k.T), -1.0, 1.0)
