"""Dense Local Steering Kernel descriptors.

Coordinates follow ``x = (x1, x2) = (col, row)``: ``gx`` is the derivative
along columns and ``gy`` along rows, so a steering matrix is
``[[sum gx^2, sum gx*gy], [sum gx*gy, sum gy^2]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensor import box_sum_clipped


@dataclass(frozen=True)
class LskParams:
    """Descriptor parameters.

    ``intensity_scale`` multiplies raw intensities before gradients are
    taken; the default maps 8-bit data onto [0, 1] so that the quadratic
    forms in the kernel stay in a range where ``exp`` does not underflow.
    """

    window_size: int = 5
    epsilon: float = 0.1
    tau: float = 1.0
    alpha: float = 0.4
    intensity_scale: float = 1.0 / 255.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if not self.intensity_scale > 0:
            raise ValueError("intensity_scale must be > 0")

    @property
    def n_channels(self) -> int:
        return self.window_size**2


class GradientField(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray


class SteeringMatrix(NamedTuple):
    """Symmetric 2x2 matrix; fields may be scalars or same-shaped arrays."""

    c11: np.ndarray | float
    c12: np.ndarray | float
    c22: np.ndarray | float

    def as_matrix(self) -> np.ndarray:
        c11, c12, c22 = (np.asarray(v, dtype=np.float64) for v in self)
        return np.stack([np.stack([c11, c12], -1), np.stack([c12, c22], -1)], -2)


def gradients(img: np.ndarray) -> GradientField:
    """Central differences inside, one-sided differences on the border rows/cols."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError(f"gradients need a 2-D image of at least 3x3, got shape {img.shape}")
    gy, gx = np.gradient(img)
    return GradientField(gx, gy)


def steering_matrix(g: GradientField, center: tuple[int, int], window: int = 5) -> SteeringMatrix:
    """Gradient covariance summed over the window around ``center=(row, col)``."""
    r = window // 2
    row, col = center
    rows = slice(max(row - r, 0), row + r + 1)
    cols = slice(max(col - r, 0), col + r + 1)
    gx, gy = g.gx[rows, cols], g.gy[rows, cols]
    return SteeringMatrix(float(np.sum(gx * gx)), float(np.sum(gx * gy)), float(np.sum(gy * gy)))


def steering_field(g: GradientField, window: int = 5) -> SteeringMatrix:
    """``steering_matrix`` at every pixel, via clipped box sums."""
    return SteeringMatrix(
        box_sum_clipped(g.gx * g.gx, window),
        box_sum_clipped(g.gx * g.gy, window),
        box_sum_clipped(g.gy * g.gy, window),
    )


def eig_sym2(c: SteeringMatrix):
    """Closed-form eigen-decomposition of symmetric 2x2 matrices.

    Returns ``(lam1, lam2, theta)`` with ``lam1 >= lam2`` and the leading
    eigenvector ``u1 = (cos theta, sin theta)``. Equal eigenvalues give
    ``theta = 0`` (canonical axes).
    """
    c11, c12, c22 = (np.asarray(v, dtype=np.float64) for v in c)
    half_tr = 0.5 * (c11 + c22)
    rad = np.hypot(0.5 * (c11 - c22), c12)
    theta = 0.5 * np.arctan2(2.0 * c12, c11 - c22)
    return half_tr + rad, half_tr - rad, theta


def regularize(c: SteeringMatrix, params: LskParams) -> SteeringMatrix:
    """Rebuild C from its eigenvectors with regularized singular values.

    ``(s1*s2 + eps)^alpha * ((s1+tau)/(s2+tau) u1 u1' + (s2+tau)/(s1+tau) u2 u2')``
    where ``s = sqrt(lambda)``.
    """
    if not all(np.all(np.isfinite(v)) for v in c):
        raise ValueError("steering matrix has non-finite entries")
    lam1, lam2, theta = eig_sym2(c)
    s1 = np.sqrt(np.maximum(lam1, 0.0))
    s2 = np.sqrt(np.maximum(lam2, 0.0))
    scale = (s1 * s2 + params.epsilon) ** params.alpha
    ratio = (s1 + params.tau) / (s2 + params.tau)
    cos, sin = np.cos(theta), np.sin(theta)
    a = scale * ratio  # along u1
    b = scale / ratio  # along u2
    return SteeringMatrix(
        a * cos * cos + b * sin * sin,
        (a - b) * cos * sin,
        a * sin * sin + b * cos * cos,
    )


def window_offsets(window: int) -> np.ndarray:
    """(p*p, 2) array of (drow, dcol) offsets in row-major channel order."""
    r = window // 2
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    return np.stack([dr.ravel(), dc.ravel()], axis=1)


def lsk_descriptor(field: SteeringMatrix, center: tuple[int, int], params: LskParams) -> np.ndarray:
    """Descriptor at one pixel from a field of regularized matrices.

    Neighbours outside the image are mirrored about the border pixel.
    Reference implementation for ``dense_descriptors``.
    """
    c11 = np.asarray(field.c11)
    height, width = c11.shape
    row, col = center
    weights = np.empty(params.n_channels)
    for k, (dr, dc) in enumerate(window_offsets(params.window_size)):
        rj = _mirror(row + dr, height)
        cj = _mirror(col + dc, width)
        # dx = (dcol, drow); the sign of dx does not change the quadratic form
        q = (
            field.c11[rj, cj] * dc * dc
            + 2.0 * field.c12[rj, cj] * dc * dr
            + field.c22[rj, cj] * dr * dr
        )
        weights[k] = np.exp(-q)
    return weights / weights.sum()


def _mirror(i: int, n: int) -> int:
    if i < 0:
        return -i
    if i >= n:
        return 2 * (n - 1) - i
    return i


def regularized_field(img: np.ndarray, params: LskParams) -> SteeringMatrix:
    g = gradients(np.asarray(img, dtype=np.float64) * params.intensity_scale)
    return regularize(steering_field(g, params.window_size), params)


def dense_descriptors(img: np.ndarray, params: LskParams = LskParams()) -> np.ndarray:
    """LSK descriptor tensor H of shape (M, N, p*p); each fibre sums to 1."""
    img = np.asarray(img, dtype=np.float64)
    field = regularized_field(img, params)
    p = params.window_size
    r = p // 2
    height, width = img.shape
    if min(height, width) <= r:
        raise ValueError(f"image {img.shape} too small for window {p}")
    padded = [np.pad(f, r, mode="reflect") for f in field]
    out = np.empty((height, width, p * p))
    for k, (dr, dc) in enumerate(window_offsets(p)):
        sl = (slice(r + dr, r + dr + height), slice(r + dc, r + dc + width))
        q = padded[0][sl] * (dc * dc) + padded[1][sl] * (2.0 * dc * dr) + padded[2][sl] * (dr * dr)
        np.exp(-q, out=out[:, :, k])
    out /= out.sum(axis=2, keepdims=True)
    return out
