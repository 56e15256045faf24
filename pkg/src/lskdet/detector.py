"""Dense evaluation of the linear tensor detector.

The score at top-left position ``x`` is

    <W, F(x)> / ||F(x)|| + b

The numerator is a multichannel cross-correlation computed in the frequency
domain; the denominator comes from an integral image of ``sum_d F**2``.
``naive_slide`` evaluates the same rule window by window and serves as the
reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft

from .model import Model
from .tensor import BoundingBox, integral_image, save_pgm, window_sums

# windows with a smaller feature norm carry no signal and are flagged invalid
MIN_WINDOW_NORM = 1e-10
# integral-image differences carry round-off of this order relative to the total energy
NORM_ENERGY_RTOL = 1e-12


@dataclass(frozen=True)
class ScoreMap:
    """Scores over an M x N feature tensor at one pyramid scale.

    ``scores[r, c]`` belongs to the window with top-left corner ``(r, c)``.
    Positions where the window does not fit hold ``-inf``; ``valid`` is
    False there and at flat windows (norm below ``norm_floor``), whose
    score is the bias.
    """

    scores: np.ndarray
    valid: np.ndarray
    scale: float
    window: tuple[int, int]

    @property
    def valid_region(self) -> BoundingBox:
        m, n = self.window
        rows, cols = self.scores.shape
        return BoundingBox(0, 0, cols - n + 1, rows - m + 1)


@dataclass(frozen=True)
class PreparedDetector:
    """Conjugated channel spectra of the zero-padded template."""

    spectra: np.ndarray  # (d, P, Q//2 + 1) complex
    fft_shape: tuple[int, int]
    target_shape: tuple[int, int]
    window: tuple[int, int]
    bias: float

    @property
    def n_channels(self) -> int:
        return self.spectra.shape[0]


def prepare(model: Model, target_extent: tuple[int, int], pad_to_fast: bool = True) -> PreparedDetector:
    """Precompute conj(FFT) of every template channel for targets of ``target_extent``."""
    m, n, d = model.template.shape
    rows, cols = target_extent
    if m > rows or n > cols:
        raise ValueError(f"detector {m}x{n} larger than target {rows}x{cols}")
    if pad_to_fast:
        shape = (sfft.next_fast_len(rows, real=True), sfft.next_fast_len(cols, real=True))
    else:
        shape = (rows, cols)
    # circular correlation over the target extent has no wrap-around at valid positions
    w = np.moveaxis(model.template, 2, 0)
    spectra = np.conj(sfft.rfft2(w, s=shape, axes=(1, 2)))
    return PreparedDetector(spectra, shape, (rows, cols), (m, n), float(model.bias))


def _check_features(f: np.ndarray, d: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[2] != d:
        raise ValueError(f"feature tensor shape {f.shape} does not match detector with {d} channels")
    if not np.all(np.isfinite(f)):
        raise ValueError("feature tensor contains non-finite values")
    return f


def window_norms(f: np.ndarray, window: tuple[int, int]) -> np.ndarray:
    """Frobenius norm of every m x n x d window, via one integral image."""
    m, n = window
    energy = np.einsum("ijk,ijk->ij", f, f)
    return np.sqrt(np.maximum(window_sums(integral_image(energy), m, n), 0.0))


def norm_floor(f: np.ndarray) -> float:
    """Smallest window norm distinguishable from zero in a target ``f``."""
    return max(MIN_WINDOW_NORM, float(np.sqrt(NORM_ENERGY_RTOL * np.sum(f * f))))


def _assemble(numer, norms, floor: float, shape, window, bias: float, scale: float) -> ScoreMap:
    ok = norms >= floor
    inner = np.where(ok, numer / np.where(ok, norms, 1.0), 0.0) + bias
    scores = np.full(shape, -np.inf)
    valid = np.zeros(shape, dtype=bool)
    vr, vc = inner.shape
    scores[:vr, :vc] = inner
    valid[:vr, :vc] = ok
    return ScoreMap(scores, valid, float(scale), tuple(window))


def score_map(f: np.ndarray, det: PreparedDetector, scale: float = 1.0) -> ScoreMap:
    """Score every window of ``f`` with the prepared detector."""
    f = _check_features(f, det.n_channels)
    rows, cols = f.shape[:2]
    if (rows, cols) != det.target_shape:
        raise ValueError(f"detector prepared for {det.target_shape}, got target {(rows, cols)}")
    m, n = det.window
    spec = sfft.rfft2(np.moveaxis(f, 2, 0), s=det.fft_shape, axes=(1, 2))
    # channel correlations are summed in the frequency domain, one inverse transform
    corr = sfft.irfft2(np.sum(spec * det.spectra, axis=0), s=det.fft_shape)
    numer = corr[: rows - m + 1, : cols - n + 1]
    norms = window_norms(f, det.window)
    return _assemble(numer, norms, norm_floor(f), (rows, cols), det.window, det.bias, scale)


def naive_slide(f: np.ndarray, model: Model, scale: float = 1.0) -> ScoreMap:
    """Direct window-by-window evaluation of the decision rule (reference path)."""
    m, n, d = model.template.shape
    f = _check_features(f, d)
    rows, cols = f.shape[:2]
    if m > rows or n > cols:
        raise ValueError(f"detector {m}x{n} larger than target {rows}x{cols}")
    windows = sliding_window_view(f, (m, n), axis=(0, 1))  # (R, C, d, m, n)
    w = np.moveaxis(model.template, 2, 0).ravel()
    numer = np.empty(windows.shape[:2])
    norms = np.empty(windows.shape[:2])
    # one output row at a time keeps the materialized windows small
    for r in range(windows.shape[0]):
        row = windows[r].reshape(windows.shape[1], -1)
        numer[r] = row @ w
        norms[r] = np.sqrt(np.einsum("ij,ij->i", row, row))
    return _assemble(numer, norms, norm_floor(f), (rows, cols), (m, n), float(model.bias), scale)


def detect_scores(f: np.ndarray, model: Model, scale: float = 1.0) -> ScoreMap:
    """Convenience wrapper: prepare for ``f``'s extent and score it."""
    return score_map(f, prepare(model, f.shape[:2]), scale)


def save_score_map(path, smap: ScoreMap) -> None:
    """Write the finite part of a score map as an affine-mapped 8-bit PGM."""
    s = smap.scores
    finite = np.isfinite(s)
    out = np.zeros(s.shape)
    if finite.any():
        lo, hi = s[finite].min(), s[finite].max()
        span = hi - lo if hi > lo else 1.0
        out[finite] = (s[finite] - lo) * (255.0 / span)
    save_pgm(Path(path), out, maxval=255)
