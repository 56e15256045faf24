"""PCA decorrelation of descriptor fibres (mode-3 projection)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lsk import LskParams, dense_descriptors

# guards the strict ">" energy comparison against round-off in the eigenvalues
_ENERGY_RTOL = 1e-12


@dataclass(frozen=True)
class PcaBasis:
    """Leading eigenvectors of the descriptor covariance.

    Attributes
    ----------
    components : ndarray, shape (l, d)
        Column-orthonormal eigenvectors, largest eigenvalue first.
    eigenvalues : ndarray, shape (d,)
    mean : ndarray, shape (l,)
        Subtracted from every fibre before projection.
    energy_fraction : float
        Share of total variance captured by the kept components.
    """

    components: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    energy_fraction: float

    @property
    def n_input(self) -> int:
        return self.components.shape[0]

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    @classmethod
    def identity(cls, l: int) -> "PcaBasis":
        return cls(np.eye(l), np.ones(l), np.zeros(l), 1.0)


def select_dimension(eigenvalues, energy_target: float = 0.8) -> int:
    """Smallest d whose cumulative eigenvalue share is strictly above the target."""
    lam = np.sort(np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None))[::-1]
    total = lam.sum()
    if not total > 0:
        raise ValueError("eigenvalues sum to zero")
    frac = np.cumsum(lam) / total
    above = np.nonzero(frac > energy_target * (1.0 + _ENERGY_RTOL))[0]
    return int(above[0]) + 1 if above.size else lam.size


def fit_pca(samples: np.ndarray, energy_target: float = 0.8) -> PcaBasis:
    """Fit a basis to row samples of shape (n, l)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("fit_pca needs at least 2 samples in an (n, l) array")
    if not 0 < energy_target <= 1:
        raise ValueError("energy_target must lie in (0, 1]")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, bias=True)
    lam, vec = np.linalg.eigh(np.atleast_2d(cov))
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vec = vec[:, order]
    if not lam.sum() > 0:
        raise ValueError("samples have zero variance")
    d = select_dimension(lam, energy_target)
    vec = vec[:, :d]
    # sign convention: largest-magnitude entry of each component is positive
    pivot = vec[np.argmax(np.abs(vec), axis=0), np.arange(d)]
    vec = vec * np.where(pivot < 0, -1.0, 1.0)
    return PcaBasis(vec, lam[:d], mean, float(lam[:d].sum() / lam.sum()))


def project(h: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Replace each mode-3 fibre by ``V' (fibre - mean)``."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3 or h.shape[2] != basis.n_input:
        raise ValueError(f"tensor with {h.shape[-1]} channels does not match basis input {basis.n_input}")
    return (h - basis.mean) @ basis.components


def sample_descriptors(images, params: LskParams, max_samples: int = 100_000, rng=None) -> np.ndarray:
    """Uniformly subsample descriptor fibres across a set of images."""
    rng = np.random.default_rng(rng)
    images = list(images)
    per_image = max(1, max_samples // max(len(images), 1))
    chunks = []
    for img in images:
        h = dense_descriptors(img, params).reshape(-1, params.n_channels)
        if h.shape[0] > per_image:
            h = h[rng.choice(h.shape[0], per_image, replace=False)]
        chunks.append(h)
    return np.concatenate(chunks, axis=0)


def extract_features(img: np.ndarray, params: LskParams, basis: PcaBasis) -> np.ndarray:
    """Decorrelated feature tensor F of shape (M, N, d)."""
    return project(dense_descriptors(img, params), basis)
