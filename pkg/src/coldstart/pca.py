"""Principal component analysis with zero-padded inversion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray = field(repr=False)  # (N,)
    components: np.ndarray = field(repr=False)  # (N, K), orthonormal columns
    explained_variance: np.ndarray = field(repr=False)  # (K,)

    @property
    def k(self) -> int:
        return self.components.shape[1]


def fit_pca(data: np.ndarray, k: int) -> PcaModel:
    """Top-``k`` principal directions of the rows of ``data`` via a thin SVD.

    Each component is sign-fixed so its largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=float)
    n, dim = data.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= k <= min(n, dim):
        raise ValueError(f"k={k} outside 1..{min(n, dim)}")
    mean = data.mean(axis=0)
    _, s, vt = np.linalg.svd(data - mean, full_matrices=False)
    comps = vt[:k].T.copy()
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    comps *= signs
    return PcaModel(mean, comps, s[:k] ** 2 / (n - 1))


def project(model: PcaModel, x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=float) - model.mean) @ model.components


def inverse_zero_pad(model: PcaModel, y: np.ndarray) -> np.ndarray:
    """Pad the K leading coefficients with zeros and invert the PCA transform."""
    return model.mean + np.asarray(y, dtype=float) @ model.components.T
