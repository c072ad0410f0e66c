"""Geometric harmonics: Nyström extension of vector-valued functions.

A Gaussian kernel on the training coordinates is diagonalized once; targets
are projected onto the eigenvectors whose eigenvalue exceeds ``delta`` times
the largest, and a new point is evaluated as::

    psi_new[a] = sum_i C(b_new, b_i) psi[i, a] / sigma[a]
    F_new      = psi_new @ (psi^T F)
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from coldstart.errors import ThresholdTooStrictError
from coldstart.manifold import EpsilonRule, gaussian_affinity, gaussian_kernel, resolve_epsilon, squared_distances

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GhModel:
    coords: np.ndarray = field(repr=False)  # (n, d)
    targets: np.ndarray = field(repr=False)  # (n, N)
    epsilon_prime: float
    eigvecs: np.ndarray = field(repr=False)  # (n, s)
    eigvals: np.ndarray = field(repr=False)  # (s,)
    delta: float
    projected_coeffs: np.ndarray = field(repr=False)  # (s, N)

    @property
    def n_modes(self) -> int:
        return self.eigvals.shape[0]

    def __call__(self, query: np.ndarray) -> np.ndarray:
        return extend(self, query)


def fit_gh(coords: np.ndarray, targets: np.ndarray, delta: float = 1e-4, epsilon: EpsilonRule = "median_sq") -> GhModel:
    """Diagonalize the coordinate kernel and project ``targets`` on the kept eigenvectors.

    Raises :class:`ThresholdTooStrictError` when at most ``d`` eigenpairs pass
    the ``delta`` cut; warns when all ``n`` pass.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    if squeeze:
        targets = targets[:, None]
    n, d = coords.shape
    if targets.shape[0] != n:
        raise ValueError("coords and targets must have the same number of rows")
    if n <= d + 1:
        raise ValueError(f"need more than {d + 1} samples for {d}-dimensional coordinates")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    eps = resolve_epsilon(epsilon, coords)
    kernel = gaussian_affinity(coords, eps)
    vals, vecs = scipy.linalg.eigh(kernel, driver="evd")
    vals, vecs = vals[::-1], vecs[:, ::-1]
    keep = vals > delta * vals[0]
    card = int(np.count_nonzero(keep))
    if card <= d:
        raise ThresholdTooStrictError(f"only {card} eigenvalues above delta*sigma_1 (need > {d}); lower delta")
    if card == n:
        warnings.warn("all kernel eigenpairs retained; delta is too loose to regularize")
    vals, vecs = vals[keep].copy(), np.ascontiguousarray(vecs[:, keep])
    coeffs = vecs.T @ targets
    log.debug("GH fit: n=%d d=%d eps'=%.4g kept %d modes (delta=%g)", n, d, eps, card, delta)
    return GhModel(coords, targets, eps, vecs, vals, float(delta), coeffs)


def extend(model: GhModel, query: np.ndarray) -> np.ndarray:
    """Evaluate the extension at one (d,) point or at a (q, d) batch."""
    query = np.asarray(query, dtype=float)
    single = query.ndim == 1
    q = query[None, :] if single else query
    if q.shape[1] != model.coords.shape[1]:
        raise ValueError(f"query has dimension {q.shape[1]}, model expects {model.coords.shape[1]}")
    k = gaussian_kernel(q, model.coords, model.epsilon_prime)
    psi_new = (k @ model.eigvecs) / model.eigvals
    out = psi_new @ model.projected_coeffs
    return out[0] if single else out


def extrapolation_mask(model: GhModel, query: np.ndarray, factor: float = 3.0) -> np.ndarray:
    """True where the nearest training coordinate is farther than ``factor * sqrt(eps')``."""
    query = np.atleast_2d(np.asarray(query, dtype=float))
    dmin = np.sqrt(squared_distances(query, model.coords).min(axis=1))
    return dmin > factor * np.sqrt(model.epsilon_prime)
