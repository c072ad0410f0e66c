"""Diffusion maps for datasets of short time-series windows.

Pipeline: Gaussian affinity ``K_ij = exp(-|x_i - x_j|^2 / (2 eps))``, density
normalization ``K~ = D^-kappa K D^-kappa``, row normalization to the Markov
matrix ``S``, and an eigendecomposition of ``S`` through its symmetric
conjugate. Independent (non-harmonic) modes are picked with a local linear
regression test.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence, Union

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist

from coldstart.errors import ZeroEpsilonError

log = logging.getLogger(__name__)

EpsilonRule = Union[Literal["median_sq", "median"], float]


@dataclass(frozen=True)
class FirstK:
    k: int


@dataclass(frozen=True)
class ManualIndices:
    indices: tuple[int, ...]


@dataclass(frozen=True)
class ResidualTest:
    """Keep a mode when its leave-one-out local-linear residual exceeds ``threshold``.

    ``max_modes`` stops the greedy scan once that many modes are kept.
    """

    threshold: float
    max_modes: int | None = None
    bandwidth_scale: float = 1.0 / 3.0
    max_points: int = 2000


ModeSelection = Union[FirstK, ManualIndices, ResidualTest]


@dataclass(frozen=True)
class DmapsConfig:
    epsilon: EpsilonRule = "median_sq"
    kappa: float = 0.0
    n_modes_keep: int = 10
    mode_selection: ModeSelection = FirstK(2)

    def __post_init__(self):
        if isinstance(self.epsilon, str):
            if self.epsilon not in ("median_sq", "median"):
                raise ValueError(f"unknown epsilon rule {self.epsilon!r}")
        elif not self.epsilon > 0:
            raise ValueError("fixed epsilon must be positive")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.n_modes_keep < 1:
            raise ValueError("n_modes_keep must be positive")


@dataclass(frozen=True)
class DmapsEmbedding:
    """Leading eigenpairs of the Markov matrix.

    Column 0 of ``modes`` is the trivial constant mode; ``selected_indices``
    refer to columns of ``modes`` and never include it.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray = field(repr=False)
    selected_indices: tuple[int, ...]
    epsilon_used: float
    kappa: float
    dataset: np.ndarray = field(repr=False)

    @property
    def coordinates(self) -> np.ndarray:
        """Selected diffusion coordinates, (n, len(selected_indices))."""
        return self.modes[:, list(self.selected_indices)]


def squared_distances(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if y is None:
        d2 = cdist(x, x, "sqeuclidean")
        np.fill_diagonal(d2, 0.0)
        return d2
    return cdist(x, np.asarray(y, dtype=float), "sqeuclidean")


def gaussian_affinity(data: np.ndarray, epsilon: float) -> np.ndarray:
    data = _as_points(data)
    if data.shape[0] < 2:
        raise ValueError("need at least two points")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return np.exp(-squared_distances(data) / (2.0 * epsilon))


def gaussian_kernel(x: np.ndarray, y: np.ndarray, epsilon: float) -> np.ndarray:
    """Cross affinity between query rows ``x`` and reference rows ``y``."""
    return np.exp(-squared_distances(_as_points(x), _as_points(y)) / (2.0 * epsilon))


def _as_points(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    return data[:, None] if data.ndim == 1 else data


def median_epsilon(data: np.ndarray, squared: bool = False) -> float:
    """Median over the n(n-1)/2 pairwise L2 distances (or squared distances)."""
    data = _as_points(data)
    if data.shape[0] < 2:
        raise ValueError("need at least two points")
    d = pdist(data, "sqeuclidean" if squared else "euclidean")
    med = float(np.median(d))
    if not med > 0:
        raise ZeroEpsilonError("median pairwise distance is zero")
    return med


def resolve_epsilon(rule: EpsilonRule, data: np.ndarray) -> float:
    if rule == "median_sq":
        return median_epsilon(data, squared=True)
    if rule == "median":
        return median_epsilon(data, squared=False)
    return float(rule)


def _density_normalize(affinity: np.ndarray, kappa: float) -> np.ndarray:
    if kappa == 0.0:
        return affinity
    d = affinity.sum(axis=1)
    if np.any(d <= 0):
        raise ValueError("affinity has a zero row sum")
    dk = d ** (-kappa)
    return dk[:, None] * affinity * dk[None, :]


def normalize(affinity: np.ndarray, kappa: float = 0.0) -> np.ndarray:
    """Row-stochastic Markov matrix built from ``D^-kappa K D^-kappa``."""
    k_tilde = _density_normalize(np.asarray(affinity, dtype=float), kappa)
    q = k_tilde.sum(axis=1)
    if np.any(q <= 0):
        raise ValueError("normalized affinity has a zero row sum")
    return k_tilde / q[:, None]


def _is_constant(v: np.ndarray) -> bool:
    m = abs(float(np.mean(v)))
    return m > 0 and float(np.std(v)) / m < 1e-6


def eigendecompose(config: DmapsConfig, data: np.ndarray) -> DmapsEmbedding:
    """Fit diffusion maps and choose independent modes according to ``config``."""
    data = _as_points(data)
    n = data.shape[0]
    if n < 3:
        raise ValueError("diffusion maps need at least three points")
    eps = resolve_epsilon(config.epsilon, data)
    k_tilde = _density_normalize(gaussian_affinity(data, eps), config.kappa)
    q = k_tilde.sum(axis=1)
    q_isqrt = 1.0 / np.sqrt(q)
    sym = q_isqrt[:, None] * k_tilde * q_isqrt[None, :]
    sym = 0.5 * (sym + sym.T)
    k = min(config.n_modes_keep + 1, n)
    vals, vecs = scipy.linalg.eigh(sym, subset_by_index=(n - k, n - 1), driver="evr")
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = q_isqrt[:, None] * vecs[:, order]
    vecs /= np.linalg.norm(vecs, axis=0)
    # Trivial mode by shape, not by position, to survive near-ties.
    trivial = [i for i in range(vecs.shape[1]) if _is_constant(vecs[:, i])]
    if trivial and trivial[0] != 0:
        i = trivial[0]
        perm = [i] + [j for j in range(vecs.shape[1]) if j != i]
        vals, vecs = vals[perm], vecs[:, perm]
    elif not trivial:
        log.warning("no constant diffusion mode found; treating the leading mode as trivial")
    emb = DmapsEmbedding(vals, vecs, (), eps, config.kappa, data)
    sel = select_modes(emb, config.mode_selection)
    return DmapsEmbedding(vals, vecs, tuple(sel), eps, config.kappa, data)


def local_linear_residual(target: np.ndarray, basis: np.ndarray, bandwidth_scale: float = 1.0 / 3.0) -> float:
    """Normalized leave-one-out residual of ``target`` regressed locally-linearly on ``basis``.

    Kernel weights use a bandwidth of ``bandwidth_scale`` times the median
    pairwise distance in ``basis``. A value near 1 means ``target`` is not a
    function of the basis; near 0 means it is (a harmonic).
    """
    basis = _as_points(basis)
    n, p = basis.shape
    d2 = squared_distances(basis)
    bw = bandwidth_scale * np.median(np.sqrt(d2[np.triu_indices(n, 1)]))
    w = np.exp(-d2 / (bw * bw)) if bw > 0 else np.ones((n, n))
    np.fill_diagonal(w, 0.0)
    design = np.hstack([np.ones((n, 1)), basis])
    outer = (design[:, :, None] * design[:, None, :]).reshape(n, -1)
    gram = (w @ outer).reshape(n, p + 1, p + 1)
    rhs = w @ (design * target[:, None])
    gram += 1e-10 * np.trace(gram, axis1=1, axis2=2)[:, None, None] * np.eye(p + 1)
    coef = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
    fitted = np.sum(design * coef, axis=1)
    return float(np.sqrt(np.sum((target - fitted) ** 2) / np.sum(target**2)))


def select_modes(embedding: DmapsEmbedding, rule: ModeSelection) -> list[int]:
    n_avail = embedding.modes.shape[1]
    if isinstance(rule, FirstK):
        if not 1 <= rule.k < n_avail:
            raise IndexError(f"FirstK({rule.k}) needs {rule.k + 1} modes, only {n_avail} computed")
        return list(range(1, rule.k + 1))
    if isinstance(rule, ManualIndices):
        for i in rule.indices:
            if not 1 <= i < n_avail:
                raise IndexError(f"mode index {i} outside 1..{n_avail - 1}")
        return list(rule.indices)
    if isinstance(rule, ResidualTest):
        modes = embedding.modes
        n = modes.shape[0]
        rows = np.arange(0, n, int(np.ceil(n / rule.max_points))) if n > rule.max_points else np.arange(n)
        kept = [1]
        for i in range(2, n_avail):
            if rule.max_modes is not None and len(kept) >= rule.max_modes:
                break
            r = local_linear_residual(modes[rows, i], modes[np.ix_(rows, kept)], rule.bandwidth_scale)
            log.debug("mode %d residual %.4f", i, r)
            if r > rule.threshold:
                kept.append(i)
        return kept
    raise TypeError(f"unknown mode selection rule {rule!r}")


def save_embedding_csv(path: str | Path, embedding: DmapsEmbedding) -> None:
    """Header ``index,v1..vk``; second row ``lambda,...``; then one row per point."""
    sel = list(embedding.selected_indices)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"v{i}" for i in sel])
        w.writerow(["lambda"] + [f"{embedding.eigenvalues[i]:.17g}" for i in sel])
        for j, row in enumerate(embedding.modes[:, sel]):
            w.writerow([j] + [f"{v:.17g}" for v in row])


def load_embedding_csv(path: str | Path) -> tuple[Sequence[int], np.ndarray, np.ndarray]:
    """Returns (mode indices, eigenvalues, coordinates)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    idx = [int(h[1:]) for h in rows[0][1:]]
    lam = np.array([float(v) for v in rows[1][1:]])
    coords = np.array([[float(v) for v in r[1:]] for r in rows[2:]]).reshape(-1, len(idx))
    return idx, lam, coords
