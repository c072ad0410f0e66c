"""Starting maps: short observation windows -> warmed-up reservoir states.

Two backends are available:

* ``GhBackend``: diffusion maps on the windows, a geometric-harmonics map
  from windows to the selected diffusion coordinates (out-of-sample
  embedding), and a second one from diffusion coordinates to states.
* ``PcaMlpBackend``: PCA on the states and an MLP from windows to the leading
  PCA coefficients, inverted with zero padding.

Windows are stored oldest observation first. The state paired with a window
is the reservoir state right after the window's last observation was fed in.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from coldstart import harmonics, manifold, mlp, pca
from coldstart.errors import InsufficientDataError
from coldstart.reservoir import EsnModel, drive

log = logging.getLogger(__name__)

# Trajectories driven together when building pairs; bounds peak memory.
DRIVE_CHUNK = 64


@dataclass(frozen=True)
class WindowSpec:
    window_len: int
    stride: int = 1

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise ValueError("window_len and stride must be positive")


def subsample_rows(n: int, max_points: int) -> np.ndarray:
    """Uniform-stride row selection keeping at most ``max_points`` rows."""
    if n <= max_points:
        return np.arange(n)
    return np.arange(0, n, int(np.ceil(n / max_points)))


def build_training_pairs(
    model: EsnModel, trajectories: Sequence[np.ndarray], spec: WindowSpec, washout: int
) -> tuple[np.ndarray, np.ndarray]:
    """Drive the reservoir from the zero state over every observation series.

    Windows end at indices ``washout + L, washout + L + stride, ...`` (0-based),
    so a series of ``washout + L + 1`` samples yields exactly one pair.
    Returns ``(windows (n, L), states (n, N))``; too-short series are skipped.
    """
    L = spec.window_len
    by_len: dict[int, list[int]] = {}
    skipped = 0
    for i, s in enumerate(trajectories):
        if len(s) <= washout + L:
            skipped += 1
            continue
        by_len.setdefault(len(s), []).append(i)
    if skipped:
        warnings.warn(f"skipped {skipped} trajectories shorter than washout + window_len + 1")
    win_out: dict[int, np.ndarray] = {}
    st_out: dict[int, np.ndarray] = {}
    for T, idx in by_len.items():
        ends = np.arange(washout + L, T, spec.stride)
        for c in range(0, len(idx), DRIVE_CHUNK):
            chunk = idx[c : c + DRIVE_CHUNK]
            series = np.stack([np.asarray(trajectories[i], dtype=float) for i in chunk], axis=1)  # (T, B)
            states = drive(model, series[..., None], np.zeros((len(chunk), model.n_states)))
            for b, i in enumerate(chunk):
                win_out[i] = sliding_window_view(series[:, b], L)[ends - L + 1]
                st_out[i] = states[ends, b]
    if not win_out:
        raise InsufficientDataError("no trajectory is long enough to form a training pair")
    order = sorted(win_out)
    return np.concatenate([win_out[i] for i in order]), np.concatenate([st_out[i] for i in order])


@dataclass(frozen=True)
class GhHyper:
    dmaps: manifold.DmapsConfig = manifold.DmapsConfig()
    delta: float = 1e-4
    epsilon: manifold.EpsilonRule = "median_sq"
    coord_delta: float = 1e-4
    max_points: int = 4000


@dataclass(frozen=True)
class PcaMlpHyper:
    k: int = 100
    hidden: tuple[int, ...] = (500, 500, 500, 500)
    mlp: mlp.MlpConfig = field(default_factory=lambda: mlp.MlpConfig(layer_dims=(1, 1)))


@dataclass(frozen=True)
class GhBackend:
    embedding: manifold.DmapsEmbedding
    coord_map: harmonics.GhModel
    state_map: harmonics.GhModel

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return self.state_map(self.coord_map(windows))


@dataclass(frozen=True)
class PcaMlpBackend:
    pca: pca.PcaModel
    net: mlp.MlpModel

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return pca.inverse_zero_pad(self.pca, self.net(windows))


Backend = Union[GhBackend, PcaMlpBackend]


@dataclass(frozen=True)
class StartingMapModel:
    backend: Backend
    window_spec: WindowSpec
    state_dim: int
    train_windows: np.ndarray = field(repr=False)
    flag_radius: float = np.inf

    @property
    def kind(self) -> str:
        return "gh" if isinstance(self.backend, GhBackend) else "pca_mlp"

    def __call__(self, window: np.ndarray) -> np.ndarray:
        return cold_start(self, window)


def fit(hyper: GhHyper | PcaMlpHyper, windows: np.ndarray, states: np.ndarray, spec: WindowSpec) -> StartingMapModel:
    windows = np.asarray(windows, dtype=float)
    states = np.asarray(states, dtype=float)
    if len(windows) == 0 or len(windows) != len(states):
        raise ValueError("need a non-empty, aligned set of (window, state) pairs")
    if windows.shape[1] != spec.window_len:
        raise ValueError(f"windows have length {windows.shape[1]}, spec says {spec.window_len}")
    if isinstance(hyper, GhHyper):
        rows = subsample_rows(len(windows), hyper.max_points)
        windows, states = windows[rows], states[rows]
        emb = manifold.eigendecompose(hyper.dmaps, windows)
        coords = emb.coordinates
        log.info(
            "diffusion maps: n=%d eps=%.4g eigenvalues=%s selected=%s",
            len(windows), emb.epsilon_used, np.round(emb.eigenvalues, 4), emb.selected_indices,
        )
        coord_map = harmonics.fit_gh(windows, coords, hyper.coord_delta, emb.epsilon_used)
        state_map = harmonics.fit_gh(coords, states, hyper.delta, hyper.epsilon)
        log.info("geometric harmonics: %d coordinate modes, %d state modes", coord_map.n_modes, state_map.n_modes)
        backend: Backend = GhBackend(emb, coord_map, state_map)
        radius = 3.0 * np.sqrt(emb.epsilon_used)
    elif isinstance(hyper, PcaMlpHyper):
        pm = pca.fit_pca(states, hyper.k)
        dims = (spec.window_len, *hyper.hidden, hyper.k)
        net = mlp.train(replace(hyper.mlp, layer_dims=dims), windows, pca.project(pm, states))
        backend = PcaMlpBackend(pm, net)
        rows = subsample_rows(len(windows), 4000)
        radius = 3.0 * np.sqrt(manifold.median_epsilon(windows[rows], squared=True))
    else:
        raise TypeError(f"unknown starting-map hyperparameters {hyper!r}")
    return StartingMapModel(backend, spec, states.shape[1], windows, float(radius))


def _check_windows(model: StartingMapModel, window: np.ndarray) -> np.ndarray:
    w = np.asarray(window, dtype=float)
    if w.shape[-1] != model.window_spec.window_len or w.ndim not in (1, 2):
        raise ValueError(f"window must have length {model.window_spec.window_len}, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("window contains non-finite values")
    return w


def cold_start(model: StartingMapModel, window: np.ndarray) -> np.ndarray:
    """Reservoir state for one (L,) window or a (B, L) batch of windows."""
    w = _check_windows(model, window)
    flags = extrapolation_flags(model, w)
    if np.any(flags):
        log.warning("%d cold-start window(s) lie far from the training windows", int(np.count_nonzero(flags)))
    return model.backend(w)


def extrapolation_flags(model: StartingMapModel, window: np.ndarray) -> np.ndarray | bool:
    """True when a window is farther than ``flag_radius`` from every training window."""
    w = _check_windows(model, window)
    d2 = manifold.squared_distances(np.atleast_2d(w), model.train_windows).min(axis=1)
    flags = np.sqrt(d2) > model.flag_radius
    return bool(flags[0]) if w.ndim == 1 else flags


def consistency_errors(model: StartingMapModel, windows: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Relative L2 error of the map against recorded (window, state) pairs."""
    pred = model.backend(_check_windows(model, windows))
    states = np.asarray(states, dtype=float)
    return np.linalg.norm(pred - states, axis=-1) / np.linalg.norm(states, axis=-1)


def lipschitz_estimate(model: StartingMapModel, windows: np.ndarray, n_pairs: int, gen: np.random.Generator) -> float:
    """Largest ``|sigma(w) - sigma(w')| / |w - w'|`` over random pairs of distinct windows (diagnostic)."""
    windows = np.asarray(windows, dtype=float)
    i = gen.integers(0, len(windows), size=n_pairs)
    j = gen.integers(0, len(windows), size=n_pairs)
    dw = np.linalg.norm(windows[i] - windows[j], axis=1)
    keep = dw > 0
    if not np.any(keep):
        return 0.0
    out = model.backend(np.concatenate([windows[i[keep]], windows[j[keep]]]))
    m = int(np.count_nonzero(keep))
    ds = np.linalg.norm(out[:m] - out[m:], axis=1)
    return float(np.max(ds / dw[keep]))
