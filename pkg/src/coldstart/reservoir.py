"""Leaky-tanh echo state network.

State update ``x <- (1 - alpha) x + alpha * tanh(A x + C z)``. All drivers
accept leading batch axes on states and inputs so that an ensemble of
trajectories is advanced with one matrix product per time step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from coldstart import rng as _rng
from coldstart.errors import BoundInapplicableError, DegenerateMatrixError, InsufficientDataError

log = logging.getLogger(__name__)

MatrixDist = Literal["uniform01", "uniform_sym"]


@dataclass(frozen=True)
class EsnParams:
    n_states: int
    leak_rate: float
    spectral_radius: float
    input_dim: int = 1
    matrix_dist: MatrixDist = "uniform01"
    seed: int = 0

    def __post_init__(self):
        if self.n_states < 1 or self.input_dim < 1:
            raise ValueError("n_states and input_dim must be positive")
        if not 0.0 < self.leak_rate <= 1.0:
            raise ValueError("leak_rate must lie in (0, 1]")
        if not self.spectral_radius > 0:
            raise ValueError("spectral_radius must be positive")
        if self.matrix_dist not in ("uniform01", "uniform_sym"):
            raise ValueError(f"unknown matrix_dist {self.matrix_dist!r}")


@dataclass(frozen=True)
class EsnModel:
    a_matrix: np.ndarray = field(repr=False)
    c_matrix: np.ndarray = field(repr=False)
    params: EsnParams

    @property
    def n_states(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def input_dim(self) -> int:
        return self.c_matrix.shape[1]

    @property
    def leak_rate(self) -> float:
        return self.params.leak_rate


def power_spectral_radius(a: np.ndarray, max_iter: int = 5000, tol: float = 1e-12) -> tuple[float, bool]:
    """Estimate ``rho(a)`` from the growth ratio of power iterates.

    Returns ``(estimate, converged)``. The ratio is measured over two steps so
    that a dominant real pair ``+-rho`` does not prevent convergence.
    """
    n = a.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    prev = np.inf
    est = 0.0
    for it in range(max_iter):
        w = a @ (a @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, True
        est = np.sqrt(nw)
        v = w / nw
        if it >= 2 and abs(est - prev) <= tol * est:
            return float(est), True
        prev = est
    return float(est), False


def spectral_radius(a: np.ndarray, max_iter: int = 5000) -> float:
    """Power iteration, falling back to a dense eigensolve when it stagnates.

    Stagnation is expected for sign-symmetric entries, whose dominant
    eigenvalues are usually a complex pair.
    """
    est, ok = power_spectral_radius(a, max_iter=max_iter)
    if ok:
        return est
    log.debug("power iteration stagnated (N=%d); using dense eigensolver", a.shape[0])
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def operator_norm(a: np.ndarray, max_iter: int = 20000, tol: float = 1e-14) -> float:
    """Largest singular value via power iteration on ``a.T @ a``."""
    n = a.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)  # Rayleigh quotient, v has unit norm
        v = w / nw
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return float(np.sqrt(lam))


def _sample(gen: np.random.Generator, dist: MatrixDist, shape: tuple[int, ...]) -> np.ndarray:
    if dist == "uniform01":
        return gen.uniform(0.0, 1.0, size=shape)
    return gen.uniform(-1.0, 1.0, size=shape)


def generate(params: EsnParams) -> EsnModel:
    """Draw ``A`` and ``C`` from ``params.matrix_dist`` and rescale ``A`` to the target radius."""
    gen = _rng.substream(params.seed, _rng.RESERVOIR)
    n, d = params.n_states, params.input_dim
    a = _sample(gen, params.matrix_dist, (n, n))
    c = _sample(gen, params.matrix_dist, (n, d))
    rho = spectral_radius(a)
    if not rho > 1e-300:
        raise DegenerateMatrixError("connectivity matrix has zero spectral radius")
    a *= params.spectral_radius / rho
    return EsnModel(a, c, params)


def from_matrices(a: np.ndarray, c: np.ndarray, leak_rate: float) -> EsnModel:
    """Wrap hand-made matrices (no rescaling). Mostly for tests and loading dumps."""
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    rho = spectral_radius(a)
    params = EsnParams(a.shape[0], leak_rate, max(rho, 1e-300), c.shape[1])
    return EsnModel(a, c, params)


def _as_inputs(model: EsnModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if model.input_dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != model.input_dim:
        raise ValueError(f"input has dimension {z.shape[-1]}, model expects {model.input_dim}")
    return z


def step(model: EsnModel, state: np.ndarray, inp) -> np.ndarray:
    """One reservoir update. ``state`` is (..., N), ``inp`` is (..., d) or scalar when d == 1."""
    z = _as_inputs(model, inp)
    a = model.leak_rate
    pre = state @ model.a_matrix.T + z @ model.c_matrix.T
    return (1.0 - a) * state + a * np.tanh(pre)


def drive(model: EsnModel, inputs: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Iterate :func:`step` over ``inputs`` (time on axis 0); returns every visited state.

    ``inputs`` is (T, ...) or (T, ..., d); ``x0`` is (..., N). The result is
    (T, ..., N) with ``out[t]`` the state after consuming ``inputs[t]``. A
    (T, 1) array is read as T scalar inputs; pass batches as (T, B, 1).
    """
    z = np.asarray(inputs, dtype=float)
    z = _as_inputs(model, z[:, None] if z.ndim == 1 else z)
    a = model.leak_rate
    drive_in = z @ model.c_matrix.T
    x = np.array(x0, dtype=float)
    out = np.empty(drive_in.shape)
    for t in range(drive_in.shape[0]):
        x = (1.0 - a) * x + a * np.tanh(x @ model.a_matrix.T + drive_in[t])
        out[t] = x
    return out


def listen(model: EsnModel, inputs: np.ndarray, x0: np.ndarray | None = None, washout: int = 0) -> np.ndarray:
    """Listening phase: drive from ``x0`` and drop the first ``washout`` states.

    Returns a (len(inputs) - washout, N) array of states.
    """
    inputs = np.asarray(inputs, dtype=float)
    if washout < 0:
        raise ValueError("washout must be non-negative")
    if len(inputs) <= washout:
        raise InsufficientDataError(f"{len(inputs)} inputs do not exceed washout {washout}")
    if x0 is None:
        x0 = np.zeros(model.n_states)
    return drive(model, inputs, x0)[washout:]


def autonomous_run(
    model: EsnModel,
    readout: Callable[[np.ndarray], np.ndarray],
    x_init: np.ndarray,
    horizon: int,
    return_states: bool = True,
) -> tuple[np.ndarray | None, np.ndarray]:
    """Closed-loop path continuation from ``x_init``.

    Each step emits ``y = readout(x)`` and then feeds it back,
    ``x <- step(x, y)``. Returns ``(states, outputs)`` with shapes
    (horizon, ..., N) and (horizon, ..., d); ``states[k]`` is the state after
    feeding ``outputs[k]``. ``states`` is None when ``return_states`` is False.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x = np.array(x_init, dtype=float)
    states = np.empty((horizon,) + x.shape) if return_states else None
    outputs = None
    for k in range(horizon):
        y = np.asarray(readout(x), dtype=float)
        if outputs is None:
            outputs = np.empty((horizon,) + y.shape)
        outputs[k] = y
        x = step(model, x, y)
        if states is not None:
            states[k] = x
    return states, outputs


def contraction_bound(model: EsnModel) -> float:
    """Upper bound ``(1 - alpha) + alpha * ||A||_2`` on the state Lipschitz constant."""
    a = model.leak_rate
    return (1.0 - a) + a * operator_norm(model.a_matrix)


def gs_lipschitz_bound(l_fx: float) -> float:
    """Lipschitz bound ``L / (1 - L)`` for the synchronization map given state contraction ``L``."""
    if not 0.0 <= l_fx < 1.0:
        raise BoundInapplicableError(f"bound requires 0 <= L < 1, got {l_fx}")
    return l_fx / (1.0 - l_fx)
