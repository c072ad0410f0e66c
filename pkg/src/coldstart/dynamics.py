"""Brusselator and Lorenz systems, fixed-step RK4 and ensemble sampling.

Observations are plain 1-D arrays holding the first state coordinate; a
:class:`Trajectory` keeps the full state for reference and plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from coldstart import rng as _rng
from coldstart.errors import IntegrationDivergedError

SystemKind = Literal["brusselator", "lorenz"]

_DIMS = {"brusselator": 2, "lorenz": 3}
_N_PARAMS = {"brusselator": 2, "lorenz": 3}


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous ODE ``dx/dt = f(x)``.

    Parameter letters follow the usual (a, b[, c]) naming: for the Lorenz
    system ``a`` is the Prandtl number, ``b`` the Rayleigh number and ``c`` the
    geometric factor.
    """

    kind: SystemKind
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in _DIMS:
            raise ValueError(f"unknown system kind {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != _N_PARAMS[self.kind]:
            raise ValueError(f"{self.kind} takes {_N_PARAMS[self.kind]} parameters, got {len(params)}")
        if not all(np.isfinite(params)):
            raise ValueError("system parameters must be finite")
        object.__setattr__(self, "params", params)

    @property
    def dim(self) -> int:
        return _DIMS[self.kind]

    def rhs(self, x: np.ndarray) -> np.ndarray:
        """Vector field evaluated on the last axis of ``x`` (batched)."""
        if self.kind == "brusselator":
            a, b = self.params
            u, v = x[..., 0], x[..., 1]
            u2v = u * u * v
            return np.stack([a + u2v - (b + 1.0) * u, b * u - u2v], axis=-1)
        a, b, c = self.params
        u, v, w = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([a * (v - u), b * u - u * w - v, u * v - c * w], axis=-1)


def brusselator(a: float = 1.0, b: float = 2.1) -> OdeSystem:
    return OdeSystem("brusselator", (a, b))


def lorenz(a: float = 10.0, b: float = 28.0, c: float = 8.0 / 3.0) -> OdeSystem:
    return OdeSystem("lorenz", (a, b, c))


@dataclass(frozen=True)
class InitDist:
    """Per-coordinate initial-condition law: ``uniform(lo, hi)`` or ``normal(mean, sd)``."""

    kind: Literal["uniform", "normal"]
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.kind == "uniform" and not self.a <= self.b:
            raise ValueError("uniform distribution needs lo <= hi")
        if self.kind == "normal" and self.b < 0:
            raise ValueError("normal distribution needs sd >= 0")

    def draw(self, gen: np.random.Generator) -> float:
        if self.kind == "uniform":
            return float(gen.uniform(self.a, self.b))
        return float(gen.normal(self.a, self.b))


@dataclass(frozen=True)
class SamplingConfig:
    dt: float
    t_start: float
    t_end: float
    init_dist: tuple[InitDist, ...] = ()
    n_trajectories: int = 1
    seed: int = 0
    stream: int = _rng.TRAIN_ICS

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if self.t_start < 0:
            raise ValueError("t_start must be non-negative")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        object.__setattr__(self, "init_dist", tuple(self.init_dist))

    @property
    def n_samples(self) -> int:
        return int(np.floor((self.t_end - self.t_start) / self.dt + 1e-9)) + 1

    @property
    def n_burn_in(self) -> int:
        return int(np.floor(self.t_start / self.dt + 1e-9))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.states.ndim != 2 or len(self.times) != len(self.states):
            raise ValueError("states must be (len(times), dim)")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else float("nan")


def rk4_step(system: OdeSystem, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step; ``state`` may carry leading batch axes."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    if x.shape[-1] != system.dim:
        raise ValueError(f"state has dimension {x.shape[-1]}, system expects {system.dim}")
    k1 = system.rhs(x)
    k2 = system.rhs(x + 0.5 * dt * k1)
    k3 = system.rhs(x + 0.5 * dt * k2)
    k4 = system.rhs(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationDivergedError(f"non-finite state after RK4 step (dt={dt})")
    return out


def _integrate_batch(system: OdeSystem, inits: np.ndarray, cfg: SamplingConfig) -> np.ndarray:
    """Integrate a (B, dim) batch; returns (B, n_samples, dim)."""
    x = np.array(inits, dtype=float)
    for _ in range(cfg.n_burn_in):
        x = rk4_step(system, x, cfg.dt)
    out = np.empty((x.shape[0], cfg.n_samples, system.dim))
    out[:, 0] = x
    for i in range(1, cfg.n_samples):
        x = rk4_step(system, x, cfg.dt)
        out[:, i] = x
    return out


def _times(cfg: SamplingConfig) -> np.ndarray:
    return cfg.t_start + cfg.dt * np.arange(cfg.n_samples)


def integrate(system: OdeSystem, init: Sequence[float], cfg: SamplingConfig) -> Trajectory:
    """Record ``floor((t_end - t_start)/dt) + 1`` samples starting at ``t_start``.

    When ``t_start > 0`` the state is first advanced from time 0 with the same
    step size and nothing is recorded during that burn-in.
    """
    init = np.asarray(init, dtype=float)
    if init.shape != (system.dim,):
        raise ValueError(f"initial state must have shape ({system.dim},)")
    states = _integrate_batch(system, init[None, :], cfg)[0]
    return Trajectory(_times(cfg), states)


def draw_initial_conditions(system: OdeSystem, cfg: SamplingConfig) -> np.ndarray:
    """(n_trajectories, dim) initial states; row i uses substream (seed, stream, i)."""
    if len(cfg.init_dist) != system.dim:
        raise ValueError(f"init_dist has {len(cfg.init_dist)} entries, system dimension is {system.dim}")
    inits = np.empty((cfg.n_trajectories, system.dim))
    for i in range(cfg.n_trajectories):
        gen = _rng.substream(cfg.seed, cfg.stream, i)
        inits[i] = [d.draw(gen) for d in cfg.init_dist]
    return inits


def sample_ensemble(system: OdeSystem, cfg: SamplingConfig) -> list[Trajectory]:
    inits = draw_initial_conditions(system, cfg)
    states = _integrate_batch(system, inits, cfg)
    times = _times(cfg)
    return [Trajectory(times.copy(), s) for s in states]


def observe(traj: Trajectory) -> np.ndarray:
    """First-coordinate observation series."""
    if len(traj) == 0:
        raise ValueError("cannot observe an empty trajectory")
    return traj.states[:, 0].copy()


def save_trajectory_csv(path: str | Path, traj: Trajectory) -> None:
    dim = traj.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(dim)])
        for t, s in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in s])


def load_trajectory_csv(path: str | Path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t" or header[1:] != [f"x{i}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}: unexpected trajectory header {header}")
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
    rows = rows.reshape(-1, len(header))
    return Trajectory(rows[:, 0], rows[:, 1:])
