"""Experiment configuration: TOML files validated into pydantic models.

Unknown keys anywhere in the file are errors. ``to_*`` helpers translate the
validated sections into the library's frozen dataclasses.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from coldstart import dynamics, manifold, mlp, readout, reservoir, rng, starting_map


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class InitSpec(_Section):
    kind: Literal["uniform", "normal"]
    a: float
    b: float


class SystemSection(_Section):
    kind: Literal["brusselator", "lorenz"]
    params: Optional[list[float]] = None

    def build(self) -> dynamics.OdeSystem:
        factory = dynamics.brusselator if self.kind == "brusselator" else dynamics.lorenz
        return factory(*self.params) if self.params else factory()


class EnsembleSection(_Section):
    dt: float = Field(gt=0)
    t_start: float = 0.0
    t_end: float
    n_trajectories: int = Field(ge=1)
    init: list[InitSpec]
    # Number of observations kept per trajectory (the integrator returns one extra).
    length: int = Field(ge=2)

    @model_validator(mode="after")
    def _enough_samples(self):
        n = int((self.t_end - self.t_start) / self.dt + 1e-9) + 1
        if n < self.length:
            raise ValueError(f"interval yields {n} samples, fewer than length={self.length}")
        return self


class ReservoirSection(_Section):
    n_states: int = Field(ge=1)
    leak_rate: float = Field(gt=0, le=1)
    spectral_radius: float = Field(gt=0)
    matrix_dist: Literal["uniform01", "uniform_sym"] = "uniform01"


class MlpSection(_Section):
    hidden: list[int] = [500, 500, 500, 500]
    epochs: int = Field(500, ge=1)
    batch_size: int = Field(500, ge=1)
    lr_init: float = Field(1e-3, gt=0)
    plateau_patience: int = Field(50, ge=1)
    lr_halving: bool = True
    validation_fraction: float = Field(0.2, ge=0, lt=1)
    standardize: bool = False
    dtype: Literal["float32", "float64"] = "float64"

    def build(self, n_in: int, n_out: int, seed: int) -> mlp.MlpConfig:
        return mlp.MlpConfig(
            layer_dims=(n_in, *self.hidden, n_out),
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_init=self.lr_init,
            plateau_patience=self.plateau_patience,
            lr_halving=self.lr_halving,
            validation_fraction=self.validation_fraction,
            seed=seed,
            standardize=self.standardize,
            dtype=self.dtype,
        )


class ReadoutSection(_Section):
    kind: Literal["ridge", "mlp"] = "ridge"
    lam: float = Field(1e-2, gt=0)
    washout: int = Field(0, ge=0)
    mlp: MlpSection = MlpSection()


class WindowSection(_Section):
    window_len: int = Field(ge=1)
    stride: int = Field(1, ge=1)
    # States before this index are not considered warmed up.
    pair_washout: int = Field(0, ge=0)


class ModeSelectionSpec(_Section):
    kind: Literal["first_k", "manual", "residual"] = "first_k"
    k: int = 2
    indices: list[int] = []
    threshold: float = 0.5
    max_modes: Optional[int] = None

    def build(self) -> manifold.ModeSelection:
        if self.kind == "first_k":
            return manifold.FirstK(self.k)
        if self.kind == "manual":
            return manifold.ManualIndices(tuple(self.indices))
        return manifold.ResidualTest(self.threshold, self.max_modes)


EpsilonSpec = Union[Literal["median_sq", "median"], float]


class GhSection(_Section):
    epsilon: EpsilonSpec = "median_sq"
    kappa: float = Field(0.0, ge=0, le=1)
    n_modes_keep: int = Field(10, ge=1)
    mode_selection: ModeSelectionSpec = ModeSelectionSpec()
    delta: float = Field(1e-4, gt=0, lt=1)
    coord_delta: float = Field(1e-4, gt=0, lt=1)
    gh_epsilon: EpsilonSpec = "median_sq"
    max_points: int = Field(4000, ge=10)


class PcaMlpSection(_Section):
    k: int = Field(100, ge=1)
    mlp: MlpSection = MlpSection()


class StartingMapSection(_Section):
    backend: Literal["gh", "pca_mlp"] = "gh"
    gh: GhSection = GhSection()
    pca_mlp: PcaMlpSection = PcaMlpSection()


class ContinuationSection(_Section):
    # Observations available before the prediction point.
    history: int = Field(ge=1)
    horizon: int = Field(ge=1)
    modes: list[str] = ["coldstart"]

    @field_validator("modes")
    @classmethod
    def _check_modes(cls, modes):
        for m in modes:
            parse_mode(m)
        if len(set(modes)) != len(modes):
            raise ValueError("duplicate continuation modes")
        return modes


class RobustnessSection(_Section):
    sigma_sq_max: float = Field(0.03, gt=0)
    n_levels: int = Field(1000, ge=2)
    k_innovations: int = Field(10, ge=1)
    mse_horizon: int = Field(100, ge=1)
    perturbation: Literal["per_coordinate", "scalar"] = "per_coordinate"


class ExperimentConfig(_Section):
    name: str = "experiment"
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "runs/experiment"
    threads: int = Field(1, ge=1)
    system: SystemSection
    train: EnsembleSection
    test: EnsembleSection
    reservoir: ReservoirSection
    readout: ReadoutSection = ReadoutSection()
    window: WindowSection
    starting_map: StartingMapSection = StartingMapSection()
    continuation: ContinuationSection
    robustness: Optional[RobustnessSection] = None

    @model_validator(mode="after")
    def _consistent(self):
        dim = 2 if self.system.kind == "brusselator" else 3
        for name, ens in (("train", self.train), ("test", self.test)):
            if len(ens.init) != dim:
                raise ValueError(f"{name}.init has {len(ens.init)} entries, {self.system.kind} needs {dim}")
        c = self.continuation
        if self.test.length < c.history + c.horizon:
            raise ValueError("test.length must cover continuation.history + continuation.horizon")
        for m in c.modes:
            kind, n = parse_mode(m)
            if kind == "warmup" and n > c.history:
                raise ValueError(f"mode {m!r} needs more history than continuation.history={c.history}")
        if self.window.window_len > c.history:
            raise ValueError("window_len exceeds continuation.history")
        if self.train.length <= self.readout.washout + 1:
            raise ValueError("train.length must exceed readout.washout + 1")
        if self.robustness is not None:
            r = self.robustness
            if self.test.n_trajectories < r.k_innovations:
                raise ValueError("robustness needs at least k_innovations test trajectories (one window each)")
            if self.test.length < c.history + r.mse_horizon:
                raise ValueError("test.length must cover continuation.history + robustness.mse_horizon")
        return self

    # translation helpers -------------------------------------------------

    def ensemble(self, which: Literal["train", "test"]) -> dynamics.SamplingConfig:
        ens = self.train if which == "train" else self.test
        stream = rng.TRAIN_ICS if which == "train" else rng.TEST_ICS
        return dynamics.SamplingConfig(
            dt=ens.dt,
            t_start=ens.t_start,
            t_end=ens.t_end,
            init_dist=tuple(dynamics.InitDist(i.kind, i.a, i.b) for i in ens.init),
            n_trajectories=ens.n_trajectories,
            seed=self.seed,
            stream=stream,
        )

    def esn_params(self) -> reservoir.EsnParams:
        r = self.reservoir
        return reservoir.EsnParams(r.n_states, r.leak_rate, r.spectral_radius, 1, r.matrix_dist, self.seed)

    def ridge(self) -> readout.RidgeConfig:
        return readout.RidgeConfig(self.readout.lam)

    def readout_mlp(self) -> mlp.MlpConfig:
        return self.readout.mlp.build(self.reservoir.n_states, 1, self.seed)

    def window_spec(self) -> starting_map.WindowSpec:
        return starting_map.WindowSpec(self.window.window_len, self.window.stride)

    def starting_map_hyper(self) -> starting_map.GhHyper | starting_map.PcaMlpHyper:
        sm = self.starting_map
        if sm.backend == "gh":
            g = sm.gh
            dm = manifold.DmapsConfig(g.epsilon, g.kappa, g.n_modes_keep, g.mode_selection.build())
            return starting_map.GhHyper(dm, g.delta, g.gh_epsilon, g.coord_delta, g.max_points)
        p = sm.pca_mlp
        net = p.mlp.build(self.window.window_len, p.k, self.seed + 1)
        return starting_map.PcaMlpHyper(p.k, tuple(p.mlp.hidden), net)

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON form; output_dir and threads excluded."""
        data = self.model_dump(mode="json", exclude={"output_dir", "threads"})
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_mode(mode: str) -> tuple[str, int]:
    """``"coldstart"`` or ``"warmup:<n>"`` -> (kind, n)."""
    if mode == "coldstart":
        return "coldstart", 0
    kind, _, n = mode.partition(":")
    if kind != "warmup" or not n.isdigit() or int(n) < 1:
        raise ValueError(f"continuation mode must be 'coldstart' or 'warmup:<n>', got {mode!r}")
    return "warmup", int(n)


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Parse a TOML file; keyword overrides (``seed=``, ``output_dir=``, ...) win."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)
