"""End-to-end experiment stages.

Each stage reads what the previous one wrote under ``cfg.output_dir`` so the
CLI subcommands can be run one at a time; :func:`run_path_continuation` and
:func:`run_robustness_sweep` chain them in memory. Work over test
trajectories and sweep levels is split into fixed-size chunks, so results do
not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

import coldstart
from coldstart import dynamics, readout, reservoir, rng, starting_map
from coldstart.experiments import store
from coldstart.experiments.config import ExperimentConfig, RobustnessSection, parse_mode

log = logging.getLogger(__name__)

TEST_CHUNK = 25
LEVEL_CHUNK = 50
TRAIN_CHUNK = 64


@dataclass
class Workspace:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def traj_dir(self, which: str) -> Path:
        return self.root / "trajectories" / which

    @property
    def esn(self) -> Path:
        return self.root / "model" / "esn"

    @property
    def readout(self) -> Path:
        return self.root / "model" / "readout"

    @property
    def starting_map(self) -> Path:
        return self.root / "model" / "starting_map"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    def update_manifest(self, cfg: ExperimentConfig, stage: str, info: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        data = json.loads(self.manifest.read_text()) if self.manifest.exists() else {}
        if data.get("config_fingerprint") not in (None, cfg.fingerprint()):
            log.warning("manifest belongs to a different configuration; stage records are reset")
            data = {}
        data.update(
            {
                "name": cfg.name,
                "config_fingerprint": cfg.fingerprint(),
                "library_version": coldstart.__version__,
                "seed": cfg.seed,
                "config": cfg.model_dump(mode="json"),
            }
        )
        data.setdefault("stages", {})[stage] = info
        self.manifest.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


@dataclass
class RunResult:
    traj_id: int
    mode: str
    y_true: np.ndarray
    y_pred: np.ndarray
    mse: float
    fingerprint: str
    wall_time: float
    error: str | None = None


def evaluate_mse(pred, truth) -> float:
    """Mean of squared differences between two equally long series."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty series")
    return float(np.mean((pred - truth) ** 2))


def _map_chunks(fn: Callable[[slice], object], n: int, chunk: int, threads: int) -> list:
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if threads <= 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))  # map keeps index order


# simulate ------------------------------------------------------------------


def simulate(cfg: ExperimentConfig) -> dict[str, list[dynamics.Trajectory]]:
    system = cfg.system.build()
    out = {}
    for which in ("train", "test"):
        t0 = time.perf_counter()
        trajs = dynamics.sample_ensemble(system, cfg.ensemble(which))
        log.info("simulated %d %s trajectories in %.1fs", len(trajs), which, time.perf_counter() - t0)
        out[which] = trajs
    return out


def save_trajectories(ws: Workspace, trajs: dict[str, list[dynamics.Trajectory]]) -> None:
    for which, items in trajs.items():
        d = ws.traj_dir(which)
        d.mkdir(parents=True, exist_ok=True)
        for old in d.glob("*.csv"):
            old.unlink()
        for i, t in enumerate(items):
            dynamics.save_trajectory_csv(d / f"{i:06d}.csv", t)


def load_observations(ws: Workspace, which: str, length: int) -> np.ndarray:
    files = sorted(ws.traj_dir(which).glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no {which} trajectories under {ws.traj_dir(which)}; run `simulate` first")
    return observations([dynamics.load_trajectory_csv(f) for f in files], length)


def observations(trajs: Sequence[dynamics.Trajectory], length: int) -> np.ndarray:
    """First-coordinate series sliced to ``length`` samples, stacked to (n, length)."""
    obs = [dynamics.observe(t)[:length] for t in trajs]
    if any(len(o) < length for o in obs):
        raise ValueError(f"a trajectory has fewer than {length} samples")
    return np.stack(obs)


# train ----------------------------------------------------------------------


def _drive_batch(model: reservoir.EsnModel, series: np.ndarray) -> np.ndarray:
    """States (T, B, N) from the zero state for a (B, T) batch of series."""
    return reservoir.drive(model, series.T[..., None], np.zeros((series.shape[0], model.n_states)))


def collect_training_states(model: reservoir.EsnModel, train_obs: np.ndarray, washout: int):
    """Yield (states, next observations) blocks, one per chunk of trajectories.

    A series of T observations gives T - washout - 1 rows: the states after
    feeding u_t for t = washout .. T-2 paired with u_{t+1}.
    """
    for c in range(0, len(train_obs), TRAIN_CHUNK):
        batch = train_obs[c : c + TRAIN_CHUNK]
        states = _drive_batch(model, batch)[washout:-1]  # (T - w - 1, B, N)
        x = states.transpose(1, 0, 2).reshape(-1, model.n_states)
        y = batch[:, washout + 1 :].reshape(-1)
        yield x, y


def train(cfg: ExperimentConfig, train_obs: np.ndarray):
    t0 = time.perf_counter()
    model = reservoir.generate(cfg.esn_params())
    t_gen = time.perf_counter() - t0
    washout = cfg.readout.washout
    if cfg.readout.kind == "ridge":
        acc = readout.RidgeAccumulator(model.n_states, 1)
        for x, y in collect_training_states(model, train_obs, washout):
            acc.update(x, y)
        rd = acc.solve(cfg.ridge())
        n_rows = acc.count
    else:
        blocks = list(collect_training_states(model, train_obs, washout))
        rd = readout.fit_mlp_readout([b[0] for b in blocks], [b[1] for b in blocks], cfg.readout_mlp())
        n_rows = sum(len(b[1]) for b in blocks)
    info = {
        "spectral_radius_target": model.params.spectral_radius,
        "contraction_bound": reservoir.contraction_bound(model),
        "readout": cfg.readout.kind,
        "training_rows": int(n_rows),
        "generate_seconds": t_gen,
        "wall_time": time.perf_counter() - t0,
    }
    log.info("readout (%s) trained on %d rows in %.1fs", cfg.readout.kind, n_rows, info["wall_time"])
    return model, rd, info


# fit-startmap -----------------------------------------------------------------


def fit_starting_map(cfg: ExperimentConfig, model: reservoir.EsnModel, train_obs: np.ndarray):
    t0 = time.perf_counter()
    spec = cfg.window_spec()
    windows, states = starting_map.build_training_pairs(model, list(train_obs), spec, cfg.window.pair_washout)
    smap = starting_map.fit(cfg.starting_map_hyper(), windows, states, spec)
    gen = rng.substream(cfg.seed, rng.WINDOWS)
    check = gen.choice(len(windows), size=min(500, len(windows)), replace=False)
    check.sort()
    err = starting_map.consistency_errors(smap, windows[check], states[check])
    info = {
        "backend": smap.kind,
        "n_pairs": int(len(windows)),
        "flag_radius": smap.flag_radius,
        "train_consistency_median": float(np.median(err)),
        "lipschitz_estimate": starting_map.lipschitz_estimate(smap, windows, 1000, gen),
    }
    b = smap.backend
    if isinstance(b, starting_map.GhBackend):
        info.update(
            {
                "dmaps_epsilon": b.embedding.epsilon_used,
                "dmaps_eigenvalues": b.embedding.eigenvalues,
                "dmaps_selected": list(b.embedding.selected_indices),
                "coord_map": {"epsilon_prime": b.coord_map.epsilon_prime, "delta": b.coord_map.delta, "n_modes": b.coord_map.n_modes},
                "state_map": {"epsilon_prime": b.state_map.epsilon_prime, "delta": b.state_map.delta, "n_modes": b.state_map.n_modes},
            }
        )
    else:
        info.update({"pca_k": b.pca.k, "final_val_loss": b.net.history["val_loss"][-1]})
    info["wall_time"] = time.perf_counter() - t0
    log.info("starting map (%s) fitted on %d pairs in %.1fs", smap.kind, len(windows), info["wall_time"])
    return smap, info


# continue ---------------------------------------------------------------------


def initial_states(
    mode: str, model: reservoir.EsnModel, smap: starting_map.StartingMapModel | None, tests: np.ndarray, history: int
) -> np.ndarray:
    """Reservoir states at the prediction point for a (B, >=history) block of test series."""
    kind, n = parse_mode(mode)
    if kind == "warmup":
        return _drive_batch(model, tests[:, history - n : history])[-1]
    if smap is None:
        raise ValueError("coldstart mode requires a fitted starting map")
    L = smap.window_spec.window_len
    return smap(tests[:, history - L : history])


def continue_paths(cfg, model, rd, smap, test_obs: np.ndarray) -> list[RunResult]:
    c = cfg.continuation
    fp = cfg.fingerprint()
    truth = test_obs[:, c.history : c.history + c.horizon]

    def work(sl: slice) -> list[RunResult]:
        out = []
        ids = range(sl.start, sl.stop)
        for mode in c.modes:
            t0 = time.perf_counter()
            try:
                x0 = initial_states(mode, model, smap, test_obs[sl], c.history)
                _, y = reservoir.autonomous_run(model, rd, x0, c.horizon, return_states=False)
                preds = y[..., 0].T
                errors = [None] * len(preds)
            except Exception as exc:  # recorded per trajectory, the run carries on
                log.error("mode %s failed on trajectories %d-%d: %s", mode, sl.start, sl.stop - 1, exc)
                preds = np.full((sl.stop - sl.start, c.horizon), np.nan)
                errors = [f"{type(exc).__name__}: {exc}"] * len(preds)
            dt = (time.perf_counter() - t0) / len(preds)
            for i, p, e in zip(ids, preds, errors):
                mse = evaluate_mse(p, truth[i]) if e is None else float("nan")
                out.append(RunResult(i, mode, truth[i].copy(), p, mse, fp, dt, e))
        return out

    chunks = _map_chunks(work, len(test_obs), TEST_CHUNK, cfg.threads)
    results = [r for ch in chunks for r in ch]
    order = {m: k for k, m in enumerate(c.modes)}
    results.sort(key=lambda r: (order[r.mode], r.traj_id))
    return results


def summarize(results: Iterable[RunResult]) -> dict[str, dict[str, float]]:
    by_mode: dict[str, list[float]] = {}
    for r in results:
        by_mode.setdefault(r.mode, []).append(r.mse)
    out = {}
    for mode, v in by_mode.items():
        a = np.asarray(v)
        ok = a[np.isfinite(a)]
        out[mode] = {
            "median_mse": float(np.median(ok)) if ok.size else float("nan"),
            "mean_mse": float(np.mean(ok)) if ok.size else float("nan"),
            "n": int(a.size),
            "n_failed": int(a.size - ok.size),
        }
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


def write_predictions(path: Path, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "step", "y_true", "y_pred", "mode"])
        for r in results:
            for k, (yt, yp) in enumerate(zip(r.y_true, r.y_pred), start=1):
                w.writerow([r.traj_id, k, _fmt(yt), _fmt(yp), r.mode])


def write_mse_summary(path: Path, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "mode", "mse"])
        for r in results:
            w.writerow([r.traj_id, r.mode, _fmt(r.mse)])


def read_mse_summary(path: Path) -> dict[str, np.ndarray]:
    by_mode: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_mode.setdefault(row["mode"], []).append(float(row["mse"]))
    return {m: np.asarray(v) for m, v in by_mode.items()}


def run_continuation_stage(cfg, ws: Workspace, model, rd, smap, test_obs) -> list[RunResult]:
    t0 = time.perf_counter()
    results = continue_paths(cfg, model, rd, smap, test_obs)
    write_predictions(ws.root / "predictions.csv", results)
    write_mse_summary(ws.root / "mse_summary.csv", results)
    summary = summarize(results)
    for mode, s in summary.items():
        log.info("%-12s median MSE %.6g  mean MSE %.6g  (%d runs)", mode, s["median_mse"], s["mean_mse"], s["n"])
    ws.update_manifest(cfg, "continue", {"summary": summary, "wall_time": time.perf_counter() - t0})
    return results


def run_path_continuation(cfg: ExperimentConfig) -> list[RunResult]:
    """simulate -> train -> fit-startmap -> continue, persisting every stage."""
    ws = Workspace(cfg.output_dir)
    trajs = simulate(cfg)
    save_trajectories(ws, trajs)
    train_obs = observations(trajs["train"], cfg.train.length)
    test_obs = observations(trajs["test"], cfg.test.length)
    model, rd, info = train(cfg, train_obs)
    store.save_esn(ws.esn, model)
    store.save_readout(ws.readout, rd)
    ws.update_manifest(cfg, "train", info)
    smap = None
    if any(parse_mode(m)[0] == "coldstart" for m in cfg.continuation.modes) or cfg.robustness is not None:
        smap, info = fit_starting_map(cfg, model, train_obs)
        store.save_starting_map(ws.starting_map, smap)
        ws.update_manifest(cfg, "fit_startmap", info)
    return run_continuation_stage(cfg, ws, model, rd, smap, test_obs)


# robustness -------------------------------------------------------------------


@dataclass
class SweepTable:
    level: np.ndarray  # (rows,)
    sigma_sq: np.ndarray
    rep: np.ndarray
    window_id: np.ndarray
    mse: np.ndarray
    baseline: np.ndarray = field(repr=False)  # (n_windows,) unperturbed MSE

    def __len__(self) -> int:
        return len(self.mse)


def sweep_levels(sweep: RobustnessSection) -> np.ndarray:
    """``n_levels`` equally spaced variances starting at 0 with spacing ``sigma_sq_max / n_levels``."""
    return np.arange(sweep.n_levels) * (sweep.sigma_sq_max / sweep.n_levels)


def draw_innovations(seed: int, level: int, sigma_sq: float, k: int, n_states: int, kind: str) -> np.ndarray:
    """``k`` innovations with entries ~ U[0, sqrt(12 sigma_sq)] (one draw per state when ``kind`` is scalar)."""
    gen = rng.substream(seed, rng.PERTURBATION, level)
    u = gen.uniform(0.0, 1.0, size=(k, n_states if kind == "per_coordinate" else 1))
    return u * np.sqrt(12.0 * sigma_sq)


def robustness_sweep(cfg, model, rd, smap, test_obs: np.ndarray, sweep: RobustnessSection | None = None) -> SweepTable:
    sweep = sweep or cfg.robustness
    if sweep is None:
        raise ValueError("configuration has no [robustness] section")
    K, H, hist = sweep.k_innovations, sweep.mse_horizon, cfg.continuation.history
    if len(test_obs) < K:
        raise ValueError(f"need {K} test series for the sweep windows, got {len(test_obs)}")
    L = smap.window_spec.window_len
    windows = test_obs[:K, hist - L : hist]
    truth = test_obs[:K, hist : hist + H]
    x0 = smap(windows)
    _, y = reservoir.autonomous_run(model, rd, x0, H, return_states=False)
    baseline = np.mean((y[..., 0].T - truth) ** 2, axis=1)
    levels = sweep_levels(sweep)

    def work(sl: slice) -> np.ndarray:
        # one (K, N) batch per level: the same shape as the baseline, so level 0 reproduces it bitwise
        out = np.empty((sl.stop - sl.start, K))
        for i, j in enumerate(range(sl.start, sl.stop)):
            eta = draw_innovations(cfg.seed, j, levels[j], K, model.n_states, sweep.perturbation)
            _, yy = reservoir.autonomous_run(model, rd, x0 + eta, H, return_states=False)
            out[i] = np.mean((yy[..., 0].T - truth) ** 2, axis=1)
        return out

    mse = np.concatenate(_map_chunks(work, sweep.n_levels, LEVEL_CHUNK, cfg.threads))
    lv = np.repeat(np.arange(sweep.n_levels), K)
    reps = np.tile(np.arange(K), sweep.n_levels)
    return SweepTable(lv, levels[lv], reps, reps.copy(), mse.reshape(-1), baseline)


def sweep_regression(table: SweepTable) -> dict[str, float]:
    """OLS of the per-level mean MSE against sigma^2; also a quadratic fit for comparison."""
    levels = np.unique(table.level)
    s2 = np.array([table.sigma_sq[table.level == j][0] for j in levels])
    mean = np.array([table.mse[table.level == j].mean() for j in levels])
    design = np.column_stack([np.ones_like(s2), s2])
    coef, *_ = np.linalg.lstsq(design, mean, rcond=None)
    resid = mean - design @ coef
    ss_tot = np.sum((mean - mean.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else float("nan")
    quad = np.polyfit(s2, mean, 2)
    return {"intercept": float(coef[0]), "slope": float(coef[1]), "r2": float(r2), "quadratic_coefficients": quad.tolist()}


def write_robustness(path: Path, table: SweepTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "sigma_sq", "rep", "window_id", "mse"])
        for j, s2, r, wid, m in zip(table.level, table.sigma_sq, table.rep, table.window_id, table.mse):
            w.writerow([int(j), _fmt(s2), int(r), int(wid), _fmt(m)])


def read_robustness(path: Path) -> SweepTable:
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SweepTable(a[:, 0].astype(int), a[:, 1], a[:, 2].astype(int), a[:, 3].astype(int), a[:, 4], np.array([]))


def run_robustness_stage(cfg, ws: Workspace, model, rd, smap, test_obs) -> SweepTable:
    t0 = time.perf_counter()
    table = robustness_sweep(cfg, model, rd, smap, test_obs)
    write_robustness(ws.root / "robustness.csv", table)
    reg = sweep_regression(table)
    zero = table.mse[table.level == 0]
    info = {
        "rows": len(table),
        "baseline_mse": table.baseline,
        "zero_level_equals_baseline": bool(np.array_equal(zero, table.baseline)),
        "regression": reg,
        "perturbation": cfg.robustness.perturbation,
        "wall_time": time.perf_counter() - t0,
    }
    log.info("sweep: %d rows, slope %.4g, R^2 %.3f", len(table), reg["slope"], reg["r2"])
    ws.update_manifest(cfg, "robustness", info)
    return table


def run_robustness_sweep(cfg: ExperimentConfig) -> SweepTable:
    """Full pipeline for a configuration with a [robustness] section."""
    if cfg.robustness is None:
        raise ValueError("configuration has no [robustness] section")
    ws = Workspace(cfg.output_dir)
    trajs = simulate(cfg)
    save_trajectories(ws, trajs)
    train_obs = observations(trajs["train"], cfg.train.length)
    test_obs = observations(trajs["test"], cfg.test.length)
    model, rd, info = train(cfg, train_obs)
    store.save_esn(ws.esn, model)
    store.save_readout(ws.readout, rd)
    ws.update_manifest(cfg, "train", info)
    smap, info = fit_starting_map(cfg, model, train_obs)
    store.save_starting_map(ws.starting_map, smap)
    ws.update_manifest(cfg, "fit_startmap", info)
    return run_robustness_stage(cfg, ws, model, rd, smap, test_obs)
