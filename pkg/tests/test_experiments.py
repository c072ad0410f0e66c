import json
import shutil
from pathlib import Path

import numpy as np
import pydantic
import pytest

from coldstart import cli
from coldstart import readout as ro
from coldstart import reservoir as res
from coldstart.experiments import config as cf
from coldstart.experiments import pipeline as pl
from coldstart.experiments import store

ROOT = Path(__file__).resolve().parents[1]

TINY = """
name = "tiny"
seed = 3
output_dir = "{out}"

[system]
kind = "brusselator"

[train]
dt = 0.2
t_end = 30.0
n_trajectories = 30
length = 150
init = [{{ kind = "uniform", a = 0.0, b = 2.0 }}, {{ kind = "uniform", a = 0.0, b = 3.0 }}]

[test]
dt = 0.2
t_end = 20.0
n_trajectories = 12
length = 80
init = [{{ kind = "uniform", a = 0.0, b = 2.0 }}, {{ kind = "uniform", a = 0.0, b = 3.0 }}]

[reservoir]
n_states = 64
leak_rate = 0.51
spectral_radius = 0.98
matrix_dist = "uniform_sym"

[readout]
lam = 0.01
washout = 1

[window]
window_len = 5
stride = 2
pair_washout = 50

[starting_map.gh]
mode_selection = {{ kind = "first_k", k = 2 }}
coord_delta = 1e-6
delta = 1e-8
max_points = 600

[continuation]
history = 30
horizon = 40
modes = ["warmup:5", "coldstart"]
{extra}
"""

SWEEP = """
[robustness]
sigma_sq_max = 0.03
n_levels = 60
k_innovations = 4
mse_horizon = 40
"""


def write_config(tmp_path, extra="", **subs) -> Path:
    text = TINY.format(out=tmp_path / "run", extra=extra)
    for k, v in subs.items():
        text = text.replace(k, v)
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return p


def test_evaluate_mse_examples():
    y = np.array([1.0, -2.0, 3.5])
    assert pl.evaluate_mse(y, y) == 0.0
    assert pl.evaluate_mse(y + 1, y) == 1.0
    gen = np.random.default_rng(0)
    a, b = gen.normal(size=17), gen.normal(size=17)
    assert pl.evaluate_mse(a, b) == pytest.approx(sum((p - q) ** 2 for p, q in zip(a, b)) / 17, rel=1e-14)
    with pytest.raises(ValueError):
        pl.evaluate_mse(a, b[:-1])


def test_shipped_configs_parse():
    for name in ("brusselator", "lorenz", "lorenz_robustness"):
        cfg = cf.load_config(ROOT / "configs" / f"{name}.toml")
        assert len(cfg.fingerprint()) == 64
        cfg.starting_map_hyper()


def test_config_rejects_unknown_keys(tmp_path):
    p = write_config(tmp_path, extra="bogus = 1")
    with pytest.raises(pydantic.ValidationError):
        cf.load_config(p)
    p = write_config(tmp_path, **{"lam = 0.01": "lam = 0.01\nlambda = 2"})
    with pytest.raises(pydantic.ValidationError):
        cf.load_config(p)


def test_config_consistency_checks(tmp_path):
    with pytest.raises(pydantic.ValidationError, match="history"):
        cf.load_config(write_config(tmp_path, **{'"warmup:5"': '"warmup:31"'}))
    with pytest.raises(pydantic.ValidationError):
        cf.load_config(write_config(tmp_path, **{'"warmup:5"': '"burnin:5"'}))
    with pytest.raises(pydantic.ValidationError, match="init"):
        cf.load_config(write_config(tmp_path, **{'kind = "brusselator"': 'kind = "lorenz"'}))
    with pytest.raises(pydantic.ValidationError, match="horizon"):
        cf.load_config(write_config(tmp_path, **{"horizon = 40": "horizon = 60"}))


def test_overrides_and_fingerprint(tmp_path):
    p = write_config(tmp_path)
    a = cf.load_config(p)
    b = cf.load_config(p, seed=4, threads=3, output_dir="elsewhere")
    assert b.seed == 4 and b.threads == 3 and b.output_dir == "elsewhere"
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == cf.load_config(p, threads=8).fingerprint()


def test_parse_mode():
    assert cf.parse_mode("coldstart") == ("coldstart", 0)
    assert cf.parse_mode("warmup:50") == ("warmup", 50)
    for bad in ("warmup", "warmup:0", "warmup:x", "cold"):
        with pytest.raises(ValueError):
            cf.parse_mode(bad)


def test_matrix_dump_format(tmp_path):
    a = np.arange(6, dtype=float).reshape(2, 3)
    store.dump_arrays(tmp_path / "m", {"a": a, "f": np.ones(2, np.float32)}, {"note": "x"})
    raw = (tmp_path / "m" / "a.bin").read_bytes()
    assert raw == a.astype("<f8").tobytes(order="C")
    meta = json.loads((tmp_path / "m" / "meta.json").read_text())
    assert meta["arrays"]["a"] == {"shape": [2, 3], "dtype": "<f8"}
    arrays, m = store.load_arrays(tmp_path / "m")
    np.testing.assert_array_equal(arrays["a"], a)
    assert arrays["f"].dtype == np.float32 and m == {"note": "x"}


def test_model_round_trips(tmp_path):
    model = res.generate(res.EsnParams(16, 0.4, 0.9, matrix_dist="uniform_sym", seed=2))
    store.save_esn(tmp_path / "esn", model)
    back = store.load_esn(tmp_path / "esn")
    assert back.params == model.params and np.array_equal(back.a_matrix, model.a_matrix)
    rd = ro.LinearReadout(np.ones((1, 16)), np.zeros(16), np.array([2.0]))
    store.save_readout(tmp_path / "rd", rd)
    assert np.array_equal(store.load_readout(tmp_path / "rd").weights, rd.weights)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tiny")
    cfg = cf.load_config(write_config(tmp, extra=SWEEP))
    results = pl.run_path_continuation(cfg)
    table = pl.run_robustness_stage(
        cfg, pl.Workspace(cfg.output_dir), *_load_models(cfg), pl.load_observations(pl.Workspace(cfg.output_dir), "test", 80)
    )
    return tmp, cfg, results, table


def _load_models(cfg):
    ws = pl.Workspace(cfg.output_dir)
    return store.load_esn(ws.esn), store.load_readout(ws.readout), store.load_starting_map(ws.starting_map)


def test_pipeline_outputs(tiny_run):
    _, cfg, results, table = tiny_run
    out = Path(cfg.output_dir)
    assert len(results) == 2 * 12
    assert all(len(r.y_pred) == 40 and r.mse >= 0 for r in results)
    lines = (out / "predictions.csv").read_text().splitlines()
    assert lines[0] == "traj_id,step,y_true,y_pred,mode" and len(lines) == 1 + 24 * 40
    assert (out / "mse_summary.csv").read_text().splitlines()[0] == "traj_id,mode,mse"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_fingerprint"] == cfg.fingerprint()
    fs = manifest["stages"]["fit_startmap"]
    assert {"dmaps_epsilon", "coord_map", "state_map"} <= set(fs)
    assert len(table) == 60 * 4
    assert np.array_equal(table.mse[table.level == 0], table.baseline)
    assert (out / "robustness.csv").read_text().splitlines()[0] == "level,sigma_sq,rep,window_id,mse"


def test_saved_starting_map_reproduces_in_memory_results(tiny_run):
    _, cfg, results, _ = tiny_run
    model, rd, smap = _load_models(cfg)
    obs = pl.load_observations(pl.Workspace(cfg.output_dir), "test", cfg.test.length)
    again = pl.continue_paths(cfg, model, rd, smap, obs)
    assert [r.mse for r in again] == [r.mse for r in results]


def test_thread_count_does_not_change_outputs(tiny_run, tmp_path):
    _, cfg, results, table = tiny_run
    cfg4 = cfg.model_copy(update={"threads": 4})
    model, rd, smap = _load_models(cfg)
    obs = pl.load_observations(pl.Workspace(cfg.output_dir), "test", cfg.test.length)
    assert [r.mse for r in pl.continue_paths(cfg4, model, rd, smap, obs)] == [r.mse for r in results]
    t4 = pl.robustness_sweep(cfg4, model, rd, smap, obs)
    assert np.array_equal(t4.mse, table.mse)


def test_sweep_levels_and_innovations():
    sweep = cf.RobustnessSection()
    lv = pl.sweep_levels(sweep)
    assert len(lv) == 1000 and lv[0] == 0.0
    assert lv[1] == pytest.approx(0.03 / 1000) and lv[-1] < 0.03
    eta = pl.draw_innovations(0, 5, 0.01, 10, 900, "per_coordinate")
    assert eta.shape == (10, 900) and eta.min() >= 0 and eta.max() <= np.sqrt(12 * 0.01)
    big = pl.draw_innovations(0, 5, 0.01, 4000, 100, "per_coordinate")
    assert big.var() == pytest.approx(0.01, rel=0.02)
    assert pl.draw_innovations(0, 5, 0.01, 10, 900, "scalar").shape == (10, 1)
    assert np.all(pl.draw_innovations(0, 0, 0.0, 3, 5, "per_coordinate") == 0.0)


def test_sweep_regression_recovers_line():
    lv = np.repeat(np.arange(100), 3)
    s2 = lv * 1e-4
    table = pl.SweepTable(lv, s2, np.tile(np.arange(3), 100), np.tile(np.arange(3), 100), 2.0 + 50 * s2, np.zeros(3))
    reg = pl.sweep_regression(table)
    assert reg["slope"] == pytest.approx(50) and reg["intercept"] == pytest.approx(2) and reg["r2"] == pytest.approx(1)


def test_cli_stages(tmp_path, capsys):
    p = write_config(tmp_path, **{"n_trajectories = 30": "n_trajectories = 20"})
    base = ["--config", str(p)]
    assert cli.main(["simulate", *base]) == 0
    assert len(list((tmp_path / "run" / "trajectories" / "train").glob("*.csv"))) == 20
    assert cli.main(["train", *base]) == 0
    assert cli.main(["fit-startmap", *base]) == 0
    assert cli.main(["continue", *base, "--threads", "2"]) == 0
    first = (tmp_path / "run" / "mse_summary.csv").read_bytes()
    assert cli.main(["report", *base]) == 0
    out = capsys.readouterr().out
    assert "coldstart" in out and "warmup:5" in out
    assert cli.main(["robustness", *base]) == 2
    # same config and seed, different output directory: identical CSV bytes
    assert cli.main(["all", *base, "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "mse_summary.csv").read_bytes() == first


def test_cli_errors(tmp_path, capsys):
    p = write_config(tmp_path)
    assert cli.main(["train", "--config", str(p)]) == 2
    assert "simulate" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["continue"])
    shutil.rmtree(tmp_path / "run", ignore_errors=True)
    assert cli.main(["report", "--config", str(p)]) == 1
