"""On-disk formats for fitted models.

Every model is a directory holding one ``<name>.bin`` per array (raw
row-major little-endian values, ``<f8`` or ``<f4``) and a ``meta.json``
sidecar listing each array's shape and dtype next to the scalar
parameters needed to rebuild the object.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from coldstart import harmonics, manifold, mlp, pca, readout, reservoir, starting_map

FORMAT_VERSION = 1


def dump_arrays(directory: str | Path, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt.kind not in "fi":
            raise TypeError(f"array {name!r} has unsupported dtype {arr.dtype}")
        np.ascontiguousarray(arr, dtype=dt).tofile(d / f"{name}.bin")
        index[name] = {"shape": list(arr.shape), "dtype": dt.str}
    sidecar = {"format_version": FORMAT_VERSION, "arrays": index, "meta": meta}
    (d / "meta.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_arrays(directory: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    d = Path(directory)
    sidecar = json.loads((d / "meta.json").read_text())
    if sidecar.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{d}: unsupported dump format {sidecar.get('format_version')!r}")
    arrays = {}
    for name, info in sidecar["arrays"].items():
        a = np.fromfile(d / f"{name}.bin", dtype=np.dtype(info["dtype"]))
        arrays[name] = a.reshape(info["shape"]).astype(np.dtype(info["dtype"]).newbyteorder("="))
    return arrays, sidecar["meta"]


# reservoir -----------------------------------------------------------------


def save_esn(directory, model: reservoir.EsnModel) -> None:
    p = model.params
    meta = {
        "kind": "esn",
        "n_states": p.n_states,
        "leak_rate": p.leak_rate,
        "spectral_radius": p.spectral_radius,
        "input_dim": p.input_dim,
        "matrix_dist": p.matrix_dist,
        "seed": p.seed,
    }
    dump_arrays(directory, {"a_matrix": model.a_matrix, "c_matrix": model.c_matrix}, meta)


def load_esn(directory) -> reservoir.EsnModel:
    arrays, meta = load_arrays(directory)
    params = reservoir.EsnParams(
        meta["n_states"], meta["leak_rate"], meta["spectral_radius"], meta["input_dim"], meta["matrix_dist"], meta["seed"]
    )
    return reservoir.EsnModel(arrays["a_matrix"], arrays["c_matrix"], params)


# readouts and networks ------------------------------------------------------


def _mlp_arrays(net: mlp.MlpModel, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}w{i}"] = w
        out[f"{prefix}b{i}"] = b
    for name in ("x_shift", "x_scale", "y_shift", "y_scale"):
        v = getattr(net, name)
        if v is not None:
            out[prefix + name] = v
    return out


def _mlp_from(arrays: dict[str, np.ndarray], n_layers: int, prefix: str = "") -> mlp.MlpModel:
    net = mlp.MlpModel(
        [arrays[f"{prefix}w{i}"] for i in range(n_layers)],
        [arrays[f"{prefix}b{i}"] for i in range(n_layers)],
    )
    for name in ("x_shift", "x_scale", "y_shift", "y_scale"):
        setattr(net, name, arrays.get(prefix + name))
    return net


def save_readout(directory, r) -> None:
    if isinstance(r, readout.LinearReadout):
        arrays = {"weights": r.weights, "state_mean": r.state_mean, "target_mean": r.target_mean}
        dump_arrays(directory, arrays, {"kind": "linear"})
    elif isinstance(r, readout.MlpReadout):
        meta = {"kind": "mlp", "layer_dims": list(r.net.layer_dims), "history": r.net.history}
        dump_arrays(directory, _mlp_arrays(r.net), meta)
    else:
        raise TypeError(f"cannot persist readout of type {type(r).__name__}")


def load_readout(directory):
    arrays, meta = load_arrays(directory)
    if meta["kind"] == "linear":
        return readout.LinearReadout(arrays["weights"], arrays["state_mean"], arrays["target_mean"])
    if meta["kind"] == "mlp":
        net = _mlp_from(arrays, len(meta["layer_dims"]) - 1)
        net.history = meta.get("history", {})
        return readout.MlpReadout(net)
    raise ValueError(f"unknown readout kind {meta['kind']!r}")


# starting maps --------------------------------------------------------------


def _gh_arrays(g: harmonics.GhModel, prefix: str) -> dict[str, np.ndarray]:
    return {
        prefix + "coords": g.coords,
        prefix + "targets": g.targets,
        prefix + "eigvecs": g.eigvecs,
        prefix + "eigvals": g.eigvals,
        prefix + "coeffs": g.projected_coeffs,
    }


def _gh_from(arrays, prefix: str, meta: dict) -> harmonics.GhModel:
    return harmonics.GhModel(
        arrays[prefix + "coords"],
        arrays[prefix + "targets"],
        meta["epsilon_prime"],
        arrays[prefix + "eigvecs"],
        arrays[prefix + "eigvals"],
        meta["delta"],
        arrays[prefix + "coeffs"],
    )


def save_starting_map(directory, model: starting_map.StartingMapModel) -> None:
    meta: dict[str, Any] = {
        "backend": model.kind,
        "window_len": model.window_spec.window_len,
        "stride": model.window_spec.stride,
        "state_dim": model.state_dim,
        "flag_radius": model.flag_radius,
    }
    arrays = {"train_windows": model.train_windows}
    b = model.backend
    if isinstance(b, starting_map.GhBackend):
        e = b.embedding
        arrays.update(
            {"dm_eigenvalues": e.eigenvalues, "dm_modes": e.modes, "dm_dataset": e.dataset},
        )
        arrays.update(_gh_arrays(b.coord_map, "coord_"))
        arrays.update(_gh_arrays(b.state_map, "state_"))
        meta["dmaps"] = {"selected": list(e.selected_indices), "epsilon": e.epsilon_used, "kappa": e.kappa}
        meta["coord_map"] = {"epsilon_prime": b.coord_map.epsilon_prime, "delta": b.coord_map.delta}
        meta["state_map"] = {"epsilon_prime": b.state_map.epsilon_prime, "delta": b.state_map.delta}
    else:
        arrays.update({"pca_mean": b.pca.mean, "pca_components": b.pca.components, "pca_variance": b.pca.explained_variance})
        arrays.update(_mlp_arrays(b.net, "net_"))
        meta["layer_dims"] = list(b.net.layer_dims)
        meta["history"] = b.net.history
    dump_arrays(directory, arrays, meta)


def load_starting_map(directory) -> starting_map.StartingMapModel:
    arrays, meta = load_arrays(directory)
    spec = starting_map.WindowSpec(meta["window_len"], meta["stride"])
    if meta["backend"] == "gh":
        dm = meta["dmaps"]
        emb = manifold.DmapsEmbedding(
            arrays["dm_eigenvalues"], arrays["dm_modes"], tuple(dm["selected"]), dm["epsilon"], dm["kappa"], arrays["dm_dataset"]
        )
        backend = starting_map.GhBackend(
            emb, _gh_from(arrays, "coord_", meta["coord_map"]), _gh_from(arrays, "state_", meta["state_map"])
        )
    elif meta["backend"] == "pca_mlp":
        pm = pca.PcaModel(arrays["pca_mean"], arrays["pca_components"], arrays["pca_variance"])
        net = _mlp_from(arrays, len(meta["layer_dims"]) - 1, "net_")
        net.history = meta.get("history", {})
        backend = starting_map.PcaMlpBackend(pm, net)
    else:
        raise ValueError(f"unknown starting-map backend {meta['backend']!r}")
    return starting_map.StartingMapModel(backend, spec, meta["state_dim"], arrays["train_windows"], meta["flag_radius"])
