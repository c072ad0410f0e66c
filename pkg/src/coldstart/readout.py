"""Ridge-regression readout on demeaned states and targets.

The fitted map is affine in observation units::

    predict(x) = W (x - state_mean) + target_mean

with ``W`` solving ``(X X^T + lam I) W^T = X U^T`` for the pooled, demeaned
state matrix ``X`` (N x n) and target matrix ``U`` (d x n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import scipy.linalg


class Readout(Protocol):
    def __call__(self, state: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class RidgeConfig:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("ridge penalty must be positive")


@dataclass(frozen=True)
class LinearReadout:
    weights: np.ndarray = field(repr=False)  # (d, N)
    state_mean: np.ndarray = field(repr=False)  # (N,)
    target_mean: np.ndarray = field(repr=False)  # (d,)

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return predict(self, state)

    @property
    def n_states(self) -> int:
        return self.weights.shape[1]


def predict(readout: LinearReadout, state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != readout.n_states:
        raise ValueError(f"state has dimension {state.shape[-1]}, readout expects {readout.n_states}")
    return (state - readout.state_mean) @ readout.weights.T + readout.target_mean


class RidgeAccumulator:
    """Streaming sufficient statistics for :func:`fit_ridge`.

    Keeps the pooled count, means, centered Gram ``X X^T`` and centered cross
    product ``X U^T``; chunks are merged with the pairwise (Chan et al.)
    update so no large uncentered sums are ever formed.
    """

    def __init__(self, n_states: int, n_targets: int):
        self.count = 0
        self.state_mean = np.zeros(n_states)
        self.target_mean = np.zeros(n_targets)
        self.gram = np.zeros((n_states, n_states))
        self.cross = np.zeros((n_states, n_targets))

    def update(self, states: np.ndarray, targets: np.ndarray) -> None:
        states = np.asarray(states, dtype=float)
        targets = _as_2d_targets(targets)
        if states.ndim != 2 or states.shape[1] != self.gram.shape[0]:
            raise ValueError(f"states must be (n, {self.gram.shape[0]})")
        if targets.shape != (states.shape[0], self.cross.shape[1]):
            raise ValueError("targets must align with states row for row")
        m = states.shape[0]
        if m == 0:
            return
        mx = states.mean(axis=0)
        mu = targets.mean(axis=0)
        xc = states - mx
        uc = targets - mu
        gram_b = xc.T @ xc
        cross_b = xc.T @ uc
        n = self.count
        tot = n + m
        dx = mx - self.state_mean
        du = mu - self.target_mean
        w = n * m / tot
        self.gram += gram_b + w * np.outer(dx, dx)
        self.cross += cross_b + w * np.outer(dx, du)
        self.state_mean = self.state_mean + dx * (m / tot)
        self.target_mean = self.target_mean + du * (m / tot)
        self.count = tot

    def solve(self, cfg: RidgeConfig) -> LinearReadout:
        if self.count < 1:
            raise ValueError("no training columns accumulated")
        lhs = self.gram + cfg.lam * np.eye(self.gram.shape[0])
        try:
            factor = scipy.linalg.cho_factor(lhs, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"Cholesky failed for lam={cfg.lam}; increase the ridge penalty"
            ) from exc
        w_t = scipy.linalg.cho_solve(factor, self.cross)
        return LinearReadout(w_t.T.copy(), self.state_mean.copy(), self.target_mean.copy())


def _as_2d_targets(targets) -> np.ndarray:
    t = np.asarray(targets, dtype=float)
    return t[:, None] if t.ndim == 1 else t


def fit_ridge(states: Sequence[np.ndarray], targets: Sequence[np.ndarray], cfg: RidgeConfig) -> LinearReadout:
    """Fit on per-trajectory (T_i, N) state blocks and aligned (T_i,) or (T_i, d) targets.

    Row ``t`` of a target block must be the observation one step ahead of
    row ``t`` of the matching state block. Means are pooled over all rows.
    """
    if len(states) != len(targets):
        raise ValueError("states and targets must contain the same number of trajectories")
    if not states:
        raise ValueError("need at least one trajectory")
    first_t = _as_2d_targets(targets[0])
    acc = RidgeAccumulator(np.asarray(states[0]).shape[1], first_t.shape[1])
    for x, u in zip(states, targets):
        if len(x) != len(u):
            raise ValueError(f"state block has {len(x)} rows but target block has {len(u)}")
        acc.update(x, u)
    return acc.solve(cfg)


def ridge_objective(readout: LinearReadout, states: np.ndarray, targets: np.ndarray, lam: float) -> float:
    """``||U - W X||_F^2 + lam ||W||_F^2`` on demeaned data (means taken from ``readout``)."""
    resid = _as_2d_targets(targets) - predict(readout, states)
    return float(np.sum(resid**2) + lam * np.sum(readout.weights**2))


class MlpReadout:
    """Adapter giving a trained network the readout call signature.

    Outputs are returned as float64 with a trailing ``d`` axis whatever the
    network's working precision.
    """

    def __init__(self, net):
        self.net = net

    @property
    def n_states(self) -> int:
        return self.net.layer_dims[0]

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(self.net(state), dtype=float)


def fit_mlp_readout(states: Sequence[np.ndarray], targets: Sequence[np.ndarray], config) -> MlpReadout:
    """Train an :class:`~coldstart.mlp.MlpModel` readout on pooled (state, next observation) rows."""
    from coldstart import mlp

    x = np.concatenate([np.asarray(s, dtype=float) for s in states])
    y = np.concatenate([_as_2d_targets(t) for t in targets])
    return MlpReadout(mlp.train(config, x, y))
