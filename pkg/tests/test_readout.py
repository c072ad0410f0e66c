import numpy as np
import pytest

from coldstart import mlp
from coldstart import readout as ro


def _demeaned_solve(x, u, lam):
    """Independent oracle: explicit inverse on demeaned columns (x is N x n, u is d x n)."""
    xc = x - x.mean(axis=1, keepdims=True)
    uc = u - u.mean(axis=1, keepdims=True)
    return (np.linalg.inv(xc @ xc.T + lam * np.eye(x.shape[0])) @ xc @ uc.T).T


def test_two_unit_example():
    x = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    u = np.array([[1.0, 1.0, 2.0]])
    r = ro.fit_ridge([x.T], [u[0]], ro.RidgeConfig(0.1))
    # demeaned Gram is [[2/3, -1/3], [-1/3, 2/3]], cross product (1/3, 1/3): W = 10/13 each
    np.testing.assert_allclose(r.weights, [[10 / 13, 10 / 13]], rtol=1e-12)
    np.testing.assert_allclose(r.weights, _demeaned_solve(x, u, 0.1), rtol=1e-10)
    np.testing.assert_allclose(r.state_mean, [2 / 3, 2 / 3])
    np.testing.assert_allclose(r.target_mean, [4 / 3])


def test_matches_dense_oracle_on_random_instances():
    gen = np.random.default_rng(0)
    for _ in range(20):
        n, d = gen.integers(1, 33), gen.integers(1, 4)
        blocks = [gen.normal(size=(gen.integers(2, 30), n)) for _ in range(gen.integers(1, 5))]
        targets = [gen.normal(size=(len(b), d)) for b in blocks]
        lam = 10.0 ** gen.uniform(-4, 1)
        r = ro.fit_ridge(blocks, targets, ro.RidgeConfig(lam))
        ref = _demeaned_solve(np.vstack(blocks).T, np.vstack(targets).T, lam)
        np.testing.assert_allclose(r.weights, ref, rtol=1e-8, atol=1e-12)


def test_large_penalty_shrinks_to_zero():
    gen = np.random.default_rng(1)
    x = gen.normal(size=(50, 8))
    u = gen.normal(size=50)
    r = ro.fit_ridge([x], [u], ro.RidgeConfig(1e12))
    xc, uc = x - x.mean(0), u - u.mean()
    assert np.linalg.norm(r.weights, 2) < 1e-9 * np.linalg.norm(xc.T @ uc)


def test_normal_equation_residual():
    gen = np.random.default_rng(2)
    x = gen.normal(size=(300, 24))
    u = gen.normal(size=(300, 2))
    lam = 1e-3
    r = ro.fit_ridge([x], [u], ro.RidgeConfig(lam))
    xc, uc = (x - x.mean(0)).T, (u - u.mean(0)).T
    lhs = (xc @ xc.T + lam * np.eye(24)) @ r.weights.T
    assert np.linalg.norm(lhs - xc @ uc.T) <= 1e-8 * np.linalg.norm(xc @ uc.T)


def test_ridge_optimality_under_perturbation():
    gen = np.random.default_rng(3)
    x = gen.normal(size=(60, 10))
    u = x @ gen.normal(size=10) + 0.1 * gen.normal(size=60)
    lam = 0.5
    r = ro.fit_ridge([x], [u], ro.RidgeConfig(lam))
    best = ro.ridge_objective(r, x, u, lam)
    for _ in range(20):
        dw = gen.normal(size=r.weights.shape)
        dw *= 1e-3 / np.linalg.norm(dw)
        other = ro.LinearReadout(r.weights + dw, r.state_mean, r.target_mean)
        assert ro.ridge_objective(other, x, u, lam) > best


def test_gradient_descent_oracle():
    gen = np.random.default_rng(4)
    for n in (3, 9, 16):
        x = gen.normal(size=(80, n))
        u = gen.normal(size=80)
        lam = 1.0
        xc, uc = x - x.mean(0), u - u.mean()
        w = np.zeros(n)
        step = 1.0 / (2 * (np.linalg.norm(xc, 2) ** 2 + lam))
        for _ in range(20000):
            w -= step * 2 * (xc.T @ (xc @ w - uc) + lam * w)
        r = ro.fit_ridge([x], [u], ro.RidgeConfig(lam))
        np.testing.assert_allclose(r.weights[0], w, atol=1e-6)


def test_streaming_chunks_match_single_pass():
    gen = np.random.default_rng(5)
    x = gen.normal(size=(500, 12)) + 3.0
    u = gen.normal(size=500) - 7.0
    one = ro.fit_ridge([x], [u], ro.RidgeConfig(0.01))
    many = ro.fit_ridge(np.split(x, [17, 100, 101, 350]), np.split(u, [17, 100, 101, 350]), ro.RidgeConfig(0.01))
    np.testing.assert_allclose(many.weights, one.weights, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(many.state_mean, one.state_mean, rtol=1e-12)


def test_predict_properties():
    r = ro.LinearReadout(np.zeros((1, 3)), np.array([1.0, 2.0, 3.0]), np.array([0.25]))
    np.testing.assert_array_equal(r(np.array([9.0, -9.0, 4.0])), [0.25])
    r = ro.LinearReadout(np.array([[1.0, -2.0, 0.5]]), np.array([1.0, 2.0, 3.0]), np.array([0.25]))
    np.testing.assert_array_equal(r(r.state_mean), [0.25])
    # hand evaluation: 1*(2-1) - 2*(0-2) + 0.5*(5-3) + 0.25 = 6.25
    assert r(np.array([2.0, 0.0, 5.0]))[0] == pytest.approx(6.25)
    batch = r(np.array([[2.0, 0.0, 5.0], [1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(batch[:, 0], [6.25, 0.25])


def test_shape_errors():
    with pytest.raises(ValueError):
        ro.RidgeConfig(0.0)
    with pytest.raises(ValueError):
        ro.fit_ridge([np.ones((3, 2))], [np.ones(4)], ro.RidgeConfig(1.0))
    with pytest.raises(ValueError):
        ro.fit_ridge([np.ones((3, 2))], [], ro.RidgeConfig(1.0))
    r = ro.LinearReadout(np.zeros((1, 3)), np.zeros(3), np.zeros(1))
    with pytest.raises(ValueError):
        r(np.zeros(4))


def test_mlp_readout_adapter():
    gen = np.random.default_rng(6)
    x = gen.normal(size=(40, 5))
    y = x.sum(axis=1)
    cfg = mlp.MlpConfig((5, 8, 1), epochs=3, batch_size=10, dtype="float32")
    r = ro.fit_mlp_readout([x[:20], x[20:]], [y[:20], y[20:]], cfg)
    out = r(x[:3])
    assert out.dtype == np.float64 and out.shape == (3, 1)
    assert r.n_states == 5
