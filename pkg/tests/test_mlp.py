import numpy as np
import pytest

from coldstart import mlp
from coldstart.errors import MlpDivergenceError


def _random_params(dims, seed):
    gen = np.random.default_rng(seed)
    w = [gen.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    b = [gen.normal(size=n) for n in dims[1:]]
    return w, b


def gradient_check(dims, seed=0, n=10, h=1e-5) -> float:
    """Largest relative error between backprop and central differences over every parameter."""
    gen = np.random.default_rng(seed + 100)
    x = gen.normal(size=(n, dims[0]))
    y = gen.normal(size=(n, dims[-1]))
    w, b = _random_params(dims, seed)
    _, gw, gb = mlp.loss_and_gradients(w, b, x, y)
    worst = 0.0
    for params, grads in ((w, gw), (b, gb)):
        for p, g in zip(params, grads):
            num = np.empty_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                lp = mlp.loss_and_gradients(w, b, x, y)[0]
                p[idx] = old - h
                lm = mlp.loss_and_gradients(w, b, x, y)[0]
                p[idx] = old
                num[idx] = (lp - lm) / (2 * h)
            worst = max(worst, np.linalg.norm(g - num) / max(np.linalg.norm(g) + np.linalg.norm(num), 1e-12))
    return worst


@pytest.mark.parametrize("dims", [(4, 8, 3), (4, 8, 8, 3)])
def test_backprop_matches_central_differences(dims):
    assert gradient_check(dims) < 1e-4


def test_zero_network_outputs_zero():
    model = mlp.MlpModel([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    assert np.all(model(np.random.default_rng(0).normal(size=(5, 3))) == 0)


def test_single_layer_is_affine():
    w = np.array([[1.0, -2.0], [0.5, 3.0]])
    b = np.array([0.1, -0.2])
    model = mlp.MlpModel([w], [b])
    x = np.array([[-1.0, 2.0], [3.0, -4.0]])
    np.testing.assert_allclose(model(x), x @ w + b, rtol=1e-15)


def test_hand_evaluated_forward_pass():
    # 2-3-1: hidden = relu([x1 + x2, x1 - x2, -x1] + [0, 0.5, 1]), out = [1, 2, -1] . hidden + 0.25
    w1 = np.array([[1.0, 1.0, -1.0], [1.0, -1.0, 0.0]])
    b1 = np.array([0.0, 0.5, 1.0])
    w2 = np.array([[1.0], [2.0], [-1.0]])
    b2 = np.array([0.25])
    model = mlp.MlpModel([w1, w2], [b1, b2])
    # x = (2, 3): pre = (5, -0.5, -1) -> relu (5, 0, 0) -> 5 + 0.25
    assert model(np.array([2.0, 3.0]))[0] == pytest.approx(5.25)
    # x = (-1, 0.5): pre = (-0.5, -1, 2) -> (0, 0, 2) -> -2 + 0.25
    assert model(np.array([-1.0, 0.5]))[0] == pytest.approx(-1.75)


def test_learns_linear_map():
    x = np.linspace(-1, 1, 200)[:, None]
    cfg = mlp.MlpConfig((1, 16, 1), epochs=500, batch_size=20, lr_init=1e-2, plateau_patience=20, seed=1)
    model = mlp.train(cfg, x, 2 * x)
    assert model.history["val_loss"][-1] < 1e-4


def test_zero_targets_converge():
    x = np.random.default_rng(2).normal(size=(100, 3))
    cfg = mlp.MlpConfig((3, 8, 2), epochs=300, batch_size=100, lr_init=1e-2, validation_fraction=0.0, seed=0)
    model = mlp.train(cfg, x, np.zeros((100, 2)))
    loss = np.array(model.history["train_loss"])
    assert loss[-1] < 1e-3 * loss[0]
    # full-batch Adam: the running minimum keeps improving and the tail never bounces back up much
    assert loss[-50:].max() < 10 * loss[-1] + 1e-12


def test_training_is_bitwise_deterministic():
    gen = np.random.default_rng(3)
    x, y = gen.normal(size=(64, 4)), gen.normal(size=(64, 2))
    cfg = mlp.MlpConfig((4, 8, 8, 2), epochs=20, batch_size=16, seed=7)
    a, b = mlp.train(cfg, x, y), mlp.train(cfg, x, y)
    for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
        assert np.array_equal(wa, wb)
    assert a.history == b.history


def test_plateau_schedule():
    gen = np.random.default_rng(4)
    x, y = gen.normal(size=(50, 2)), gen.normal(size=(50, 1))  # noise: validation loss plateaus quickly
    cfg = mlp.MlpConfig((2, 4, 1), epochs=200, batch_size=10, lr_init=1e-2, plateau_patience=5, seed=0)
    hist = mlp.train(cfg, x, y).history
    lr = np.array(hist["lr"])
    assert np.all(np.diff(lr) <= 0)
    drops = np.flatnonzero(np.diff(lr) < 0) + 1
    assert len(drops) > 0
    assert np.all(np.diff(np.concatenate([[0], drops])) >= cfg.plateau_patience)
    np.testing.assert_allclose(lr[drops] / lr[drops - 1], 0.5)
    for d in drops:
        # no improvement over the best value seen before the patience window
        val = np.array(hist["val_loss"])
        start = d - cfg.plateau_patience
        assert val[start:d].min() >= val[:start].min() - mlp.MIN_IMPROVEMENT if start > 0 else True


def test_divergence_reports_epoch():
    x = np.random.default_rng(5).normal(size=(20, 2)) * 1e3
    cfg = mlp.MlpConfig((2, 8, 1), epochs=50, batch_size=20, lr_init=1e12, seed=0)
    with pytest.raises(MlpDivergenceError) as info:
        mlp.train(cfg, x, x[:, :1] ** 2 * 1e150)
    assert info.value.epoch >= 0


def test_float32_and_standardization():
    gen = np.random.default_rng(6)
    x = gen.normal(size=(200, 3)) * 50 + 10
    y = x @ np.array([[0.1], [-0.2], [0.05]]) + 300
    cfg = mlp.MlpConfig((3, 16, 1), epochs=100, batch_size=20, lr_init=1e-2, standardize=True, dtype="float32", seed=0)
    model = mlp.train(cfg, x, y)
    assert model.weights[0].dtype == np.float32
    pred = model(x)
    assert np.sqrt(np.mean((pred - y) ** 2)) < 0.1 * y.std()


def test_default_architecture_and_schedule():
    cfg = mlp.MlpConfig((7, 500, 500, 500, 500, 100))
    assert (cfg.epochs, cfg.batch_size, cfg.lr_init, cfg.plateau_patience, cfg.validation_fraction) == (500, 500, 1e-3, 50, 0.2)
    w, _ = mlp.init_params(cfg.layer_dims, np.random.default_rng(0))
    assert [a.shape for a in w] == [(7, 500), (500, 500), (500, 500), (500, 500), (500, 100)]
    assert np.abs(w[1]).max() <= np.sqrt(6 / 500)


def test_config_and_shape_validation():
    with pytest.raises(ValueError):
        mlp.MlpConfig((3,))
    with pytest.raises(ValueError):
        mlp.MlpConfig((3, 1), lr_init=0)
    with pytest.raises(ValueError):
        mlp.MlpConfig((3, 1), dtype="float16")
    with pytest.raises(ValueError):
        mlp.train(mlp.MlpConfig((3, 1)), np.zeros((5, 2)), np.zeros((5, 1)))
    model = mlp.MlpModel([np.zeros((3, 1))], [np.zeros(1)])
    with pytest.raises(ValueError):
        model(np.zeros(4))
