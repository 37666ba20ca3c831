"""Analytic backward passes against central finite differences, over five seeds."""
import numpy as np
import pytest

from serrobust.nn import layers as L
from serrobust.nn.model import Model, ModelConfig

from gradcheck import SEEDS, TOL, numeric_grad, rel_error


def _gru_params(rng, D, H):
    return (rng.normal(0, 0.5, (D, 3 * H)), rng.normal(0, 0.5, (H, 3 * H)), rng.normal(0, 0.1, 3 * H))


@pytest.mark.parametrize("seed", SEEDS)
def test_gru_cell(seed):
    rng = np.random.default_rng(seed)
    D, H, B = 4, 3, 2
    x, h = rng.normal(size=(B, D)), rng.normal(size=(B, H))
    W, U, b = _gru_params(rng, D, H)
    R = rng.normal(size=(B, H))

    def f():
        return float((L.gru_cell_forward(x, h, W, U, b)[0] * R).sum())
    _, cache = L.gru_cell_forward(x, h, W, U, b)
    dx, dh, dW, dU, db = L.gru_cell_backward(R, cache, W, U)
    for analytic, var in ((dx, x), (dh, h), (dW, W), (dU, U), (db, b)):
        assert rel_error(analytic, numeric_grad(f, var)) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("reverse", [False, True])
def test_gru_layer_masked(seed, reverse):
    rng = np.random.default_rng(seed)
    B, T, D, H = 3, 5, 3, 4
    X = rng.normal(size=(B, T, D))
    mask = L.lengths_to_mask([5, 3, 1], T)
    W, U, b = _gru_params(rng, D, H)
    R = rng.normal(size=(B, T, H))

    def f():
        return float((L.gru_layer_forward(X, mask, W, U, b, reverse)[0] * R).sum())
    _, cache = L.gru_layer_forward(X, mask, W, U, b, reverse)
    dX, dW, dU, db = L.gru_layer_backward(R, cache, W, U)
    for analytic, var in ((dW, W), (dU, U), (db, b)):
        assert rel_error(analytic, numeric_grad(f, var)) < TOL
    assert rel_error(dX * mask[..., None], numeric_grad(f, X) * mask[..., None]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2, 6, 3))
    W = rng.normal(size=(3, 3, 4))
    b = rng.normal(size=4)
    R = rng.normal(size=(2, 6, 4))

    def f():
        return float((L.conv1d_forward(X, W, b)[0] * R).sum())
    _, cache = L.conv1d_forward(X, W, b)
    dX, dW, db = L.conv1d_backward(R, cache, W)
    for analytic, var in ((dX, X), (dW, W), (db, b)):
        assert rel_error(analytic, numeric_grad(f, var)) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("train", [True, False])
def test_conv_bn_relu_stack(seed, train):
    rng = np.random.default_rng(seed)
    B, T, C, K = 3, 6, 3, 3
    X = rng.normal(size=(B, T, C))
    mask = L.lengths_to_mask([6, 4, 2], T)
    W = rng.normal(size=(K, C, 4))
    b = rng.normal(size=4)
    gamma, beta = rng.uniform(0.5, 1.5, 4), rng.normal(size=4)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2, 4)
    R = rng.normal(size=(B, T, 4))

    def fwd():
        y, cc = L.conv1d_forward(X, W, b)
        y, bc, _, _ = L.batchnorm_forward(y, mask, gamma, beta, rm, rv, train)
        out, rc = L.relu_forward(y)
        return out, (cc, bc, rc)

    def f():
        return float((fwd()[0] * R).sum())
    _, (cc, bc, rc) = fwd()
    dy = L.relu_backward(R, rc)
    dy, dgamma, dbeta = L.batchnorm_backward(dy, bc, gamma)
    dX, dW, db = L.conv1d_backward(dy, cc, W)
    for analytic, var in ((dgamma, gamma), (dbeta, beta), (dW, W), (db, b)):
        assert rel_error(analytic, numeric_grad(f, var)) < TOL
    m = mask[..., None]
    assert rel_error(dX * m, numeric_grad(f, X) * m) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_pools(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(3, 5, 4))
    lengths = np.array([5, 2, 3])
    R = rng.normal(size=(3, 4))
    for fwd, bwd in ((L.temporal_mean_pool_forward, L.temporal_mean_pool_backward),
                     (L.temporal_max_pool_forward, L.temporal_max_pool_backward)):
        def f():
            return float((fwd(X, lengths)[0] * R).sum())
        _, cache = fwd(X, lengths)
        assert rel_error(bwd(R, cache), numeric_grad(f, X)) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_heads_and_losses(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(4, 5))
    # categorical head: dense + softmax cross-entropy
    W, b = rng.normal(size=(5, 4)), rng.normal(size=4)
    t = rng.integers(0, 4, 4)

    def f_cat():
        return L.softmax_cross_entropy(L.dense_forward(X, W, b)[0], t)[0]
    logits, cache = L.dense_forward(X, W, b)
    _, dl = L.softmax_cross_entropy(logits, t)
    dX, dW, db = L.dense_backward(dl, cache, W)
    for analytic, var in ((dX, X), (dW, W), (db, b)):
        assert rel_error(analytic, numeric_grad(f_cat, var)) < TOL
    # dimensional head with both losses; targets kept away from predictions for L1
    W2, b2 = rng.normal(size=(5, 2)), np.full(2, 3.0)
    y = rng.uniform(1, 5, (4, 2))
    for fn in (L.absolute_error, L.squared_error):
        def f_dim():
            return fn(L.dense_forward(X, W2, b2)[0], y)[0]
        pred, cache = L.dense_forward(X, W2, b2)
        assert np.min(np.abs(pred - y)) > 1e-3
        _, dp = fn(pred, y)
        dX, dW, db = L.dense_backward(dp, cache, W2)
        for analytic, var in ((dX, X), (dW, W2), (db, b2)):
            assert rel_error(analytic, numeric_grad(f_dim, var)) < TOL
    # probability-space cross-entropy
    p = L.softmax(rng.normal(size=(4, 4)))
    _, dp = L.cross_entropy(p, t)
    assert rel_error(dp, numeric_grad(lambda: L.cross_entropy(p, t)[0], p)) < TOL


def _model_check(cfg, head_targets, seed, train=True):
    rng = np.random.default_rng(seed)
    model = Model(cfg)
    for k in model.params:
        if not k.endswith("running_var"):
            model.params[k] = model.params[k] + rng.normal(0, 0.1, model.params[k].shape)
    X = rng.normal(size=(3, 6, cfg.input_dim))
    lengths = np.array([6, 4, 2])
    snapshot = {k: v.copy() for k, v in model.params.items() if "running" in k}

    def f():
        model.params.update({k: v.copy() for k, v in snapshot.items()})
        return model.loss_and_grads(X, lengths, head_targets, train=train)[0]
    _, grads = model.loss_and_grads(X, lengths, head_targets, train=train)
    model.params.update({k: v.copy() for k, v in snapshot.items()})
    for name in model.trainable:
        assert rel_error(grads[name], numeric_grad(f, model.params[name])) < TOL, name


@pytest.mark.parametrize("seed", SEEDS)
def test_bigru_stack_end_to_end(seed):
    cfg = ModelConfig(arch="rnn", input_dim=3, rnn_hidden=3, seed=seed)
    _model_check(cfg, np.array([0, 3, 1]), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_cnn_stack_end_to_end(seed):
    cfg = ModelConfig(arch="cnn", head="dimensional", dimensional_loss="l2", input_dim=3,
                      cnn_channels=(4, 3, 5), cnn_kernels=(3, 3, 1), seed=seed)
    _model_check(cfg, np.array([[1.5, 2.0], [4.0, 3.0], [2.5, 4.5]]), seed)


def test_input_gradient_zero_on_padding():
    cfg = ModelConfig(input_dim=3, rnn_hidden=4)
    m = Model(cfg)
    X = np.random.default_rng(0).normal(size=(2, 5, 3))
    m.loss_and_grads(X, np.array([5, 2]), np.array([1, 2]))
    assert np.all(m.input_grad[1, 2:] == 0)
