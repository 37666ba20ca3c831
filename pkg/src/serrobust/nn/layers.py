"""Forward/backward pairs for the layers of the two recognizers.

Sequences are batched as ``(B, T, D)`` arrays with a ``(B, T)`` float mask
(1 for real frames, 0 for padding). Every ``*_forward`` returns its output
and a cache; the matching ``*_backward`` takes the upstream gradient and
that cache and returns input and parameter gradients.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError

BN_EPS = 1e-5


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lengths_to_mask(lengths, t_max: int | None = None) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.int64)
    t_max = int(lengths.max()) if t_max is None else t_max
    return (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.float64)


# ---------------------------------------------------------------- GRU

def gru_cell_forward(x, h_prev, W, U, b):
    """One GRU step. Gate blocks in W, U, b are ordered [update, reset, candidate].

    z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
    c = tanh(x Wc + (r*h) Uc + bc), h' = (1 - z) * h + z * c.
    """
    H = h_prev.shape[-1]
    if W.shape != (x.shape[-1], 3 * H) or U.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise ShapeError(f"GRU parameter shapes W{W.shape} U{U.shape} b{b.shape} "
                         f"do not fit input {x.shape[-1]} and hidden {H}")
    a = x @ W + b
    g = h_prev @ U[:, :2 * H]
    z = sigmoid(a[..., :H] + g[..., :H])
    r = sigmoid(a[..., H:2 * H] + g[..., H:])
    rh = r * h_prev
    c = np.tanh(a[..., 2 * H:] + rh @ U[:, 2 * H:])
    h = h_prev + z * (c - h_prev)
    return h, (x, h_prev, z, r, rh, c)


def _gru_step_backward(dh, h_prev, z, r, rh, c, U, H):
    """Gradients of one step w.r.t. pre-activations, previous state and U."""
    dh_prev = dh * (1.0 - z)
    dz = dh * (c - h_prev)
    dgc = dh * z * (1.0 - c * c)
    dUc = rh.T @ dgc
    drh = dgc @ U[:, 2 * H:].T
    dh_prev += drh * r
    dgr = drh * h_prev * r * (1.0 - r)
    dgz = dz * z * (1.0 - z)
    dgzr = np.concatenate([dgz, dgr], axis=-1)
    dUzr = h_prev.T @ dgzr
    dh_prev += dgzr @ U[:, :2 * H].T
    return np.concatenate([dgzr, dgc], axis=-1), dh_prev, dUzr, dUc


def gru_cell_backward(dh, cache, W, U):
    x, h_prev, z, r, rh, c = cache
    H = h_prev.shape[-1]
    x2, h2 = np.atleast_2d(x), np.atleast_2d(h_prev)
    da, dh_prev, dUzr, dUc = _gru_step_backward(
        np.atleast_2d(dh), h2, np.atleast_2d(z), np.atleast_2d(r), np.atleast_2d(rh),
        np.atleast_2d(c), U, H)
    dW = x2.T @ da
    dU = np.concatenate([dUzr, dUc], axis=1)
    db = da.sum(axis=0)
    dx = da @ W.T
    return dx.reshape(x.shape), dh_prev.reshape(h_prev.shape), dW, dU, db


def gru_layer_forward(X, mask, W, U, b, reverse: bool = False):
    """Run a GRU over ``(B, T, D)`` input; padded frames leave the state untouched.

    Outputs at padded frames are zero. With ``reverse`` the sequence is read
    from the last frame backwards, so each sequence starts at its own final
    real frame.
    """
    B, T, D = X.shape
    H = U.shape[0]
    if W.shape != (D, 3 * H) or U.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise ShapeError(f"GRU parameter shapes W{W.shape} U{U.shape} b{b.shape} "
                         f"do not fit input {D} and hidden {H}")
    A = X @ W + b
    Uzr, Uc = U[:, :2 * H], U[:, 2 * H:]
    out = np.zeros((B, T, H))
    hp = np.zeros((B, T, H))
    Z = np.zeros((B, T, H))
    R = np.zeros((B, T, H))
    RH = np.zeros((B, T, H))
    C = np.zeros((B, T, H))
    h = np.zeros((B, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        a = A[:, t]
        g = h @ Uzr
        z = sigmoid(a[:, :H] + g[:, :H])
        r = sigmoid(a[:, H:2 * H] + g[:, H:])
        rh = r * h
        c = np.tanh(a[:, 2 * H:] + rh @ Uc)
        m = mask[:, t:t + 1]
        hp[:, t] = h
        Z[:, t] = z
        R[:, t] = r
        RH[:, t] = rh
        C[:, t] = c
        h = h + m * z * (c - h)
        out[:, t] = m * h
    return out, (X, mask, hp, Z, R, RH, C, reverse)


def gru_layer_backward(dout, cache, W, U):
    X, mask, hp, Z, R, RH, C, reverse = cache
    B, T, D = X.shape
    H = U.shape[0]
    dA = np.zeros((B, T, 3 * H))
    dUzr = np.zeros((H, 2 * H))
    dUc = np.zeros((H, H))
    dh = np.zeros((B, H))
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        m = mask[:, t:t + 1]
        dh = dh + dout[:, t] * m
        dstep = dh * m  # gradient flowing into the masked update
        da, dh_prev, dzr, dc = _gru_step_backward(dstep, hp[:, t], Z[:, t], R[:, t],
                                                  RH[:, t], C[:, t], U, H)
        dA[:, t] = da
        dUzr += dzr
        dUc += dc
        dh = dh * (1.0 - m) + dh_prev
    dW = X.reshape(-1, D).T @ dA.reshape(-1, 3 * H)
    db = dA.sum(axis=(0, 1))
    dX = dA @ W.T
    return dX, dW, np.concatenate([dUzr, dUc], axis=1), db


# ---------------------------------------------------------------- conv / BN / ReLU

def conv1d_forward(X, W, b):
    """'Same'-padded stride-1 convolution; W has shape (K, C_in, C_out), K odd."""
    B, T, Cin = X.shape
    K, Wcin, Cout = W.shape
    if Wcin != Cin or K % 2 != 1 or b.shape != (Cout,):
        raise ShapeError(f"conv weight {W.shape} / bias {b.shape} incompatible with input channels {Cin}")
    pad = K // 2
    Xp = np.pad(X, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([Xp[:, k:k + T, :] for k in range(K)], axis=-1)
    Y = cols @ W.reshape(K * Cin, Cout) + b
    return Y, (cols, X.shape, K)


def conv1d_backward(dY, cache, W):
    cols, (B, T, Cin), K = cache
    Cout = W.shape[2]
    pad = K // 2
    dW = (cols.reshape(-1, K * Cin).T @ dY.reshape(-1, Cout)).reshape(W.shape)
    db = dY.sum(axis=(0, 1))
    dcols = dY @ W.reshape(K * Cin, Cout).T
    dXp = np.zeros((B, T + 2 * pad, Cin))
    for k in range(K):
        dXp[:, k:k + T, :] += dcols[..., k * Cin:(k + 1) * Cin]
    return dXp[:, pad:pad + T, :], dW, db


def batchnorm_forward(X, mask, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.1, eps: float = BN_EPS):
    """Per-channel batch norm over real frames only.

    Returns ``(Y, cache, new_running_mean, new_running_var)``; in infer mode
    the running statistics are returned unchanged.
    """
    m = mask[..., None]
    if train:
        n = float(mask.sum())
        mu = (X * m).sum(axis=(0, 1)) / n
        var = (((X - mu) ** 2) * m).sum(axis=(0, 1)) / n
        new_mean = (1 - momentum) * running_mean + momentum * mu
        new_var = (1 - momentum) * running_var + momentum * var
    else:
        n = None
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (X - mu) * inv
    Y = (gamma * xhat + beta) * m
    return Y, (xhat, inv, m, n, train), new_mean, new_var


def batchnorm_backward(dY, cache, gamma):
    xhat, inv, m, n, train = cache
    dYm = dY * m
    dgamma = (dYm * xhat).sum(axis=(0, 1))
    dbeta = dYm.sum(axis=(0, 1))
    dxhat = dYm * gamma
    if train:
        s1 = dxhat.sum(axis=(0, 1))
        s2 = (dxhat * xhat).sum(axis=(0, 1))
        dX = (inv / n) * (n * dxhat - s1 - xhat * s2) * m
    else:
        dX = dxhat * inv
    return dX, dgamma, dbeta


def relu_forward(X):
    return np.maximum(X, 0.0), X > 0


def relu_backward(dY, cache):
    return dY * cache


# ---------------------------------------------------------------- pooling

def temporal_mean_pool_forward(X, lengths):
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ShapeError("mean pooling needs at least one real frame per sequence")
    mask = lengths_to_mask(lengths, X.shape[1])
    pooled = (X * mask[..., None]).sum(axis=1) / lengths[:, None]
    return pooled, (mask, lengths)


def temporal_mean_pool_backward(dP, cache):
    mask, lengths = cache
    return mask[..., None] * (dP / lengths[:, None])[:, None, :]


def temporal_max_pool_forward(X, lengths):
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ShapeError("max pooling needs at least one real frame per sequence")
    mask = lengths_to_mask(lengths, X.shape[1])
    masked = np.where(mask[..., None] > 0, X, -np.inf)
    idx = np.argmax(masked, axis=1)  # first occurrence on ties
    pooled = np.take_along_axis(masked, idx[:, None, :], axis=1)[:, 0, :]
    return pooled, (idx, X.shape)


def temporal_max_pool_backward(dP, cache):
    idx, shape = cache
    dX = np.zeros(shape)
    np.put_along_axis(dX, idx[:, None, :], dP[:, None, :], axis=1)
    return dX


# ---------------------------------------------------------------- heads / losses

def dense_forward(X, W, b):
    if W.shape[0] != X.shape[-1] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense weight {W.shape} incompatible with input {X.shape}")
    return X @ W + b, X


def dense_backward(dY, X, W):
    return dY @ W.T, X.T @ dY, dY.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_class_targets(targets, n_classes):
    t = np.asarray(targets)
    if t.dtype.kind not in "iu" or np.any(t < 0) or np.any(t >= n_classes):
        raise ValueError(f"class targets must be integers in [0, {n_classes - 1}]")
    return t.astype(np.int64)


def _check_dim_targets(targets, width):
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim != 2 or t.shape[1] != width:
        raise ValueError(f"dimensional targets must have shape (n, {width}), got {t.shape}")
    if not np.all(np.isfinite(t)) or np.any(t < 1.0) or np.any(t > 5.0):
        raise ValueError("dimensional targets must lie in [1, 5]")
    return t


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    t = _check_class_targets(targets, logits.shape[-1])
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), t].mean())
    g = np.exp(logp)
    g[np.arange(n), t] -= 1.0
    return loss, g / n


def cross_entropy(probs, targets):
    """Mean cross-entropy of probability rows; gradient w.r.t. the probabilities."""
    t = _check_class_targets(targets, probs.shape[-1])
    n = probs.shape[0]
    p = probs[np.arange(n), t]
    loss = -float(np.mean(np.log(np.maximum(p, 1e-300))))
    g = np.zeros_like(probs)
    g[np.arange(n), t] = -1.0 / (n * np.maximum(p, 1e-300))
    return loss, g


def absolute_error(pred, targets):
    """Per-sample sum over dimensions of |error|, averaged over the batch."""
    t = _check_dim_targets(targets, pred.shape[-1])
    d = pred - t
    n = pred.shape[0]
    return float(np.abs(d).sum(axis=1).mean()), np.sign(d) / n


def squared_error(pred, targets):
    t = _check_dim_targets(targets, pred.shape[-1])
    d = pred - t
    n = pred.shape[0]
    return float((d ** 2).sum(axis=1).mean()), 2.0 * d / n


def loss(prediction, target, head: str, dimensional_loss: str = "l1"):
    """Loss of a head's output and its gradient w.r.t. that output.

    ``prediction`` holds probabilities for the categorical head and
    (arousal, valence) values for the dimensional head.
    """
    prediction = np.atleast_2d(np.asarray(prediction, dtype=np.float64))
    if head == "categorical":
        return cross_entropy(prediction, np.atleast_1d(target))
    if head == "dimensional":
        fn = absolute_error if dimensional_loss == "l1" else squared_error
        return fn(prediction, np.atleast_2d(target))
    raise ValueError(f"unknown head {head!r}")
