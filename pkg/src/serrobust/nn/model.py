"""The two recognizer architectures.

* ``rnn``: two bi-directional GRU layers, temporal mean pooling, dense head.
* ``cnn``: three conv1d -> batch norm -> ReLU blocks, temporal max pooling,
  dense head.

The head is either a 4-way softmax (categorical) or two linear outputs for
arousal and valence (dimensional).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ShapeError
from . import layers as L

HEAD_SIZES = {"categorical": 4, "dimensional": 2}
DIM_BIAS_INIT = 3.0  # centre of the 1-5 rating scale


@dataclass
class ModelConfig:
    arch: str = "rnn"
    head: str = "categorical"
    input_dim: int = 32
    rnn_layers: int = 2
    rnn_hidden: int = 128
    cnn_channels: tuple = (64, 128, 256)
    cnn_kernels: tuple = (5, 5, 5)
    bn_momentum: float = 0.1
    dimensional_loss: str = "l1"
    seed: int = 0

    def __post_init__(self):
        self.cnn_channels = tuple(int(c) for c in self.cnn_channels)
        self.cnn_kernels = tuple(int(k) for k in self.cnn_kernels)

    @property
    def n_outputs(self) -> int:
        return HEAD_SIZES[self.head]

    def validate(self) -> "ModelConfig":
        if self.arch not in ("rnn", "cnn"):
            raise ConfigError(f"arch must be 'rnn' or 'cnn', got {self.arch!r}")
        if self.head not in HEAD_SIZES:
            raise ConfigError(f"head must be one of {sorted(HEAD_SIZES)}, got {self.head!r}")
        if self.rnn_layers != 2:
            raise ConfigError("the recurrent model has exactly 2 bi-GRU layers")
        if len(self.cnn_channels) != 3 or len(self.cnn_kernels) != 3:
            raise ConfigError("the convolutional model has exactly 3 blocks")
        if any(k % 2 == 0 or k < 1 for k in self.cnn_kernels):
            raise ConfigError("convolution kernel widths must be odd")
        if self.rnn_hidden < 1 or self.input_dim < 1 or min(self.cnn_channels) < 1:
            raise ConfigError("layer sizes must be positive")
        if self.dimensional_loss not in ("l1", "l2"):
            raise ConfigError("dimensional_loss must be 'l1' or 'l2'")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        d["cnn_kernels"] = list(self.cnn_kernels)
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**dict(d))


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_params(cfg: ModelConfig) -> dict:
    """Seeded initialization: orthogonal recurrences, fan-in uniform weights, zero biases."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    p = {}
    if cfg.arch == "rnn":
        H = cfg.rnn_hidden
        d_in = cfg.input_dim
        for layer in range(cfg.rnn_layers):
            for direction in ("fwd", "bwd"):
                pre = f"gru{layer}.{direction}"
                lim = 1.0 / np.sqrt(d_in)
                p[f"{pre}.W"] = rng.uniform(-lim, lim, (d_in, 3 * H))
                p[f"{pre}.U"] = np.concatenate([orthogonal(rng, H) for _ in range(3)], axis=1)
                p[f"{pre}.b"] = np.zeros(3 * H)
            d_in = 2 * H
        d_pool = 2 * H
    else:
        c_in = cfg.input_dim
        for i, (c_out, k) in enumerate(zip(cfg.cnn_channels, cfg.cnn_kernels)):
            lim = 1.0 / np.sqrt(k * c_in)
            p[f"conv{i}.W"] = rng.uniform(-lim, lim, (k, c_in, c_out))
            p[f"conv{i}.b"] = np.zeros(c_out)
            p[f"bn{i}.gamma"] = np.ones(c_out)
            p[f"bn{i}.beta"] = np.zeros(c_out)
            p[f"bn{i}.running_mean"] = np.zeros(c_out)
            p[f"bn{i}.running_var"] = np.ones(c_out)
            c_in = c_out
        d_pool = c_in
    lim = 1.0 / np.sqrt(d_pool)
    p["head.W"] = rng.uniform(-lim, lim, (d_pool, cfg.n_outputs))
    p["head.b"] = np.full(cfg.n_outputs, DIM_BIAS_INIT if cfg.head == "dimensional" else 0.0)
    return p


def is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


class Model:
    """Parameters plus forward/backward for one architecture and head.

    ``forward`` keeps the caches of its last call; ``backward`` consumes them.
    """

    def __init__(self, cfg: ModelConfig, params: dict | None = None):
        self.cfg = cfg.validate()
        self.params = init_params(cfg) if params is None else {k: np.array(v, dtype=np.float64)
                                                                for k, v in params.items()}
        self._check_shapes()
        self._cache = None

    def _check_shapes(self):
        ref = init_params(self.cfg)
        if set(ref) != set(self.params):
            raise ShapeError(f"parameter names do not match config: "
                             f"missing {sorted(set(ref) - set(self.params))}, "
                             f"unexpected {sorted(set(self.params) - set(ref))}")
        for k, v in ref.items():
            if self.params[k].shape != v.shape:
                raise ShapeError(f"parameter {k} has shape {self.params[k].shape}, expected {v.shape}")

    @property
    def trainable(self) -> list:
        return [k for k in self.params if not is_buffer(k)]

    # ---------------------------------------------------------------- forward

    def encode(self, X, lengths, train: bool = False):
        """Pooled sequence representation, before the head."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[2] != self.cfg.input_dim:
            raise ShapeError(f"expected input (B, T, {self.cfg.input_dim}), got {X.shape}")
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (X.shape[0],) or np.any(lengths < 1) or np.any(lengths > X.shape[1]):
            raise ShapeError("lengths must give 1..T real frames per sequence")
        mask = L.lengths_to_mask(lengths, X.shape[1])
        X = X * mask[..., None]
        caches = []
        p = self.params
        if self.cfg.arch == "rnn":
            h = X
            for layer in range(self.cfg.rnn_layers):
                pre = f"gru{layer}"
                of, cf = L.gru_layer_forward(h, mask, p[f"{pre}.fwd.W"], p[f"{pre}.fwd.U"], p[f"{pre}.fwd.b"])
                ob, cb = L.gru_layer_forward(h, mask, p[f"{pre}.bwd.W"], p[f"{pre}.bwd.U"], p[f"{pre}.bwd.b"],
                                             reverse=True)
                caches.append((cf, cb))
                h = np.concatenate([of, ob], axis=-1)
            pooled, pc = L.temporal_mean_pool_forward(h, lengths)
        else:
            h = X
            for i in range(len(self.cfg.cnn_channels)):
                y, cc = L.conv1d_forward(h, p[f"conv{i}.W"], p[f"conv{i}.b"])
                y, bc, rm, rv = L.batchnorm_forward(
                    y, mask, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], p[f"bn{i}.running_mean"],
                    p[f"bn{i}.running_var"], train, self.cfg.bn_momentum)
                if train:
                    p[f"bn{i}.running_mean"], p[f"bn{i}.running_var"] = rm, rv
                y, rc = L.relu_forward(y)
                h = y * mask[..., None]
                caches.append((cc, bc, rc))
            pooled, pc = L.temporal_max_pool_forward(h, lengths)
        self._cache = {"mask": mask, "layers": caches, "pool": pc}
        return pooled

    def forward(self, X, lengths, train: bool = False):
        """Head pre-activations: logits (categorical) or (arousal, valence)."""
        pooled = self.encode(X, lengths, train)
        out, hc = L.dense_forward(pooled, self.params["head.W"], self.params["head.b"])
        self._cache["head"] = hc
        return out

    def predict(self, X, lengths):
        out = self.forward(X, lengths, train=False)
        self._cache = None
        return L.softmax(out) if self.cfg.head == "categorical" else out

    # ---------------------------------------------------------------- backward

    def backward(self, dout) -> dict:
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward")
        c = self._cache
        p = self.params
        g = {}
        dpool, g["head.W"], g["head.b"] = L.dense_backward(dout, c["head"], p["head.W"])
        mask = c["mask"]
        if self.cfg.arch == "rnn":
            dh = L.temporal_mean_pool_backward(dpool, c["pool"])
            for layer in reversed(range(self.cfg.rnn_layers)):
                pre = f"gru{layer}"
                cf, cb = c["layers"][layer]
                H = self.cfg.rnn_hidden
                dxf, g[f"{pre}.fwd.W"], g[f"{pre}.fwd.U"], g[f"{pre}.fwd.b"] = L.gru_layer_backward(
                    dh[..., :H], cf, p[f"{pre}.fwd.W"], p[f"{pre}.fwd.U"])
                dxb, g[f"{pre}.bwd.W"], g[f"{pre}.bwd.U"], g[f"{pre}.bwd.b"] = L.gru_layer_backward(
                    dh[..., H:], cb, p[f"{pre}.bwd.W"], p[f"{pre}.bwd.U"])
                dh = dxf + dxb
        else:
            dh = L.temporal_max_pool_backward(dpool, c["pool"])
            for i in reversed(range(len(self.cfg.cnn_channels))):
                cc, bc, rc = c["layers"][i]
                dy = L.relu_backward(dh * mask[..., None], rc)
                dy, g[f"bn{i}.gamma"], g[f"bn{i}.beta"] = L.batchnorm_backward(dy, bc, p[f"bn{i}.gamma"])
                dh, g[f"conv{i}.W"], g[f"conv{i}.b"] = L.conv1d_backward(dy, cc, p[f"conv{i}.W"])
        self._cache = None
        self.input_grad = dh * mask[..., None]
        return g

    def loss_and_grads(self, X, lengths, targets, train: bool = True):
        out = self.forward(X, lengths, train=train)
        if self.cfg.head == "categorical":
            value, dout = L.softmax_cross_entropy(out, targets)
        else:
            fn = L.absolute_error if self.cfg.dimensional_loss == "l1" else L.squared_error
            value, dout = fn(out, targets)
        return value, self.backward(dout)
