"""The embedding network h(x): an MLP for vectors or a conv stack for grids.

Weights use fan-in scaled uniform init, U(-a, a) with ``a = sqrt(6 / fan_in)``
(``INIT_GAIN = 6``); biases start at zero.
"""
from dataclasses import dataclass, field

import numpy as np

from semiproto.errors import ConfigurationError
from semiproto.numerics import Tensor, affine, conv2d, maxpool2, relu, reshape, tanh

INIT_GAIN = 6.0

_ACTIVATIONS = {"relu": relu, "tanh": tanh}


@dataclass
class EmbeddingConfig:
    kind: str = "mlp"
    input_shape: tuple = (32,)
    hidden: tuple = (64, 64)
    embed_dim: int = 16
    nonlinearity: str = "relu"

    def __post_init__(self):
        self.input_shape = tuple(int(n) for n in self.input_shape)
        self.hidden = tuple(int(n) for n in self.hidden)
        if self.kind not in ("mlp", "conv"):
            raise ConfigurationError(f"unknown embedding kind {self.kind!r}", key="embedding.kind")
        if self.nonlinearity not in _ACTIVATIONS:
            raise ConfigurationError(
                f"unknown nonlinearity {self.nonlinearity!r}", key="embedding.nonlinearity"
            )
        if any(n < 1 for n in self.hidden):
            raise ConfigurationError("hidden sizes must be positive", key="embedding.hidden")
        if self.kind == "conv":
            if len(self.input_shape) not in (2, 3):
                raise ConfigurationError(
                    "conv embedding needs a 2-D grid input_shape (H, W) or (C, H, W)",
                    key="embedding.input_shape",
                )
            if self.embed_dim is None:
                self.embed_dim = self.conv_output_dim()
            elif self.embed_dim != self.conv_output_dim():
                raise ConfigurationError(
                    f"conv embed_dim must be {self.conv_output_dim()} for this input shape",
                    key="embedding.embed_dim",
                )
        if self.embed_dim is None or self.embed_dim < 1:
            raise ConfigurationError("embed_dim must be >= 1", key="embedding.embed_dim")

    @property
    def grid_shape(self):
        return self.input_shape if len(self.input_shape) == 3 else (1, *self.input_shape)

    def conv_output_dim(self):
        _, h, w = self.grid_shape
        for _ in self.hidden:
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ConfigurationError("too many conv blocks for the input size", key="embedding.hidden")
        return self.hidden[-1] * h * w if self.hidden else int(np.prod(self.grid_shape))

    @property
    def input_size(self):
        return int(np.prod(self.input_shape))


@dataclass
class EmbeddingParams:
    config: EmbeddingConfig
    tensors: dict = field(default_factory=dict)
    init_seed: int = 0

    def parameters(self):
        return list(self.tensors.values())

    def count(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self):
        return EmbeddingParams(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.tensors.items()},
            self.init_seed,
        )


def fan_in_uniform(rng, fan_in, shape):
    bound = np.sqrt(INIT_GAIN / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_embedding(config, seed):
    rng = np.random.default_rng(seed)
    tensors = {}

    def put(name, value):
        tensors[name] = Tensor(value, requires_grad=True, name=name)

    if config.kind == "mlp":
        widths = [config.input_size, *config.hidden, config.embed_dim]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            put(f"embed.layer{i}.weight", fan_in_uniform(rng, fan_in, (fan_in, fan_out)))
            put(f"embed.layer{i}.bias", np.zeros(fan_out))
    else:
        channels = config.grid_shape[0]
        for i, out_ch in enumerate(config.hidden):
            fan_in = channels * 9
            put(f"embed.conv{i}.weight", fan_in_uniform(rng, fan_in, (out_ch, channels, 3, 3)))
            put(f"embed.conv{i}.bias", np.zeros((1, out_ch, 1, 1)))
            channels = out_ch
    return EmbeddingParams(config, tensors, seed)


def embed(params, batch):
    """Map a batch ``[B x input]`` to ``[B x embed_dim]``, row by row."""
    cfg = params.config
    batch = batch if isinstance(batch, Tensor) else Tensor(batch)
    b = batch.shape[0] if batch.ndim else 0
    if batch.ndim < 2 or int(np.prod(batch.shape[1:])) != cfg.input_size:
        raise ConfigurationError(
            f"embed: batch of shape {batch.shape} does not match input_shape {cfg.input_shape}"
        )
    if b == 0:
        return Tensor(np.zeros((0, cfg.embed_dim)))
    act = _ACTIVATIONS[cfg.nonlinearity]
    t = params.tensors
    if cfg.kind == "mlp":
        x = reshape(batch, (b, cfg.input_size)) if batch.shape != (b, cfg.input_size) else batch
        n_layers = len(cfg.hidden) + 1
        for i in range(n_layers):
            x = affine(x, t[f"embed.layer{i}.weight"], t[f"embed.layer{i}.bias"])
            if i < n_layers - 1:
                x = act(x)
        return x
    x = reshape(batch, (b, *cfg.grid_shape))
    for i in range(len(cfg.hidden)):
        x = conv2d(x, t[f"embed.conv{i}.weight"]) + t[f"embed.conv{i}.bias"]
        x = maxpool2(act(x))
    return reshape(x, (b, cfg.embed_dim))
