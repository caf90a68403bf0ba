"""The RFF extractor network: a compact residual CNN over feature matrices.

Geometry (full scale): 7x7x32/2 stem, two identity-skip blocks at 32
channels, two blocks at 64 channels (the first strided with a 1x1
projection skip), global average pooling, a dense layer to 512, and L2
normalization. ``width_scale`` divides the channel counts and embedding
dimension for CPU-sized runs without touching the topology.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError
from .layers import Conv2d, Dense, GlobalAvgPool, L2Normalize, ReLU, ResidualBlock


@dataclass(frozen=True)
class EmbedderConfig:
    input_shape: tuple = (256, 62)
    stem_filters: int = 32
    stage2_filters: int = 64
    embedding_dim: int = 512
    margin_alpha: float = 0.1
    width_scale: float = 1.0

    def __post_init__(self):
        if self.margin_alpha <= 0:
            raise ConfigError("margin_alpha must be > 0")
        if self.width_scale < 1.0:
            raise ConfigError("width_scale must be >= 1")
        if self.eff_embedding_dim < 8:
            raise ConfigError("embedding_dim/width_scale must stay >= 8")

    def _scaled(self, n: int) -> int:
        return max(1, int(round(n / self.width_scale)))

    @property
    def eff_stem_filters(self) -> int:
        return self._scaled(self.stem_filters)

    @property
    def eff_stage2_filters(self) -> int:
        return self._scaled(self.stage2_filters)

    @property
    def eff_embedding_dim(self) -> int:
        return max(8, int(round(self.embedding_dim / self.width_scale)))

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "stem_filters": self.stem_filters,
            "stage2_filters": self.stage2_filters,
            "embedding_dim": self.embedding_dim,
            "margin_alpha": self.margin_alpha,
            "width_scale": self.width_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        return cls(
            input_shape=tuple(d["input_shape"]),
            stem_filters=d["stem_filters"],
            stage2_filters=d["stage2_filters"],
            embedding_dim=d["embedding_dim"],
            margin_alpha=d["margin_alpha"],
            width_scale=d["width_scale"],
        )


class LayerStack:
    """A forward/backward pipeline over an ordered list of layers."""

    def __init__(self, layers):
        self.layers = layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for layer in self.layers:
            for name, arr in layer.params():
                out[name] = arr
        return out

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for layer in self.layers:
            for name, arr in layer.grads():
                out[name] = arr
        return out

    def set_param(self, name, value):
        for layer in self.layers:
            for pname, arr in layer.params():
                if pname == name:
                    arr[...] = value
                    return
        raise KeyError(name)


class RffExtractor(LayerStack):
    """Maps a (batch, rows, cols) feature stack to unit-norm embeddings."""

    def __init__(self, config: EmbedderConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c1 = config.eff_stem_filters
        c2 = config.eff_stage2_filters
        dim = config.eff_embedding_dim
        layers = [
            Conv2d("stem", 7, 7, 1, c1, stride=2, rng=rng, dtype=dtype),
            ReLU("stem_relu"),
            ResidualBlock("block1a", c1, c1, stride=1, rng=rng, dtype=dtype),
            ResidualBlock("block1b", c1, c1, stride=1, rng=rng, dtype=dtype),
            ResidualBlock("block2a", c1, c2, stride=2, rng=rng, dtype=dtype),
            ResidualBlock("block2b", c2, c2, stride=1, rng=rng, dtype=dtype),
            GlobalAvgPool(),
            Dense("embed", c2, dim, rng=rng, dtype=dtype),
            L2Normalize(),
        ]
        super().__init__(layers)

    @property
    def embedding_dim(self) -> int:
        return self.config.eff_embedding_dim

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None, :, :]
        if x.ndim == 3:
            x = x[:, :, :, None]
        if x.ndim != 4 or x.shape[3] != 1:
            raise ContractError(f"expected (batch, rows, cols) input, got shape {x.shape}")
        if x.shape[1:3] != tuple(self.config.input_shape):
            raise ContractError(
                f"input spatial shape {x.shape[1:3]} != configured {self.config.input_shape}"
            )
        return x

    def forward(self, x):
        return super().forward(self._check_input(x))

    def embed(self, x) -> np.ndarray:
        """Forward pass for one feature matrix; returns a unit-norm vector."""
        return self.forward(x)[0]
