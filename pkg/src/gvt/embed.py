"""Convolutional token embedding: two 5x5 convolutions mapping an image to a token grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, conv2d, relu

KERNEL = 5


@dataclass(frozen=True)
class EmbedConfig:
    """Two-layer embedding. ``groups`` applies to the second (hidden -> out) convolution;
    the first convolution sees all image channels."""

    in_channels: int
    hidden_channels: int
    out_channels: int
    groups: int = 1
    strides: tuple[int, int] = (2, 2)
    kernel: int = KERNEL

    def __post_init__(self):
        for name in ("in_channels", "hidden_channels", "out_channels", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.kernel != KERNEL:
            raise ConfigError(f"kernel is fixed at {KERNEL}")
        if len(self.strides) != 2 or min(self.strides) < 1:
            raise ConfigError(f"strides must be two positive integers, got {self.strides}")
        if self.hidden_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide hidden_channels={self.hidden_channels} "
                f"and out_channels={self.out_channels}")

    @property
    def total_stride(self) -> int:
        return self.strides[0] * self.strides[1]

    def grid_shape(self, height: int, width: int) -> tuple[int, int]:
        s = self.total_stride
        if height % s or width % s:
            raise ConfigError(f"image {height}x{width} not divisible by combined stride {s}")
        return height // s, width // s


@dataclass
class EmbedParams:
    conv1_weight: Tensor
    conv1_bias: Tensor
    conv2_weight: Tensor
    conv2_bias: Tensor

    def named(self) -> dict[str, Tensor]:
        return {
            "embed.conv1.weight": self.conv1_weight,
            "embed.conv1.bias": self.conv1_bias,
            "embed.conv2.weight": self.conv2_weight,
            "embed.conv2.bias": self.conv2_bias,
        }


def _conv_init(rng: np.random.Generator, cout: int, cin_per_group: int, dtype) -> Tensor:
    fan_in = cin_per_group * KERNEL * KERNEL
    fan_out = cout * KERNEL * KERNEL
    a = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-a, a, size=(cout, cin_per_group, KERNEL, KERNEL)).astype(dtype)
    return Tensor(w, requires_grad=True)


def init_embed_params(cfg: EmbedConfig, rng: np.random.Generator, dtype=np.float32) -> EmbedParams:
    return EmbedParams(
        conv1_weight=_conv_init(rng, cfg.hidden_channels, cfg.in_channels, dtype),
        conv1_bias=Tensor(np.zeros(cfg.hidden_channels, dtype=dtype), requires_grad=True),
        conv2_weight=_conv_init(rng, cfg.out_channels, cfg.hidden_channels // cfg.groups, dtype),
        conv2_bias=Tensor(np.zeros(cfg.out_channels, dtype=dtype), requires_grad=True),
    )


def conv_token_embed(image: Tensor, cfg: EmbedConfig, params: EmbedParams) -> Tensor:
    """Map (c, H, W) or (B, c, H, W) images to (n, d) or (B, n, d) tokens.

    Tokens are the output feature map flattened row-major over its spatial grid.
    """
    single = image.ndim == 3
    x = image.reshape((1,) + image.shape) if single else image
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ConfigError(f"expected images with {cfg.in_channels} channels, got shape {image.shape}")
    cfg.grid_shape(x.shape[2], x.shape[3])
    pad = cfg.kernel // 2
    h = relu(conv2d(x, params.conv1_weight, params.conv1_bias, stride=cfg.strides[0], padding=pad))
    h = conv2d(h, params.conv2_weight, params.conv2_bias, stride=cfg.strides[1], padding=pad,
               groups=cfg.groups)
    bsz, d, gh, gw = h.shape
    tokens = h.reshape(bsz, d, gh * gw).transpose(0, 2, 1)
    return tokens.reshape(gh * gw, d) if single else tokens
