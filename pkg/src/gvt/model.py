"""Model assembly: embedding, stacked blocks with one pooling stage, classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .block import AblationFlags, AttentionState, BlockParams, block_forward, init_block_params, xavier
from .embed import EmbedConfig, EmbedParams, conv_token_embed, init_embed_params
from .errors import ConfigError
from .graph import GridSpec, build_grid_adjacency
from .pool import PoolParams, init_pool_params, pool_adjacency, pool_tokens, pooled_structure
from .tensor import Tensor, count_macs, no_grad


def default_pool_at(blocks: int) -> int:
    """Pool after block ceil(5a/7) (block 5 of 7), kept inside [1, a-1]."""
    return min(max(1, math.ceil(5 * blocks / 7)), blocks - 1)


def split_stride(total: int) -> tuple[int, int]:
    s1 = max(d for d in range(1, int(math.isqrt(total)) + 1) if total % d == 0)
    return s1, total // s1


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 4
    hidden: int = 64
    heads: int = 8
    tokens: int = 64
    pool_to: int = 16
    pool_at: int | None = None
    num_classes: int = 10
    image_size: tuple[int, int] = (32, 32)
    in_channels: int = 3
    embed_hidden: int | None = None
    groups: int = 2
    strides: tuple[int, int] | None = None
    flags: AblationFlags = field(default_factory=AblationFlags)
    seed: int = 0

    def __post_init__(self):
        for name in ("blocks", "hidden", "heads", "tokens", "num_classes", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.pooling:
            if not 0 < self.pool_to < self.tokens:
                raise ConfigError(f"pool_to={self.pool_to} must satisfy 0 < pool_to < tokens={self.tokens}")
            if not 1 <= self.resolved_pool_at < self.blocks:
                raise ConfigError(f"pool_at={self.resolved_pool_at} must satisfy 1 <= pool_at < blocks={self.blocks}")
        rows, cols = self.grid
        if rows * cols != self.tokens:
            raise ConfigError(
                f"tokens={self.tokens} does not match the {rows}x{cols} grid produced by "
                f"image_size={self.image_size} and strides={self.embed.strides}")

    @property
    def pooling(self) -> bool:
        return self.blocks > 1 and self.pool_to > 0

    @property
    def resolved_pool_at(self) -> int:
        return self.pool_at if self.pool_at is not None else default_pool_at(self.blocks)

    @property
    def embed(self) -> EmbedConfig:
        strides = self.strides
        if strides is None:
            side = math.isqrt(self.tokens)
            height = self.image_size[0]
            if side * side != self.tokens or height % side:
                raise ConfigError(
                    f"cannot derive strides for tokens={self.tokens} on image_size={self.image_size}; set strides")
            strides = split_stride(height // side)
        return EmbedConfig(self.in_channels, self.embed_hidden or self.hidden, self.hidden,
                           groups=self.groups, strides=tuple(strides))

    @property
    def grid(self) -> tuple[int, int]:
        return self.embed.grid_shape(*self.image_size)

    def with_flags(self, **kw) -> ModelConfig:
        return replace(self, flags=replace(self.flags, **kw))


class Model:
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        self.embed_cfg = cfg.embed
        self.embed = init_embed_params(self.embed_cfg, rng, dtype)
        self.grid_adjacency = build_grid_adjacency(GridSpec(*cfg.grid), dtype)
        self.blocks: list[BlockParams] = []
        n = cfg.tokens
        for i in range(cfg.blocks):
            if cfg.pooling and i == cfg.resolved_pool_at:
                n = cfg.pool_to
            self.blocks.append(init_block_params(n, cfg.hidden, cfg.heads, rng, dtype))
        self.pool = init_pool_params(cfg.pool_to, cfg.hidden, rng, dtype, n=cfg.tokens) if cfg.pooling else None
        self.classifier_weight = xavier(rng, cfg.hidden, cfg.num_classes, dtype)
        self.classifier_bias = Tensor(np.zeros(cfg.num_classes, dtype=dtype), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.embed.named())
        for i, b in enumerate(self.blocks):
            out.update(b.named(f"block{i}."))
        if self.pool is not None:
            out.update(self.pool.named())
        out["classifier.weight"] = self.classifier_weight
        out["classifier.bias"] = self.classifier_bias
        return out

    def clamp(self) -> None:
        for b in self.blocks:
            b.clamp()

    def forward_tokens(self, images: Tensor, return_states: bool = False):
        """Images -> final tokens (B, t, d); optionally per-block attention states."""
        x = conv_token_embed(images, self.embed_cfg, self.embed)
        structure = self.grid_adjacency
        flags = self.cfg.flags
        states: list[AttentionState] = []
        for i, params in enumerate(self.blocks):
            if self.pool is not None and i == self.cfg.resolved_pool_at:
                x, C = pool_tokens(x, self.pool.U)
                # the pooled prior is a fixed structure, like the grid it replaces
                prior = pool_adjacency(states[-1].A.detach(), C.detach())
                structure = pooled_structure(prior).detach()
            x, st = block_forward(x, structure, params, flags, return_state=True)
            states.append(st)
        return (x, states) if return_states else x

    def forward(self, images: Tensor) -> Tensor:
        x = self.forward_tokens(images)
        pooled = x.mean(axis=-2, keepdims=True)
        logits = pooled @ self.classifier_weight + self.classifier_bias
        return logits.reshape(logits.shape[:-2] + logits.shape[-1:])

    __call__ = forward

    def predict(self, images: Tensor) -> np.ndarray:
        with no_grad():
            return np.argmax(self.forward(images).data, axis=-1)


def build_model(cfg: ModelConfig, dtype=np.float32) -> Model:
    return Model(cfg, dtype)


def count_params(model) -> int:
    """Total scalar count over a Model, a name->Tensor mapping, or any iterable of tensors."""
    if isinstance(model, Model):
        tensors = model.named_parameters().values()
    elif isinstance(model, dict):
        tensors = model.values()
    else:
        tensors = model
    return int(sum(t.size for t in tensors))


def flop_estimate_gvt(n: int, d: int) -> int:
    """Analytic per-block cost 3nd^2 + 4n^2d + 2n^3."""
    return 3 * n * d * d + 4 * n * n * d + 2 * n ** 3


def flop_estimate_vit(n: int, d: int) -> int:
    """Analytic cost of a vanilla ViT block (attention plus MLP): 10nd^2 + 2n^2d."""
    return 10 * n * d * d + 2 * n * n * d


def measured_block_macs(n: int, d: int, h: int, flags: AblationFlags = AblationFlags(),
                        seed: int = 0) -> int:
    """Count multiply-accumulates actually issued by one block forward on random input."""
    rng = np.random.default_rng(seed)
    side = math.isqrt(n)
    grid = GridSpec(side, n // side) if side * (n // side) == n else GridSpec(1, n)
    params = init_block_params(n, d, h, rng)
    x = Tensor(rng.standard_normal((n, d)).astype(np.float32))
    with no_grad(), count_macs() as counter:
        block_forward(x, build_grid_adjacency(grid), params, flags)
    return counter[0]
