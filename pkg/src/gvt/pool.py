"""Second-order graph pooling from n tokens to t."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, amax, relu, tabs


@dataclass
class PoolParams:
    U: Tensor  # (t, d)

    @property
    def t(self) -> int:
        return self.U.shape[0]

    def named(self) -> dict[str, Tensor]:
        return {"pool.u": self.U}


def init_pool_params(t: int, d: int, rng: np.random.Generator, dtype=np.float32,
                     n: int = 1) -> PoolParams:
    """Glorot-uniform U shrunk by 1/n, so U X^T X starts at the scale of a token mean
    rather than a sum over the ``n`` input tokens."""
    if t < 1:
        raise ConfigError(f"pooled token count must be positive, got {t}")
    a = math.sqrt(6.0 / (t + d)) / n
    return PoolParams(Tensor(rng.uniform(-a, a, size=(t, d)).astype(dtype), requires_grad=True))


def pool_tokens(X: Tensor, U: Tensor) -> tuple[Tensor, Tensor]:
    """X' = U X^T X and the assignment C = U X^T, for (n, d) or (B, n, d) X."""
    if U.ndim != 2 or U.shape[1] != X.shape[-1]:
        raise DimensionError(f"U {U.shape} does not match token features {X.shape}")
    C = U @ X.T
    return C @ X, C


def pool_adjacency(A: Tensor, C: Tensor, postprocess: bool = True) -> Tensor:
    """A' = C A C^T (t x t).

    With ``postprocess`` the result has negatives clipped to zero and is
    symmetrized, which leaves a symmetric nonnegative product unchanged.
    """
    if A.shape[-1] != A.shape[-2] or C.shape[-1] != A.shape[-1]:
        raise DimensionError(f"adjacency {A.shape} incompatible with assignment {C.shape}")
    out = C @ A @ C.T
    if postprocess:
        out = relu(out)
        out = (out + out.T) * 0.5
    return out


def pooled_structure(A_pooled: Tensor) -> Tensor:
    """Rescale a pooled adjacency into [0, 1] by its largest absolute entry (per sample)."""
    scale = amax(tabs(A_pooled), axis=(-2, -1), keepdims=True) + 1e-12
    return A_pooled / scale
