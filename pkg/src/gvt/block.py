"""One residual GvT block.

Pipeline per block: fused adjacency (grid prior times feature-similarity
edges) -> graph-convolutional query/key projection -> per-head scaled
dot-product attention -> optional sparse selection and cross-head mixing ->
graph-convolutional value update over the relation matrix -> head merge and
output projection.

All functions accept an optional leading batch axis on token tensors; the
structure prior may be shared (n, n) or per-sample (B, n, n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .graph import EDGE_SIGNS, edge_softmax, fuse_adjacency, sym_normalize, symmetrize
from .tensor import (
    Tensor,
    batch_matmul,
    concat,
    diag_embed,
    sigmoid,
    softmax,
    sqrt,
    stack,
    transpose,
)

TALKING_MODES = ("gvt", "shazeer", "none")
U_MIN = 1e-4
LN_EPS = 1e-5


@dataclass(frozen=True)
class AblationFlags:
    talking: str = "gvt"
    residual: bool = True
    edge_sign: str = "distance"
    symmetrize: bool = True
    pre_norm: bool = False

    def __post_init__(self):
        if self.talking not in TALKING_MODES:
            raise ConfigError(f"talking must be one of {TALKING_MODES}, got {self.talking!r}")
        if self.edge_sign not in EDGE_SIGNS:
            raise ConfigError(f"edge_sign must be one of {EDGE_SIGNS}, got {self.edge_sign!r}")


@dataclass
class BlockParams:
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wh: Tensor  # (2d/h, h); column i drives head i
    wc: Tensor  # (h, n)
    u: Tensor  # (h,)
    phi: Tensor  # (h, h)
    wo: Tensor  # (d, d)

    @property
    def heads(self) -> int:
        return len(self.wq)

    @property
    def head_dim(self) -> int:
        return self.wq[0].shape[0]

    @property
    def tokens(self) -> int:
        return self.wc.shape[1]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for j in range(self.heads):
            out[f"{prefix}head{j}.wq"] = self.wq[j]
            out[f"{prefix}head{j}.wk"] = self.wk[j]
            out[f"{prefix}head{j}.wv"] = self.wv[j]
        out[f"{prefix}wh"] = self.wh
        out[f"{prefix}wc"] = self.wc
        out[f"{prefix}u"] = self.u
        out[f"{prefix}phi"] = self.phi
        out[f"{prefix}wo"] = self.wo
        return out

    def clamp(self) -> None:
        np.maximum(self.u.data, U_MIN, out=self.u.data)


@dataclass
class AttentionState:
    S: Tensor
    R: Tensor
    A: Tensor
    F: Tensor | None = None
    C: Tensor | None = None
    Y: Tensor | None = None
    Z: Tensor | None = None
    S_hat: Tensor | None = None
    R_norm: Tensor | None = None
    extras: dict = field(default_factory=dict)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> Tensor:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype), requires_grad=True)


def init_block_params(n: int, d: int, h: int, rng: np.random.Generator,
                      dtype=np.float32) -> BlockParams:
    if d % h:
        raise ConfigError(f"hidden size {d} not divisible by heads {h}")
    dh = d // h
    wq = [xavier(rng, dh, dh, dtype) for _ in range(h)]
    wk = [xavier(rng, dh, dh, dtype) for _ in range(h)]
    wv = [xavier(rng, dh, dh, dtype) for _ in range(h)]
    wh = xavier(rng, 2 * dh, h, dtype)
    wc = xavier(rng, h, n, dtype)
    u = Tensor(np.ones(h, dtype=dtype), requires_grad=True)
    phi = Tensor((np.eye(h) + rng.normal(0.0, 0.01, size=(h, h))).astype(dtype), requires_grad=True)
    wo = xavier(rng, d, d, dtype)
    return BlockParams(wq, wk, wv, wh, wc, u, phi, wo)


# -- head layout -------------------------------------------------------------------------


def split_heads(x: Tensor, h: int) -> Tensor:
    """(..., n, d) -> (..., h, n, d/h); head i owns feature columns [i*d/h, (i+1)*d/h)."""
    *lead, n, d = x.shape
    if d % h:
        raise ConfigError(f"hidden size {d} not divisible by heads {h}")
    x = x.reshape(tuple(lead) + (n, h, d // h))
    k = len(lead)
    return transpose(x, tuple(range(k)) + (k + 1, k, k + 2))


def merge_heads(x: Tensor) -> Tensor:
    """(..., h, n, d/h) -> (..., n, d)."""
    *lead, h, n, dh = x.shape
    k = len(lead)
    x = transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
    return x.reshape(tuple(lead) + (n, h * dh))


def layer_norm(x: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / sqrt(var + LN_EPS)


# -- stages ---------------------------------------------------------------------------------


def build_adjacency(tokens: Tensor, structure: Tensor, edge_sign: str = "distance") -> Tensor:
    """(structure + I) * edge_softmax(tokens)."""
    return fuse_adjacency(structure, edge_softmax(tokens, edge_sign))


def project_qk(tokens: Tensor, A: Tensor, params: BlockParams) -> tuple[Tensor, Tensor]:
    """Graph-convolutional queries and keys, each (..., h, n, d/h)."""
    h = params.heads
    ax = split_heads(sym_normalize(A) @ tokens, h)
    q = ax @ stack(params.wq)
    k = ax @ stack(params.wk)
    return q, k


def attention_scores(q: Tensor, k: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d/h)) row-wise, per head."""
    if q.shape != k.shape:
        raise DimensionError(f"query {q.shape} and key {k.shape} shapes differ")
    return softmax((q @ k.T) * (1.0 / math.sqrt(q.shape[-1])), axis=-1)


def head_features(q_i: Tensor, k_i: Tensor, W_h: Tensor, i: int) -> Tensor:
    """f_i = [q_i, k_i] . W_h[:, i] for a single head; returns (n,)."""
    if W_h.shape[0] != q_i.shape[-1] + k_i.shape[-1]:
        raise DimensionError(f"W_h rows {W_h.shape[0]} != 2 * head dim {q_i.shape[-1]}")
    col = W_h[:, i].reshape(W_h.shape[0], 1)
    f = concat([q_i, k_i], axis=-1) @ col
    return f.reshape(f.shape[:-1])


def all_head_features(q: Tensor, k: Tensor, W_h: Tensor) -> Tensor:
    """Stack of head_features over all heads: (..., h, n, d/h) pairs -> F (..., h, n)."""
    h = q.shape[-3]
    cols = W_h.T.reshape(h, W_h.shape[0], 1)
    f = concat([q, k], axis=-1) @ cols
    return f.reshape(f.shape[:-1])


def shrink(Y: Tensor, u: Tensor) -> Tensor:
    """sigmoid(Y / u) with one temperature per head (row of Y)."""
    if np.any(u.data <= 0):
        raise ContractError("gate temperatures u must be strictly positive")
    return sigmoid(Y / u.reshape(u.shape[0], 1))


def sparse_gate(F: Tensor, W_c: Tensor, u: Tensor, with_mask: bool = True):
    """Second-order head statistics -> per-token gate Z (..., h, n) and diagonal masks M."""
    C = F @ F.T
    Y = C @ W_c
    Z = shrink(Y, u)
    M = diag_embed(Z) if with_mask else None
    return Z, M, C, Y


def mask_attention(S: Tensor, M: Tensor) -> Tensor:
    """Batched M_i S_i M_i, computed literally as two batched products."""
    if S.shape != M.shape:
        raise DimensionError(f"attention {S.shape} and mask {M.shape} shapes differ")
    if S.ndim == 3:
        return batch_matmul(batch_matmul(M, S), M)
    return M @ S @ M


def mask_attention_diag(S: Tensor, Z: Tensor) -> Tensor:
    """Same as ``mask_attention(S, diag(Z))`` without forming the diagonal matrices."""
    return Z.reshape(Z.shape + (1,)) * S * Z.reshape(Z.shape[:-1] + (1, Z.shape[-1]))


def talk_heads(S_hat: Tensor, phi: Tensor) -> Tensor:
    """R_i = sum_j phi[i, j] S_hat_j."""
    *lead, h, n, m = S_hat.shape
    mixed = phi @ S_hat.reshape(tuple(lead) + (h, n * m))
    return mixed.reshape(S_hat.shape)


def value_graphconv(x: Tensor, R: Tensor, W_v: Tensor, residual: bool = True,
                    sym: bool = True) -> Tensor:
    """Graph convolution of head features over the relation matrix, plus optional skip."""
    if sym:
        R = symmetrize(R)
    out = sym_normalize(R) @ x @ W_v
    return out + x if residual else out


def block_forward(tokens: Tensor, structure: Tensor, params: BlockParams,
                  flags: AblationFlags = AblationFlags(), return_state: bool = False):
    """Run one block on (n, d) or (B, n, d) tokens.

    ``structure`` is the binary grid adjacency for early blocks, or the rescaled
    pooled adjacency after graph pooling.
    """
    n, d = tokens.shape[-2:]
    h = params.heads
    if d != h * params.head_dim:
        raise DimensionError(f"tokens have {d} features, block expects {h * params.head_dim}")
    if n != params.tokens:
        raise DimensionError(f"tokens count {n} differs from block token count {params.tokens}")
    x = layer_norm(tokens) if flags.pre_norm else tokens

    A = build_adjacency(x, structure, flags.edge_sign)
    q, k = project_qk(x, A, params)
    S = attention_scores(q, k)

    state = {}
    if flags.talking == "gvt":
        F = all_head_features(q, k, params.wh)
        Z, _, C, Y = sparse_gate(F, params.wc, params.u, with_mask=False)
        S_hat = mask_attention_diag(S, Z)
        R = talk_heads(S_hat, params.phi)
        state = dict(F=F, C=C, Y=Y, Z=Z, S_hat=S_hat)
    elif flags.talking == "shazeer":
        R = talk_heads(S, params.phi)
    else:
        R = S

    xh = split_heads(x, h)
    if flags.symmetrize:
        R = symmetrize(R)
    R_norm = sym_normalize(R)
    heads = R_norm @ xh @ stack(params.wv)
    if flags.residual:
        heads = heads + xh
    out = merge_heads(heads) @ params.wo
    if return_state:
        return out, AttentionState(S=S, R=R, A=A, R_norm=R_norm, **state)
    return out


def block_forward_plain(tokens: Tensor, structure: Tensor, params: BlockParams,
                        flags: AblationFlags = AblationFlags(talking="none")) -> Tensor:
    """Reference path with no cross-head machinery at all (never touches wh, wc, u, phi)."""
    x = layer_norm(tokens) if flags.pre_norm else tokens
    A = fuse_adjacency(structure, edge_softmax(x, flags.edge_sign))
    ax = split_heads(sym_normalize(A) @ x, params.heads)
    q = ax @ stack(params.wq)
    k = ax @ stack(params.wk)
    S = softmax((q @ k.T) * (1.0 / math.sqrt(q.shape[-1])), axis=-1)
    R = symmetrize(S) if flags.symmetrize else S
    xh = split_heads(x, params.heads)
    heads = sym_normalize(R) @ xh @ stack(params.wv)
    if flags.residual:
        heads = heads + xh
    return merge_heads(heads) @ params.wo
