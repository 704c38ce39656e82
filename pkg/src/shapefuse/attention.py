"""Attention-based aggregation over token sets.

Two module families, each instantiated at object level and view level with
independent weights:

- self-attention aggregator: a class token is prepended to the projected
  content tokens, learnable position embeddings are added, and the sequence
  runs through transformer encoder blocks
      Z' = MSA(LN(Z)) + Z
      Z* = LN(MLP(LN(Z')) + Z')
  (note the outer LN on the second line). The class-token row of Z* is the
  aggregated feature; the full sequence is exposed for the cross module.

- cross-attention aggregator: the aligned point feature g(f_point) is
  prepended to the self-attended sequence, queries the hybrid set via
  multi-head cross attention, and is added back residually:
      f_cross = g(f_point) + Attn(g(f_point), hybrid)

Token order is fixed: g(f_point) is row 0 of the hybrid set, the internal
class token becomes row 1. The model is not token-permutation invariant
once position embeddings are non-zero, so this order is part of the
contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .optim import Parameter, init_param
from .tensor import Tensor


@dataclass
class TokenSequence:
    """L x D tokens with a designated class-token row (0 by convention)."""

    tokens: Tensor
    class_index: int = 0

    def class_row(self) -> Tensor:
        return T.gather(self.tokens, np.array([self.class_index], dtype=np.int64))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    length, dim = x.shape
    return T.transpose(T.reshape(x, (length, heads, dim // heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    heads, length, dh = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (length, heads * dh))


def _attend(q: Tensor, k: Tensor, v: Tensor, attn_sink: list | None) -> Tensor:
    """softmax(q k^T / sqrt(d_head)) v, batched over heads."""
    dh = q.shape[-1]
    scores = T.smul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    weights = T.softmax(scores, axis=-1)
    if attn_sink is not None:
        attn_sink.append(weights.data.copy())
    return T.matmul(weights, v)


def multihead_self_attention(
    tokens: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    attn_sink: list | None = None,
) -> Tensor:
    """Standard multi-head self-attention; output shape equals input shape."""
    dim = tokens.shape[1]
    if dim % heads != 0:
        raise ContractError(f"heads ({heads}) must divide token width ({dim})")
    q = _split_heads(T.matmul(tokens, wq), heads)
    k = _split_heads(T.matmul(tokens, wk), heads)
    v = _split_heads(T.matmul(tokens, wv), heads)
    mixed = _merge_heads(_attend(q, k, v, attn_sink))
    return T.matmul(mixed, wo)


def cross_attention(
    query: Tensor,
    kv_tokens: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    attn_sink: list | None = None,
) -> Tensor:
    """One query row attends over kv_tokens; returns a 1 x D row."""
    dim = kv_tokens.shape[1]
    if dim % heads != 0:
        raise ContractError(f"heads ({heads}) must divide token width ({dim})")
    q = _split_heads(T.matmul(query, wq), heads)
    k = _split_heads(T.matmul(kv_tokens, wk), heads)
    v = _split_heads(T.matmul(kv_tokens, wv), heads)
    mixed = _merge_heads(_attend(q, k, v, attn_sink))
    return T.matmul(mixed, wo)


def _ln_affine(x: Tensor, gain: Parameter, bias: Parameter) -> Tensor:
    return T.add(T.mul(T.layer_norm(x, axis=-1), gain.value), bias.value)


class EncoderBlock:
    """One transformer encoder block with the outer-LN placement."""

    def __init__(self, prefix: str, dim: int, heads: int, mlp_hidden: int, seed: int):
        self.heads = heads
        sigma = float(np.sqrt(2.0 / dim))
        p: dict[str, Parameter] = {}
        for name in ("wq", "wk", "wv", "wo"):
            p[name] = init_param(f"{prefix}.{name}", (dim, dim), "gaussian", seed, sigma=sigma)
        p["mlp.w1"] = init_param(f"{prefix}.mlp.w1", (dim, mlp_hidden), "gaussian", seed, sigma=sigma)
        p["mlp.b1"] = init_param(f"{prefix}.mlp.b1", (mlp_hidden,), "zeros", seed)
        p["mlp.w2"] = init_param(
            f"{prefix}.mlp.w2", (mlp_hidden, dim), "gaussian", seed,
            sigma=float(np.sqrt(2.0 / mlp_hidden)),
        )
        p["mlp.b2"] = init_param(f"{prefix}.mlp.b2", (dim,), "zeros", seed)
        for i in (1, 2, 3):
            p[f"ln{i}.gain"] = init_param(f"{prefix}.ln{i}.gain", (dim,), "ones", seed)
            p[f"ln{i}.bias"] = init_param(f"{prefix}.ln{i}.bias", (dim,), "zeros", seed)
        self.p = p

    def params(self) -> list[Parameter]:
        return list(self.p.values())

    def forward(self, z: Tensor, attn_sink: list | None = None) -> Tensor:
        attn = multihead_self_attention(
            _ln_affine(z, self.p["ln1.gain"], self.p["ln1.bias"]),
            self.p["wq"].value, self.p["wk"].value, self.p["wv"].value, self.p["wo"].value,
            self.heads, attn_sink,
        )
        z_res = T.add(attn, z)
        hidden = T.relu(T.add(
            T.matmul(_ln_affine(z_res, self.p["ln2.gain"], self.p["ln2.bias"]), self.p["mlp.w1"].value),
            self.p["mlp.b1"].value,
        ))
        mlp_out = T.add(T.matmul(hidden, self.p["mlp.w2"].value), self.p["mlp.b2"].value)
        return _ln_affine(T.add(mlp_out, z_res), self.p["ln3.gain"], self.p["ln3.bias"])


class Imam:
    """Class-token encoder over a set of content tokens (self-attention)."""

    def __init__(
        self,
        prefix: str,
        in_width: int,
        max_tokens: int,
        dim: int = 512,
        heads: int = 4,
        mlp_hidden: int = 128,
        blocks: int = 1,
        seed: int = 0,
    ):
        if dim % heads != 0:
            raise ContractError(f"heads ({heads}) must divide dim ({dim})")
        self.prefix = prefix
        self.max_tokens = int(max_tokens)
        self.dim = dim
        self.heads = heads
        self._params: list[Parameter] = []
        self.proj_w = init_param(f"{prefix}.proj.weight", (in_width, dim), "gaussian", seed,
                                 sigma=float(np.sqrt(2.0 / in_width)))
        self.proj_b = init_param(f"{prefix}.proj.bias", (dim,), "zeros", seed)
        self.cls = init_param(f"{prefix}.cls", (1, dim), "gaussian", seed, sigma=0.02)
        self.pos = init_param(f"{prefix}.pos", (self.max_tokens + 1, dim), "gaussian", seed,
                              sigma=0.02)
        self._params += [self.proj_w, self.proj_b, self.cls, self.pos]
        self.blocks = [
            EncoderBlock(f"{prefix}.blk{i}", dim, heads, mlp_hidden, seed) for i in range(blocks)
        ]
        for blk in self.blocks:
            self._params += blk.params()

    def params(self) -> list[Parameter]:
        return list(self._params)

    def forward(self, content: Tensor, return_sequence: bool = False, attn_sink: list | None = None):
        length = content.shape[0]
        if length > self.max_tokens:
            raise ContractError(
                f"{self.prefix}: {length} tokens exceed position table ({self.max_tokens})"
            )
        projected = T.add(T.matmul(content, self.proj_w.value), self.proj_b.value)
        seq = T.concat([self.cls.value, projected], axis=0)
        seq = T.add(seq, T.gather(self.pos.value, np.arange(length + 1, dtype=np.int64)))
        for blk in self.blocks:
            seq = blk.forward(seq, attn_sink)
        if return_sequence:
            return TokenSequence(seq, class_index=0)
        return T.gather(seq, np.array([0], dtype=np.int64))  # (1, dim)


class Cmam:
    """Point-feature-queried cross-attention over a hybrid token set."""

    def __init__(
        self,
        prefix: str,
        in_width: int,
        max_tokens: int,
        point_dim: int,
        dim: int = 512,
        heads: int = 4,
        mlp_hidden: int = 128,
        blocks: int = 1,
        seed: int = 0,
        shared_imam: Imam | None = None,
    ):
        self.prefix = prefix
        self.heads = heads
        self.imam = shared_imam or Imam(
            f"{prefix}.imam", in_width, max_tokens, dim, heads, mlp_hidden, blocks, seed
        )
        self._owns_imam = shared_imam is None
        sigma = float(np.sqrt(2.0 / point_dim))
        self.g_w = init_param(f"{prefix}.g.weight", (point_dim, dim), "gaussian", seed, sigma=sigma)
        self.g_b = init_param(f"{prefix}.g.bias", (dim,), "zeros", seed)
        sig_attn = float(np.sqrt(2.0 / dim))
        self.wq = init_param(f"{prefix}.xattn.wq", (dim, dim), "gaussian", seed, sigma=sig_attn)
        self.wk = init_param(f"{prefix}.xattn.wk", (dim, dim), "gaussian", seed, sigma=sig_attn)
        self.wv = init_param(f"{prefix}.xattn.wv", (dim, dim), "gaussian", seed, sigma=sig_attn)
        self.wo = init_param(f"{prefix}.xattn.wo", (dim, dim), "gaussian", seed, sigma=sig_attn)

    def params(self) -> list[Parameter]:
        own = [self.g_w, self.g_b, self.wq, self.wk, self.wv, self.wo]
        if self._owns_imam:
            return self.imam.params() + own
        return own

    def align_point(self, f_point: Tensor) -> Tensor:
        """g(.): affine alignment of the point feature to the token width."""
        return T.add(T.matmul(f_point, self.g_w.value), self.g_b.value)

    def forward(self, content: Tensor, f_point: Tensor, attn_sink: list | None = None) -> Tensor:
        aligned = self.align_point(f_point)  # (1, dim)
        seq = self.imam.forward(content, return_sequence=True, attn_sink=attn_sink)
        hybrid = T.concat([aligned, seq.tokens], axis=0)  # aligned point is row 0
        crossed = cross_attention(
            aligned, hybrid,
            self.wq.value, self.wk.value, self.wv.value, self.wo.value,
            self.heads, attn_sink,
        )
        return T.add(aligned, crossed)  # (1, dim)
