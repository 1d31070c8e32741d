"""Ordered drug-pair encoding.

Two GIN rounds over each molecular graph give node embeddings; a sum
readout yields the per-drug embedding, and a prototype-attention learner
compresses the nodes into a fixed number of substructure rows. The pair
representation is an MLP over the concatenated per-drug embeddings, and the
pair substructure matrix stacks both drugs' substructure rows in input
order, which keeps the encoding asymmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import MolecularGraph
from .numerics import (
    Tensor,
    add,
    add_const,
    concat_rows,
    concat_vec,
    gather_rows,
    linear,
    linear_vec,
    matmul,
    matmul_nt,
    mul,
    relu,
    softmax_rows,
    sum_rows,
)


class VocabularyError(ValueError):
    """An atom code falls outside the embedding table."""


@dataclass
class Mlp:
    """Two-layer ReLU MLP; weights are (in, hidden) and (hidden, out)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def apply(self, x: Tensor) -> Tensor:
        return linear(relu(linear(x, self.w1, self.b1)), self.w2, self.b2)

    def apply_vec(self, x: Tensor) -> Tensor:
        return linear_vec(relu(linear_vec(x, self.w1, self.b1)), self.w2, self.b2)

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


@dataclass
class GinLayer:
    mlp: Mlp
    eps: Tensor  # learnable scalar, init 0

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = self.mlp.tensors(f"{prefix}.mlp")
        out[f"{prefix}.eps"] = self.eps
        return out


@dataclass
class EncoderParams:
    atom_embedding: Tensor          # vocab x d_v
    gin_layers: list[GinLayer]      # each round: MLP d_v -> d_v, own eps
    q0: Tensor                      # N0 x d_n shared substructure prototypes
    w_q_g: Tensor                   # d_n x d_n
    w_k_g: Tensor                   # d_v x d_n
    w_v_g: Tensor                   # d_v x d_n
    w_p_g: Tensor                   # d_n x d_n
    pair_mlp: Mlp                   # 2*d_n -> d_r

    @property
    def d_n(self) -> int:
        return self.q0.shape[1]

    @property
    def n0(self) -> int:
        return self.q0.shape[0]

    def tensors(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out = {f"{prefix}.atom_embedding": self.atom_embedding}
        for i, layer in enumerate(self.gin_layers):
            out.update(layer.tensors(f"{prefix}.gin{i}"))
        out[f"{prefix}.q0"] = self.q0
        out[f"{prefix}.w_q_g"] = self.w_q_g
        out[f"{prefix}.w_k_g"] = self.w_k_g
        out[f"{prefix}.w_v_g"] = self.w_v_g
        out[f"{prefix}.w_p_g"] = self.w_p_g
        out.update(self.pair_mlp.tensors(f"{prefix}.pair_mlp"))
        return out


@dataclass
class PairEncoding:
    h: Tensor        # d_r
    p: Tensor        # N x d_n, rows are [p_g; p_g2] in input order
    h_g: Tensor
    h_g2: Tensor
    p_g: Tensor
    p_g2: Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_mlp(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int) -> Mlp:
    return Mlp(
        w1=Tensor(glorot(rng, d_in, d_hidden), requires_grad=True),
        b1=Tensor(np.zeros(d_hidden), requires_grad=True),
        w2=Tensor(glorot(rng, d_hidden, d_out), requires_grad=True),
        b2=Tensor(np.zeros(d_out), requires_grad=True),
    )


def init_encoder(
    rng: np.random.Generator,
    vocab_size: int,
    d_v: int,
    d_n: int,
    d_r: int,
    n_substructures: int,
    gin_rounds: int = 2,
) -> EncoderParams:
    if n_substructures % 2 != 0 or n_substructures < 2:
        raise ValueError("the pair substructure count must be even and >= 2")
    if d_v != d_n:
        raise ValueError("sum readout requires d_v == d_n")
    n0 = n_substructures // 2
    layers = [
        GinLayer(
            mlp=init_mlp(rng, d_v, d_v, d_v),
            eps=Tensor(0.0, requires_grad=True),
        )
        for _ in range(gin_rounds)
    ]
    return EncoderParams(
        atom_embedding=Tensor(glorot(rng, vocab_size, d_v), requires_grad=True),
        gin_layers=layers,
        q0=Tensor(glorot(rng, n0, d_n), requires_grad=True),
        w_q_g=Tensor(glorot(rng, d_n, d_n), requires_grad=True),
        w_k_g=Tensor(glorot(rng, d_v, d_n), requires_grad=True),
        w_v_g=Tensor(glorot(rng, d_v, d_n), requires_grad=True),
        w_p_g=Tensor(glorot(rng, d_n, d_n), requires_grad=True),
        pair_mlp=init_mlp(rng, 2 * d_n, d_n, d_r),
    )


def gin_forward(graph: MolecularGraph, params: EncoderParams) -> Tensor:
    """Node embeddings after the configured GIN rounds.

    Each round: h_v <- MLP((1 + eps) * h_v + sum of neighbour embeddings).
    """
    vocab = params.atom_embedding.shape[0]
    for c in graph.atom_codes:
        if c >= vocab:
            raise VocabularyError(
                f"graph {graph.drug_id!r}: atom code {c} outside vocabulary {vocab}"
            )
    x = gather_rows(params.atom_embedding, list(graph.atom_codes))
    adj = Tensor(graph.adjacency())
    for layer in params.gin_layers:
        one_plus_eps = add_const(layer.eps, 1.0)
        agg = add(matmul(adj, x), mul(x, one_plus_eps))
        x = layer.mlp.apply(agg)
    return x


def readout(x: Tensor) -> Tensor:
    """Permutation-invariant graph embedding: column-wise sum over nodes."""
    return sum_rows(x)


def substructure_learner(x: Tensor, params: EncoderParams) -> Tensor:
    """Prototype attention over node embeddings -> N0 substructure rows."""
    q = matmul(params.q0, params.w_q_g)
    k = matmul(x, params.w_k_g)
    v = matmul(x, params.w_v_g)
    a = substructure_attention(q, k, params.d_n)
    return relu(matmul(add(q, matmul(a, v)), params.w_p_g))


def substructure_attention(q: Tensor, k: Tensor, d: int) -> Tensor:
    return softmax_rows(matmul_nt(q, k, 1.0 / math.sqrt(d)))


def encode_pair(g: MolecularGraph, g2: MolecularGraph, params: EncoderParams) -> PairEncoding:
    x1 = gin_forward(g, params)
    x2 = gin_forward(g2, params)
    h1, h2 = readout(x1), readout(x2)
    p1 = substructure_learner(x1, params)
    p2 = substructure_learner(x2, params)
    h = params.pair_mlp.apply_vec(concat_vec([h1, h2]))
    p = concat_rows([p1, p2])
    return PairEncoding(h=h, p=p, h_g=h1, h_g2=h2, p_g=p1, p_g2=p2)
