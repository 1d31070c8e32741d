"""Semantic representation learning for interaction-event classes.

Class-level description tokens and attribute-level effect tokens are
projected into the shared representation width, the attribute tokens are
averaged into one extra summary row, and the stacked rows are layer
normalized (bi-level tokens). Substructure-guided fusion then cross-attends
the drug pair's substructure rows over those tokens and mean-pools the
attended values into one class representation per (instance, class).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dataio import DdieSemanticsRecord
from .numerics import (
    LN_DEFAULT_EPS,
    ShapeError,
    Tensor,
    attention_pool,
    concat_rows,
    layer_norm,
    matmul,
    matmul_nt,
    mean_rows,
    softmax_rows,
    stack_rows,
)
from .pair_encoder import Mlp, PairEncoding


@dataclass
class BrlParams:
    phi1: Mlp          # d_t -> d_r, class-level tokens
    phi2: Mlp          # d_t -> d_r, attribute-level tokens
    ln_gain: Tensor    # d_r
    ln_bias: Tensor    # d_r
    w_q: Tensor        # d_n x d_r (queries from substructures)
    w_k: Tensor        # d_r x d_r
    w_v: Tensor        # d_r x d_r

    @property
    def d_r(self) -> int:
        return self.ln_gain.shape[0]

    def tensors(self, prefix: str = "brl") -> dict[str, Tensor]:
        out = self.phi1.tensors(f"{prefix}.phi1")
        out.update(self.phi2.tensors(f"{prefix}.phi2"))
        out[f"{prefix}.ln_gain"] = self.ln_gain
        out[f"{prefix}.ln_bias"] = self.ln_bias
        out[f"{prefix}.w_q"] = self.w_q
        out[f"{prefix}.w_k"] = self.w_k
        out[f"{prefix}.w_v"] = self.w_v
        return out


@dataclass
class BiLevelTokens:
    """Rows 0..M-1 are projected class tokens; the last row summarizes the
    attribute tokens (absent when attributes are disabled)."""

    t: Tensor

    @property
    def n_rows(self) -> int:
        return self.t.shape[0]


@dataclass
class BrlCache:
    """Per-batch memo; token features and their key/value projections do
    not depend on the instance, so one parameter version shares them."""

    bilevel: dict[str, BiLevelTokens] = field(default_factory=dict)
    averaged: dict[str, Tensor] = field(default_factory=dict)
    kv: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)


def bilevel_tokens(
    rec: DdieSemanticsRecord,
    params: BrlParams,
    include_attributes: bool = True,
) -> BiLevelTokens:
    d_t_expected = params.phi1.w1.shape[0]
    if rec.d_t != d_t_expected:
        raise ShapeError(
            f"record {rec.ddie_id!r} has token width {rec.d_t}, params expect {d_t_expected}"
        )
    cls = params.phi1.apply(Tensor(rec.class_tokens))
    if include_attributes:
        attr = params.phi2.apply(Tensor(rec.attr_tokens))
        stacked = concat_rows([cls, mean_rows(attr)])
    else:
        stacked = cls
    return BiLevelTokens(t=layer_norm(stacked, params.ln_gain, params.ln_bias, LN_DEFAULT_EPS))


def _fusion_kv(t: BiLevelTokens, params: BrlParams) -> tuple[Tensor, Tensor]:
    return matmul(t.t, params.w_k), matmul(t.t, params.w_v)


def _fusion_attention_from(q: Tensor, k: Tensor, d_r: int) -> Tensor:
    return softmax_rows(matmul_nt(q, k, 1.0 / math.sqrt(d_r)))


def _fuse_from(q: Tensor, k: Tensor, v: Tensor, d_r: int) -> Tensor:
    return attention_pool(q, k, v, 1.0 / math.sqrt(d_r))


def fusion_queries(p: Tensor, params: BrlParams) -> Tensor:
    if p.shape[1] != params.w_q.shape[0]:
        raise ShapeError(f"substructure width {p.shape[1]} does not fit w_q {params.w_q.shape}")
    return matmul(p, params.w_q)


def ssf_fuse(t: BiLevelTokens, p: Tensor, params: BrlParams) -> Tensor:
    """Cross-attend substructure rows over the bi-level tokens; mean-pool."""
    q = fusion_queries(p, params)
    k, v = _fusion_kv(t, params)
    return _fuse_from(q, k, v, params.d_r)


def average_fuse(t: BiLevelTokens) -> Tensor:
    """Fusion ablation: plain mean over the token rows."""
    return mean_rows(t.t)


def attention_map(t: BiLevelTokens, p: Tensor, params: BrlParams) -> Tensor:
    """The fusion attention matrix (N x (M+1)), exactly as used in ssf_fuse."""
    k, _ = _fusion_kv(t, params)
    return _fusion_attention_from(fusion_queries(p, params), k, params.d_r)


def _cached_bilevel(rec, params, cache, include_attributes) -> BiLevelTokens:
    if cache is not None:
        got = cache.bilevel.get(rec.ddie_id)
        if got is not None:
            return got
    t = bilevel_tokens(rec, params, include_attributes)
    if cache is not None:
        cache.bilevel[rec.ddie_id] = t
    return t


def encode_class_set(
    pair: PairEncoding,
    records: list[DdieSemanticsRecord],
    params: BrlParams,
    cache: BrlCache | None = None,
    use_ssf: bool = True,
    include_attributes: bool = True,
) -> Tensor:
    """Class representations for one instance: row j fuses records[j] with
    the instance's substructure rows. Token features and their projections
    are memoized in `cache` (valid for one parameter version, typically one
    batch); cached and uncached paths run the same ops on the same values.
    """
    if not records:
        raise ValueError("encode_class_set needs at least one record")
    rows = []
    q = fusion_queries(pair.p, params) if use_ssf else None
    for rec in records:
        t = _cached_bilevel(rec, params, cache, include_attributes)
        if use_ssf:
            if cache is not None:
                kv = cache.kv.get(rec.ddie_id)
                if kv is None:
                    kv = _fusion_kv(t, params)
                    cache.kv[rec.ddie_id] = kv
            else:
                kv = _fusion_kv(t, params)
            rows.append(_fuse_from(q, kv[0], kv[1], params.d_r))
        else:
            if cache is not None and rec.ddie_id in cache.averaged:
                rows.append(cache.averaged[rec.ddie_id])
            else:
                z = average_fuse(t)
                if cache is not None:
                    cache.averaged[rec.ddie_id] = z
                rows.append(z)
    return stack_rows(rows)
