"""Seeded finite-difference suites covering every differentiable path:
the token projection/normalization pipeline, the fusion attention, the
pair encoder, and all training losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .brl import BrlParams, bilevel_tokens, ssf_fuse
from .dataio import DdieSemanticsRecord, MolecularGraph
from .dua_loss import (
    BatchForward,
    LossConfig,
    align_loss,
    baseline_ce_loss,
    baseline_hinge_loss,
    class_uniformity_loss,
    instance_uniformity_loss,
    total_loss,
)
from .model import init_model
from .numerics import Tensor, add, mean_all, stack_rows, sum_all
from .pair_encoder import encode_pair
from .trainer import TrainConfig

SCOPES = ("all", "losses", "encoder", "brl")


@dataclass
class Check:
    name: str
    f: Callable[[], Tensor]
    params: dict[str, Tensor]


def _tiny_config() -> TrainConfig:
    return TrainConfig(
        d_v=6, d_n=6, d_r=5, N=4, d_t=7, gin_layers=2,
        batch_size=4, epochs=1,
    )


def _random_graph(rng: np.random.Generator, vocab: int, n: int, drug_id: str) -> MolecularGraph:
    codes = tuple(int(rng.integers(0, vocab)) for _ in range(n))
    bonds = [(i, i + 1) for i in range(n - 1)]
    if n >= 3:
        bonds.append((0, n - 1))
    return MolecularGraph(drug_id=drug_id, atom_codes=codes, bonds=tuple(bonds))


def _random_record(rng: np.random.Generator, ddie_id: str, d_t: int) -> DdieSemanticsRecord:
    return DdieSemanticsRecord(
        ddie_id=ddie_id,
        class_tokens=rng.normal(size=(3, d_t)),
        attr_tokens=rng.normal(size=(2, d_t)),
    )


def encoder_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng((seed, 0xE11C))
    cfg = _tiny_config()
    vocab = 5
    model = init_model(cfg, vocab, seed)
    g1 = _random_graph(rng, vocab, 4, "a")
    g2 = _random_graph(rng, vocab, 5, "b")
    params = model.encoder.tensors("encoder")

    def f() -> Tensor:
        enc = encode_pair(g1, g2, model.encoder)
        return add(mean_all(enc.h), mean_all(enc.p))

    return [Check("encoder.pair", f, params)]


def brl_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng((seed, 0xB121))
    cfg = _tiny_config()
    model = init_model(cfg, 5, seed)
    rec = _random_record(rng, "r0", cfg.d_t)
    p = Tensor(rng.normal(size=(cfg.N, cfg.d_n)))
    params = model.brl.tensors("brl")

    def f_tokens() -> Tensor:
        return mean_all(bilevel_tokens(rec, model.brl).t)

    def f_fuse() -> Tensor:
        return sum_all(ssf_fuse(bilevel_tokens(rec, model.brl), p, model.brl))

    return [
        Check("brl.bilevel_tokens", f_tokens, params),
        Check("brl.ssf_fuse", f_fuse, params),
    ]


def _random_batch(rng: np.random.Generator, b: int, c: int, d: int) -> BatchForward:
    hs = [Tensor(rng.normal(size=d), requires_grad=True) for _ in range(b)]
    zs = [Tensor(rng.normal(size=(c, d)), requires_grad=True) for _ in range(b)]
    labels = [int(rng.integers(0, c)) for _ in range(b)]
    return BatchForward(h=hs, z=zs, labels=labels)


def loss_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng((seed, 0x105E))
    b, c, d = 3, 4, 5
    batch = _random_batch(rng, b, c, d)
    params = {f"h{i}": h for i, h in enumerate(batch.h)}
    params.update({f"z{i}": z for i, z in enumerate(batch.z)})
    centers_src = [Tensor(rng.normal(size=d), requires_grad=True) for _ in range(b)]
    center_params = {f"c{i}": t for i, t in enumerate(centers_src)}

    checks = [
        Check("loss.align", lambda: align_loss(batch, 0.9), dict(params)),
        Check("loss.class_uniformity", lambda: class_uniformity_loss(batch.z),
              {f"z{i}": z for i, z in enumerate(batch.z)}),
        Check(
            "loss.instance_uniformity",
            lambda: instance_uniformity_loss(stack_rows(batch.h), stack_rows(centers_src)),
            {**{f"h{i}": h for i, h in enumerate(batch.h)}, **center_params},
        ),
        Check("loss.total", lambda: total_loss(batch, LossConfig())[0], dict(params)),
        Check("loss.baseline_ce", lambda: baseline_ce_loss(batch, 1.3), dict(params)),
        Check("loss.baseline_hinge", lambda: baseline_hinge_loss(batch, 0.5), dict(params)),
    ]
    return checks


def suite(scope: str, seed: int = 0) -> list[Check]:
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    checks: list[Check] = []
    if scope in ("all", "encoder"):
        checks += encoder_checks(seed)
    if scope in ("all", "brl"):
        checks += brl_checks(seed)
    if scope in ("all", "losses"):
        checks += loss_checks(seed)
    return checks
