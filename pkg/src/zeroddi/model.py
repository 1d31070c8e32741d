"""Bundles every learnable tensor and runs the batch forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brl import BrlCache, BrlParams, encode_class_set
from .dataio import DataBundle, DdieSemanticsRecord, Instance, MolecularGraph
from .dua_loss import BatchForward
from .numerics import Tensor
from .pair_encoder import EncoderParams, PairEncoding, encode_pair, glorot, init_encoder, init_mlp


@dataclass
class ModelParams:
    encoder: EncoderParams
    brl: BrlParams
    vocab_size: int

    def named(self) -> dict[str, Tensor]:
        out = self.encoder.tensors("encoder")
        out.update(self.brl.tensors("brl"))
        return out

    @property
    def d_r(self) -> int:
        return self.brl.d_r


def init_model(config, vocab_size: int, seed: int) -> ModelParams:
    """Deterministic Glorot-uniform initialization; rng draws happen in a
    fixed construction order so a seed pins every tensor."""
    rng = np.random.default_rng((seed, 0x1417))
    encoder = init_encoder(
        rng,
        vocab_size=vocab_size,
        d_v=config.d_v,
        d_n=config.d_n,
        d_r=config.d_r,
        n_substructures=config.N,
        gin_rounds=config.gin_layers,
    )
    brl = BrlParams(
        phi1=init_mlp(rng, config.d_t, config.d_r, config.d_r),
        phi2=init_mlp(rng, config.d_t, config.d_r, config.d_r),
        ln_gain=Tensor(np.ones(config.d_r), requires_grad=True),
        ln_bias=Tensor(np.zeros(config.d_r), requires_grad=True),
        # small queries keep the fusion attention diffuse at the start, so
        # it opens as token averaging and learns selectivity from there
        w_q=Tensor(0.1 * glorot(rng, config.d_n, config.d_r), requires_grad=True),
        w_k=Tensor(glorot(rng, config.d_r, config.d_r), requires_grad=True),
        w_v=Tensor(glorot(rng, config.d_r, config.d_r), requires_grad=True),
    )
    return ModelParams(encoder=encoder, brl=brl, vocab_size=vocab_size)


@dataclass
class TrainSet:
    """Training view of a dataset: seen-class records in a fixed order."""

    graphs: dict[str, MolecularGraph]
    records: list[DdieSemanticsRecord]
    instances: list[Instance]
    class_index: dict[str, int]

    @classmethod
    def from_bundle(cls, bundle: DataBundle, train_instances: list[Instance]) -> "TrainSet":
        if bundle.splits is None:
            raise ValueError("dataset has no splits file")
        seen = bundle.splits.seen_classes
        records = [bundle.records[c] for c in seen]
        index = {c: i for i, c in enumerate(seen)}
        for ins in train_instances:
            if ins.ddie_id not in index:
                raise ValueError(f"training instance has non-seen class {ins.ddie_id!r}")
        return cls(
            graphs=bundle.graphs,
            records=records,
            instances=train_instances,
            class_index=index,
        )


def encode_instance(params: ModelParams, graphs, instance: Instance) -> PairEncoding:
    return encode_pair(graphs[instance.drug1_id], graphs[instance.drug2_id], params.encoder)


def batch_forward(
    params: ModelParams,
    train_set: TrainSet,
    batch: list[Instance],
    use_ssf: bool = True,
    include_attributes: bool = True,
    class_subsample: int | None = None,
    subsample_rng: np.random.Generator | None = None,
) -> BatchForward:
    """Encode a batch: pair representations plus per-instance class matrices.

    Token features are shared across the batch via a cache. With class
    subsampling, each instance scores its matched class plus a seeded draw
    of rivals (the class center then ranges over the sampled set).
    """
    cache = BrlCache()
    hs, zs, labels = [], [], []
    n_classes = len(train_set.records)
    for ins in batch:
        pair = encode_instance(params, train_set.graphs, ins)
        y = train_set.class_index[ins.ddie_id]
        if class_subsample is not None and class_subsample + 1 < n_classes:
            if subsample_rng is None:
                raise ValueError("class_subsample needs an rng")
            rivals = [j for j in range(n_classes) if j != y]
            chosen = subsample_rng.choice(len(rivals), size=class_subsample, replace=False)
            cand = sorted([y] + [rivals[int(k)] for k in chosen])
            records = [train_set.records[j] for j in cand]
            label = cand.index(y)
        else:
            records = train_set.records
            label = y
        z = encode_class_set(
            pair, records, params.brl,
            cache=cache, use_ssf=use_ssf, include_attributes=include_attributes,
        )
        hs.append(pair.h)
        zs.append(z)
        labels.append(label)
    return BatchForward(h=hs, z=zs, labels=labels)
