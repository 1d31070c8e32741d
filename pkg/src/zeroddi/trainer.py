"""Adam optimization loop, epoch batching and binary checkpoints.

Training is a pure function of (dataset, config, seed): shuffles are keyed
by (seed, epoch), gradients accumulate in instance order, and the optimizer
runs single-threaded, so reruns are bitwise identical.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .dua_loss import BatchForward, LossConfig, align_loss, baseline_hinge_loss, total_loss
from .model import ModelParams, TrainSet, batch_forward, init_model
from .numerics import NonFiniteError, Tape, Tensor, backward

CHECKPOINT_MAGIC = b"ZDCK"
CHECKPOINT_VERSION = 1

LOSS_KINDS = ("dua", "ce", "hinge")
VARIANTS = ("full", "no-ssf", "no-attr")


class TrainingError(RuntimeError):
    """Optimization aborted; the message names the offending batch."""


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint file."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 128
    tau: float = 0.9
    lambda_: float = 0.7
    seed: int = 0
    class_subsample: int | None = None
    gin_layers: int = 2
    d_v: int = 300
    d_n: int = 300
    d_r: int = 256
    N: int = 30
    d_t: int = 768
    loss: str = "dua"
    variant: str = "full"
    hinge_margin: float = 0.1

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.tau <= 0 or self.lambda_ < 0:
            raise ValueError("tau must be > 0 and lambda >= 0")
        if self.gin_layers < 1:
            raise ValueError("gin_layers must be >= 1")
        for name in ("d_v", "d_n", "d_r", "N", "d_t"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.N % 2 != 0:
            raise ValueError("N (pair substructure count) must be even")
        if self.d_v != self.d_n:
            raise ValueError("sum readout requires d_v == d_n")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.class_subsample is not None and self.class_subsample < 1:
            raise ValueError("class_subsample must be >= 1 when set")
        if self.hinge_margin <= 0:
            raise ValueError("hinge_margin must be positive")


_CONFIG_FILE_KEYS = {  # file key -> dataclass field
    "learning_rate": "learning_rate",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "tau": "tau",
    "lambda": "lambda_",
    "seed": "seed",
    "class_subsample": "class_subsample",
    "gin_layers": "gin_layers",
    "d_v": "d_v",
    "d_n": "d_n",
    "d_r": "d_r",
    "N": "N",
    "d_t": "d_t",
    "loss": "loss",
    "variant": "variant",
    "hinge_margin": "hinge_margin",
}


def parse_config_text(text: str) -> tuple[TrainConfig, set[str]]:
    """Parse ``key = value`` lines; returns the config and the explicitly
    set field names. Blank lines and ``#`` comments are ignored."""
    cfg = TrainConfig()
    explicit: set[str] = set()
    types = {f.name: f.type for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_FILE_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        name = _CONFIG_FILE_KEYS[key]
        if name == "class_subsample" and value.lower() in ("none", ""):
            setattr(cfg, name, None)
        elif name in ("loss", "variant"):
            setattr(cfg, name, value)
        elif name in ("epochs", "batch_size", "seed", "class_subsample",
                      "gin_layers", "d_v", "d_n", "d_r", "N", "d_t"):
            setattr(cfg, name, int(value))
        else:
            setattr(cfg, name, float(value))
        explicit.add(name)
    cfg.validate()
    return cfg, explicit


def config_to_text(cfg: TrainConfig) -> str:
    inverse = {v: k for k, v in _CONFIG_FILE_KEYS.items()}
    lines = []
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = "none"
        lines.append(f"{inverse[f.name]} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, named: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in named.items()},
            v={k: np.zeros_like(p.data) for k, p in named.items()},
            t=0,
        )


ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(named: dict[str, Tensor], grads, state: AdamState, lr: float) -> None:
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in named.items():
        g = grads[p]
        m = state.m[name]
        v = state.v[name]
        m[...] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        norm = float(np.sqrt((update * update).sum()))
        if not np.isfinite(norm):
            raise TrainingError(f"non-finite update for parameter {name!r} at step {state.t}")
        p.data[...] = p.data - update


def _batch_loss(fwd: BatchForward, cfg: TrainConfig) -> tuple[Tensor, dict[str, float]]:
    if cfg.loss == "dua":
        return total_loss(fwd, LossConfig(tau=cfg.tau, lambda_=cfg.lambda_))
    if cfg.loss == "ce":
        loss = align_loss(fwd, cfg.tau)
        mean = loss.item() / fwd.size
        return loss, {"align": mean, "cla": 0.0, "ins": 0.0, "total": mean}
    loss = baseline_hinge_loss(fwd, cfg.hinge_margin)
    return loss, {"align": loss.item(), "cla": 0.0, "ins": 0.0, "total": loss.item()}


def fit(
    train_set: TrainSet,
    config: TrainConfig,
    callbacks: tuple[Callable, ...] = (),
    init: ModelParams | None = None,
    adam: AdamState | None = None,
    start_epoch: int = 0,
) -> tuple[ModelParams, list[dict]]:
    """Run the optimization loop; returns trained params and the history.

    History entries are ``{epoch, align, cla, ins, total, wall_ms}`` with
    instance-weighted epoch means. Passing ``init``/``adam``/``start_epoch``
    resumes a checkpointed run on its exact trajectory.
    """
    config.validate()
    if not train_set.instances:
        raise TrainingError("training set is empty")
    for ins in train_set.instances:
        if ins.ddie_id not in train_set.class_index:
            raise ValueError(f"training instance has non-seen class {ins.ddie_id!r}")
    vocab = 1 + max(max(g.atom_codes) for g in train_set.graphs.values())
    data_d_t = train_set.records[0].d_t
    if config.d_t != data_d_t:
        raise ValueError(f"config d_t={config.d_t} but dataset tokens have width {data_d_t}")
    params = init if init is not None else init_model(config, vocab, config.seed)
    named = params.named()
    state = adam if adam is not None else AdamState.fresh(named)
    watch_list = list(named.values())
    n = len(train_set.instances)
    history: list[dict] = []
    use_ssf = config.variant != "no-ssf"
    include_attr = config.variant != "no-attr"

    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng((config.seed, 0x50F1, epoch)).permutation(n)
        sums = {"align": 0.0, "cla": 0.0, "ins": 0.0, "total": 0.0}
        seen_count = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [train_set.instances[int(i)] for i in idx]
            sub_rng = (
                np.random.default_rng((config.seed, 0x5AB5, epoch, start))
                if config.class_subsample is not None
                else None
            )
            try:
                with Tape() as tape:
                    tape.watch(*watch_list)
                    fwd = batch_forward(
                        params, train_set, batch,
                        use_ssf=use_ssf, include_attributes=include_attr,
                        class_subsample=config.class_subsample, subsample_rng=sub_rng,
                    )
                    loss, comps = _batch_loss(fwd, config)
            except NonFiniteError as e:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch starting {start}: "
                    f"instances {[train_set.instances[int(i)] for i in idx[:4]]}"
                ) from e
            grads = backward(loss, tape)
            adam_step(named, grads, state, config.learning_rate)
            b = len(batch)
            seen_count += b
            for key in sums:
                sums[key] += comps[key] * b
        rec = {
            "epoch": epoch,
            "align": sums["align"] / seen_count,
            "cla": sums["cla"] / seen_count,
            "ins": sums["ins"] / seen_count,
            "total": sums["total"] / seen_count,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        }
        history.append(rec)
        for cb in callbacks:
            cb(epoch, rec, params)
    return params, history


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class CheckpointState:
    params: ModelParams
    adam: AdamState
    config: TrainConfig
    epoch: int


def save_checkpoint(state: CheckpointState, path: str | Path) -> None:
    """Single binary file: magic, version, JSON metadata, then float64
    little-endian buffers in metadata order. save -> load -> save is
    byte-identical."""
    named = state.params.named()
    tensors = []
    buffers = []
    for name, p in named.items():
        tensors.append({"name": name, "shape": list(p.data.shape)})
        buffers.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    for kind, bank in (("m", state.adam.m), ("v", state.adam.v)):
        for name in named:
            buffers.append(np.ascontiguousarray(bank[name], dtype="<f8").tobytes())
    meta = {
        "config": asdict(state.config),
        "epoch": state.epoch,
        "adam_t": state.adam.t,
        "vocab_size": state.params.vocab_size,
        "tensors": tensors,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path: str | Path) -> CheckpointState:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} incompatible with {CHECKPOINT_VERSION}"
        )
    if len(raw) < 12 + meta_len:
        raise CheckpointError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable metadata ({e})") from e
    cfg_dict = dict(meta["config"])
    config = TrainConfig(**cfg_dict)
    shapes = [(t["name"], tuple(t["shape"])) for t in meta["tensors"]]
    sizes = [int(np.prod(s)) if s else 1 for _, s in shapes]
    total = sum(sizes) * 3 * 8
    payload = raw[12 + meta_len:]
    if len(payload) != total:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, metadata declares {total}"
        )
    arrays: list[np.ndarray] = []
    at = 0
    for _ in range(3):
        for (name, shape), size in zip(shapes, sizes):
            arr = np.frombuffer(payload, dtype="<f8", count=size, offset=at).reshape(shape).copy()
            arrays.append(arr)
            at += size * 8
    params = init_model(config, int(meta["vocab_size"]), config.seed)
    named = params.named()
    if [n for n, _ in shapes] != list(named.keys()):
        raise CheckpointError(f"{path}: tensor names do not match this model layout")
    k = len(named)
    for (name, _), arr in zip(shapes, arrays[:k]):
        named[name].data[...] = arr
    adam = AdamState(
        m={name: arr for (name, _), arr in zip(shapes, arrays[k:2 * k])},
        v={name: arr for (name, _), arr in zip(shapes, arrays[2 * k:])},
        t=int(meta["adam_t"]),
    )
    return CheckpointState(params=params, adam=adam, config=config, epoch=int(meta["epoch"]))
