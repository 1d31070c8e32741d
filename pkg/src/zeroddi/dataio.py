"""Input artifacts: molecular graphs, token banks, instances, splits.

All on-disk formats are owned here:

* graphs file      - one JSON object per line: drug_id, atom_codes, bonds
* token matrix     - binary: magic ``ZDTK``, u32-le rows, u32-le cols, then
                     rows*cols float32-le values, row-major
* token manifest   - JSON map ddie_id -> {class_file, attr_files: [...]}
* instances file   - TSV: drug1_id, drug2_id, ddie_id
* splits file      - JSON: seen, unseen, folds, gzsl_seen_holdout_fraction, seed

The synthetic generator emits a complete dataset in those formats where each
interaction-event class is a (sign, effect, pattern) attribute triple, drug
graphs carry motifs correlated with the attributes, and unseen classes are
novel recombinations of attributes that do occur in seen classes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

TOKEN_MAGIC = b"ZDTK"


class DataError(Exception):
    """Base for dataset ingestion failures."""


class ParseError(DataError):
    """Malformed content; message names the file and line."""


class FormatError(DataError):
    """Binary container violates its declared layout."""


class ValidationError(DataError):
    """Well-formed record violating a type invariant; names the record."""


class EmptyDatasetError(DataError):
    """An operation left no usable instances."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MolecularGraph:
    """Atoms as categorical codes plus undirected bonds for one drug."""

    drug_id: str
    atom_codes: tuple[int, ...]
    bonds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.atom_codes) < 1:
            raise ValidationError(f"graph {self.drug_id!r}: needs at least one atom")
        if any(c < 0 for c in self.atom_codes):
            raise ValidationError(f"graph {self.drug_id!r}: negative atom code")
        n = len(self.atom_codes)
        seen = set()
        for u, v in self.bonds:
            if not (0 <= u < n and 0 <= v < n):
                raise ValidationError(
                    f"graph {self.drug_id!r}: bond ({u},{v}) outside {n} atoms"
                )
            if u == v:
                raise ValidationError(f"graph {self.drug_id!r}: self-loop at {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValidationError(f"graph {self.drug_id!r}: duplicate bond {key}")
            seen.add(key)

    @property
    def n_atoms(self) -> int:
        return len(self.atom_codes)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_atoms, self.n_atoms))
        for u, v in self.bonds:
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a


@dataclass(frozen=True)
class DdieSemanticsRecord:
    """Class-level and attribute-level token matrices for one event class."""

    ddie_id: str
    class_tokens: np.ndarray  # M x d_t
    attr_tokens: np.ndarray   # L x d_t, all effect descriptions stacked

    def __post_init__(self):
        for name, mat in (("class_tokens", self.class_tokens), ("attr_tokens", self.attr_tokens)):
            if mat.ndim != 2 or mat.shape[0] < 1:
                raise ValidationError(f"record {self.ddie_id!r}: {name} needs >=1 row")
        if self.class_tokens.shape[1] != self.attr_tokens.shape[1]:
            raise ValidationError(
                f"record {self.ddie_id!r}: class/attr token widths differ"
            )

    @property
    def d_t(self) -> int:
        return self.class_tokens.shape[1]


class Instance(NamedTuple):
    drug1_id: str
    drug2_id: str
    ddie_id: str


@dataclass
class SplitSpec:
    seen_classes: list[str]
    unseen_classes: list[str]
    folds: list[list[str]]
    gzsl_seen_holdout_fraction: float
    seed: int

    def validate(self) -> None:
        if set(self.seen_classes) & set(self.unseen_classes):
            raise ValidationError("seen and unseen classes overlap")
        flat = [c for f in self.folds for c in f]
        if len(self.folds) != 3 or sorted(flat) != sorted(self.unseen_classes):
            raise ValidationError("folds must partition the unseen classes into 3 parts")
        if not 0.0 < self.gzsl_seen_holdout_fraction < 1.0:
            raise ValidationError("gzsl_seen_holdout_fraction must lie in (0, 1)")


@dataclass
class DataBundle:
    """A fully loaded dataset directory."""

    graphs: dict[str, MolecularGraph]
    records: dict[str, DdieSemanticsRecord]
    instances: list[Instance]
    splits: SplitSpec | None = None

    @property
    def d_t(self) -> int:
        rec = next(iter(self.records.values()))
        return rec.d_t

    @property
    def vocab_size(self) -> int:
        return 1 + max(max(g.atom_codes) for g in self.graphs.values())


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


def write_graphs(path: str | Path, graphs: Iterable[MolecularGraph]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            rec = {
                "drug_id": g.drug_id,
                "atom_codes": list(g.atom_codes),
                "bonds": [list(b) for b in g.bonds],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_graphs(path: str | Path) -> dict[str, MolecularGraph]:
    out: dict[str, MolecularGraph] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                g = MolecularGraph(
                    drug_id=str(rec["drug_id"]),
                    atom_codes=tuple(int(c) for c in rec["atom_codes"]),
                    bonds=tuple((int(u), int(v)) for u, v in rec["bonds"]),
                )
            except ValidationError:
                raise
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise ParseError(f"{path}:{lineno}: bad graph record ({e})") from e
            if g.drug_id in out:
                raise ValidationError(f"{path}:{lineno}: duplicate drug_id {g.drug_id!r}")
            out[g.drug_id] = g
    return out


# ---------------------------------------------------------------------------
# token bank
# ---------------------------------------------------------------------------


def write_token_matrix(path: str | Path, mat: np.ndarray) -> None:
    arr = np.ascontiguousarray(mat, dtype=np.float32)
    if arr.ndim != 2:
        raise ValidationError("token matrices are 2-d")
    with open(path, "wb") as fh:
        fh.write(TOKEN_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_token_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != TOKEN_MAGIC:
        raise FormatError(f"{path}: not a token-matrix file (bad magic)")
    rows, cols = struct.unpack("<II", raw[4:12])
    expect = 12 + rows * cols * 4
    if len(raw) != expect:
        raise FormatError(
            f"{path}: declared {rows}x{cols} needs {expect} bytes, file has {len(raw)}"
        )
    if rows == 0 or cols == 0:
        raise FormatError(f"{path}: zero-sized token matrix")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols).copy()


def write_token_bank(
    directory: str | Path,
    class_mats: dict[str, np.ndarray],
    attr_mats: dict[str, list[np.ndarray]],
    manifest_name: str = "token_manifest.json",
) -> Path:
    """Writes per-record matrix files plus the manifest; returns manifest path."""
    directory = Path(directory)
    tokens_dir = directory / "tokens"
    tokens_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, dict] = {}
    for ddie_id in sorted(class_mats):
        cls_rel = f"tokens/{ddie_id}.cls.zdtk"
        write_token_matrix(directory / cls_rel, class_mats[ddie_id])
        attr_rels = []
        for i, mat in enumerate(attr_mats[ddie_id]):
            rel = f"tokens/{ddie_id}.attr{i}.zdtk"
            write_token_matrix(directory / rel, mat)
            attr_rels.append(rel)
        manifest[ddie_id] = {"class_file": cls_rel, "attr_files": attr_rels}
    mpath = directory / manifest_name
    mpath.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return mpath


def load_token_bank(manifest_path: str | Path) -> dict[str, DdieSemanticsRecord]:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{manifest_path}: bad manifest ({e})") from e
    base = manifest_path.parent
    out: dict[str, DdieSemanticsRecord] = {}
    d_t: int | None = None
    for ddie_id in sorted(manifest):
        entry = manifest[ddie_id]
        try:
            cls_file = entry["class_file"]
            attr_files = entry["attr_files"]
        except (KeyError, TypeError) as e:
            raise ParseError(f"{manifest_path}: record {ddie_id!r} missing keys") from e
        if not attr_files:
            raise ValidationError(f"record {ddie_id!r}: needs at least one attr file")
        cls = read_token_matrix(base / cls_file).astype(np.float64)
        attrs = [read_token_matrix(base / f).astype(np.float64) for f in attr_files]
        widths = {cls.shape[1]} | {a.shape[1] for a in attrs}
        if len(widths) != 1:
            raise ValidationError(f"record {ddie_id!r}: inconsistent token width")
        if d_t is None:
            d_t = cls.shape[1]
        elif cls.shape[1] != d_t:
            raise ValidationError(
                f"record {ddie_id!r}: token width {cls.shape[1]} != bank width {d_t}"
            )
        out[ddie_id] = DdieSemanticsRecord(
            ddie_id=ddie_id,
            class_tokens=cls,
            attr_tokens=np.concatenate(attrs, axis=0),
        )
    if not out:
        raise EmptyDatasetError(f"{manifest_path}: empty token bank")
    return out


# ---------------------------------------------------------------------------
# instances and splits
# ---------------------------------------------------------------------------


def write_instances(path: str | Path, instances: Iterable[Instance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ins in instances:
            fh.write(f"{ins.drug1_id}\t{ins.drug2_id}\t{ins.ddie_id}\n")


def load_instances(
    path: str | Path,
    graphs: dict[str, MolecularGraph] | None = None,
    records: dict[str, DdieSemanticsRecord] | None = None,
) -> list[Instance]:
    out: list[Instance] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            ins = Instance(*parts)
            if graphs is not None:
                for d in (ins.drug1_id, ins.drug2_id):
                    if d not in graphs:
                        raise ValidationError(f"{path}:{lineno}: unknown drug {d!r}")
            if records is not None and ins.ddie_id not in records:
                raise ValidationError(f"{path}:{lineno}: unknown class {ins.ddie_id!r}")
            out.append(ins)
    return out


def write_splits(path: str | Path, split: SplitSpec) -> None:
    obj = {
        "seen": split.seen_classes,
        "unseen": split.unseen_classes,
        "folds": split.folds,
        "gzsl_seen_holdout_fraction": split.gzsl_seen_holdout_fraction,
        "seed": split.seed,
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_splits(path: str | Path) -> SplitSpec:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        split = SplitSpec(
            seen_classes=list(obj["seen"]),
            unseen_classes=list(obj["unseen"]),
            folds=[list(f) for f in obj["folds"]],
            gzsl_seen_holdout_fraction=float(obj["gzsl_seen_holdout_fraction"]),
            seed=int(obj["seed"]),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise ParseError(f"{path}: bad splits file ({e})") from e
    split.validate()
    return split


def class_counts(instances: Iterable[Instance]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for ins in instances:
        counts[ins.ddie_id] = counts.get(ins.ddie_id, 0) + 1
    return counts


def resample_imbalance(
    instances: list[Instance],
    rho_target: float,
    min_count: int = 10,
    seed: int = 0,
) -> list[Instance]:
    """Drop classes below min_count, then cap the rest at rho * smallest.

    Sampling within a class is uniform without replacement, seeded; the
    surviving instances keep their original file order.
    """
    if rho_target < 1:
        raise ValueError("rho_target must be >= 1")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = class_counts(instances)
    survivors = {c for c, n in counts.items() if n >= min_count}
    if not survivors:
        raise EmptyDatasetError(f"no class reaches min_count={min_count}")
    min_observed = min(counts[c] for c in survivors)
    cap = int(rho_target * min_observed)
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    by_class: dict[str, list[int]] = {}
    for i, ins in enumerate(instances):
        if ins.ddie_id in survivors:
            by_class.setdefault(ins.ddie_id, []).append(i)
    for c in sorted(by_class):
        idx = by_class[c]
        if len(idx) > cap:
            chosen = rng.choice(len(idx), size=cap, replace=False)
            keep.update(idx[k] for k in chosen)
        else:
            keep.update(idx)
    return [ins for i, ins in enumerate(instances) if i in keep]


def make_splits(
    counts: dict[str, int],
    n_unseen: int,
    seed: int,
    gzsl_seen_holdout_fraction: float = 0.1,
) -> SplitSpec:
    """Rank classes by frequency; the n_unseen rarest become unseen.

    Count ties rank the lexicographically smaller id first (treated as more
    frequent). Unseen classes are shuffled with the seed and cut into three
    folds whose sizes differ by at most one.
    """
    if n_unseen <= 0:
        raise ValueError("n_unseen must be positive")
    if n_unseen >= len(counts):
        raise ValueError(f"n_unseen={n_unseen} must be < {len(counts)} classes")
    ranked = sorted(counts, key=lambda c: (-counts[c], c))
    seen = sorted(ranked[: len(ranked) - n_unseen])
    unseen = sorted(ranked[len(ranked) - n_unseen:])
    shuffled = list(unseen)
    np.random.default_rng(seed).shuffle(shuffled)
    base, extra = divmod(n_unseen, 3)
    sizes = [base + (1 if i < extra else 0) for i in range(3)]
    folds, at = [], 0
    for s in sizes:
        folds.append(sorted(shuffled[at:at + s]))
        at += s
    split = SplitSpec(
        seen_classes=seen,
        unseen_classes=unseen,
        folds=folds,
        gzsl_seen_holdout_fraction=gzsl_seen_holdout_fraction,
        seed=seed,
    )
    split.validate()
    return split


def gzsl_holdout(
    instances: list[Instance],
    split: SplitSpec,
    fraction: float,
    seed: int,
) -> tuple[list[Instance], list[Instance]]:
    """Move ceil(fraction * count) instances of every seen class to the
    evaluation side; unseen-class instances always land there. Train and
    eval are disjoint by construction."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    seen = set(split.seen_classes)
    unseen = set(split.unseen_classes)
    by_class: dict[str, list[int]] = {}
    for i, ins in enumerate(instances):
        by_class.setdefault(ins.ddie_id, []).append(i)
    rng = np.random.default_rng((seed, 0xA11CE))
    held: set[int] = set()
    for c in sorted(by_class):
        idx = by_class[c]
        if c in unseen:
            held.update(idx)
        elif c in seen:
            k = math.ceil(fraction * len(idx))
            chosen = rng.choice(len(idx), size=k, replace=False)
            held.update(idx[j] for j in chosen)
        else:
            raise ValidationError(f"instance class {c!r} absent from the split")
    train = [ins for i, ins in enumerate(instances) if i not in held]
    eval_side = [ins for i, ins in enumerate(instances) if i in held]
    return train, eval_side


def load_dataset(directory: str | Path) -> DataBundle:
    """Load and cross-validate a dataset directory."""
    directory = Path(directory)
    graphs = load_graphs(directory / "graphs.jsonl")
    records = load_token_bank(directory / "token_manifest.json")
    instances = load_instances(directory / "instances.tsv", graphs, records)
    splits_path = directory / "splits.json"
    splits = load_splits(splits_path) if splits_path.exists() else None
    if splits is not None:
        known = set(records)
        for c in splits.seen_classes + splits.unseen_classes:
            if c not in known:
                raise ValidationError(f"split references unknown class {c!r}")
    return DataBundle(graphs=graphs, records=records, instances=instances, splits=splits)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

N_SIGNS = 2
N_PATTERNS = 3
_FILLER_CODES = 4
_BACKBONE_MIN, _BACKBONE_MAX = 3, 5


@dataclass
class SynthConfig:
    n_seen: int = 12
    n_unseen: int = 4
    n_effects: int = 4
    d_t: int = 32
    instances_per_class: int = 60  # mean class size; the profile is geometric
    rho: float = 10.0
    seed: int = 0
    gzsl_seen_holdout_fraction: float = 0.1
    token_noise: float = 0.05
    proto_scale: float = 2.0


def _attribute_triples(cfg: SynthConfig, rng: np.random.Generator):
    """Pick seen triples first, then unseen triples whose every attribute
    value already occurs among the seen ones."""
    total = cfg.n_seen + cfg.n_unseen
    universe = [
        (s, e, p)
        for s in range(N_SIGNS)
        for e in range(cfg.n_effects)
        for p in range(N_PATTERNS)
    ]
    if total > len(universe):
        raise ValueError(
            f"{total} classes exceed the {len(universe)} possible attribute triples"
        )
    for _ in range(200):
        order = list(universe)
        rng.shuffle(order)
        seen = order[: cfg.n_seen]
        signs = {s for s, _, _ in seen}
        effects = {e for _, e, _ in seen}
        patterns = {p for _, _, p in seen}
        candidates = [
            t for t in order[cfg.n_seen:]
            if t[0] in signs and t[1] in effects and t[2] in patterns
        ]
        if len(candidates) >= cfg.n_unseen:
            return seen, candidates[: cfg.n_unseen]
    raise ValueError(
        "could not compose unseen classes from seen attributes; "
        "increase n_seen or reduce n_unseen"
    )


def _class_sizes(cfg: SynthConfig) -> list[int]:
    """Descending geometric profile with mean ~instances_per_class and an
    exact max/min ratio of rho (after rounding)."""
    n = cfg.n_seen + cfg.n_unseen
    if cfg.rho < 1:
        raise ValueError("rho must be >= 1")
    if n == 1 or cfg.rho == 1:
        return [max(2, cfg.instances_per_class)] * n
    q = cfg.rho ** (-1.0 / (n - 1))
    a = cfg.instances_per_class * n * (1 - q) / (1 - q**n)
    sizes = [max(2, round(a * q**c)) for c in range(n)]
    sizes[-1] = max(2, sizes[-1])
    sizes[0] = max(sizes[1] if n > 1 else 2, round(sizes[-1] * cfg.rho))
    for i in range(1, n):
        sizes[i] = min(sizes[i], sizes[i - 1])
    # strict drop at the seen/unseen boundary so ranking recovers the intent
    b = cfg.n_seen
    if 0 < b < n and sizes[b] >= sizes[b - 1]:
        for i in range(b, n):
            sizes[i] = max(2, sizes[b - 1] - 1 - (i - b) // max(1, n - b))
    return sizes


def _vocab_layout(n_effects: int):
    effect0 = _FILLER_CODES
    sign0 = effect0 + n_effects
    pattern0 = sign0 + N_SIGNS
    vocab = pattern0 + N_PATTERNS
    return effect0, sign0, pattern0, vocab


def _make_drug(
    drug_id: str,
    motif_codes: tuple[int, ...],
    rng: np.random.Generator,
) -> MolecularGraph:
    """Random filler backbone path plus one triangle per motif code."""
    backbone = int(rng.integers(_BACKBONE_MIN, _BACKBONE_MAX + 1))
    codes = [int(rng.integers(0, _FILLER_CODES)) for _ in range(backbone)]
    bonds = [(i, i + 1) for i in range(backbone - 1)]
    for code in motif_codes:
        base = len(codes)
        codes.extend([code, code, code])
        bonds.extend([(base, base + 1), (base + 1, base + 2), (base, base + 2)])
        bonds.append((0, base))
    return MolecularGraph(drug_id=drug_id, atom_codes=tuple(codes), bonds=tuple(bonds))


def synth_generate(out_dir: str | Path, cfg: SynthConfig | None = None) -> dict:
    """Emit a complete synthetic dataset; byte-identical for a fixed seed."""
    cfg = cfg or SynthConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    seen_triples, unseen_triples = _attribute_triples(cfg, rng)
    triples = seen_triples + unseen_triples
    sizes = _class_sizes(cfg)
    ddie_ids = [f"ddie{i:03d}" for i in range(len(triples))]

    def proto() -> np.ndarray:
        v = rng.normal(size=cfg.d_t)
        return cfg.proto_scale * v / np.linalg.norm(v)

    sign_protos = [proto() for _ in range(N_SIGNS)]
    effect_protos = [proto() for _ in range(cfg.n_effects)]
    pattern_protos = [proto() for _ in range(N_PATTERNS)]
    # template words are shared across classes (tied to the sentence
    # pattern) so class identity stays a pure attribute composition
    template_protos = [proto() for _ in range(N_PATTERNS)]
    universal_proto = proto()

    class_mats: dict[str, np.ndarray] = {}
    attr_mats: dict[str, list[np.ndarray]] = {}
    for ci, (ddie_id, (s, e, p)) in enumerate(zip(ddie_ids, triples)):
        rows = [pattern_protos[p], sign_protos[s], effect_protos[e], template_protos[p]]
        rows += [universal_proto] * (1 + ci % 2)
        mat = np.stack(rows) + cfg.token_noise * rng.normal(size=(len(rows), cfg.d_t))
        class_mats[ddie_id] = mat.astype(np.float32)
        n_files = 1 + ci % 2
        files = []
        for _ in range(n_files):
            l_rows = 2
            amat = np.stack([effect_protos[e]] * l_rows)
            amat = amat + cfg.token_noise * rng.normal(size=(l_rows, cfg.d_t))
            files.append(amat.astype(np.float32))
        attr_mats[ddie_id] = files

    effect0, sign0, pattern0, vocab = _vocab_layout(cfg.n_effects)
    graphs: list[MolecularGraph] = []
    instances: list[Instance] = []
    drug_no = 0
    for ddie_id, (s, e, p), size in zip(ddie_ids, triples, sizes):
        for _ in range(size):
            d1 = f"drug{drug_no:05d}"
            drug_no += 1
            d2 = f"drug{drug_no:05d}"
            drug_no += 1
            graphs.append(_make_drug(d1, (effect0 + e, sign0 + s), rng))
            graphs.append(_make_drug(d2, (effect0 + e, pattern0 + p), rng))
            instances.append(Instance(d1, d2, ddie_id))

    counts = class_counts(instances)
    split = make_splits(
        counts, cfg.n_unseen, cfg.seed,
        gzsl_seen_holdout_fraction=cfg.gzsl_seen_holdout_fraction,
    )
    intended_unseen = sorted(ddie_ids[cfg.n_seen:])
    if split.unseen_classes != intended_unseen:
        raise AssertionError("generated sizes failed to isolate the unseen classes")

    write_graphs(out_dir / "graphs.jsonl", graphs)
    write_token_bank(out_dir, class_mats, attr_mats)
    write_instances(out_dir / "instances.tsv", instances)
    write_splits(out_dir / "splits.json", split)
    summary = {
        "seed": cfg.seed,
        "n_seen": cfg.n_seen,
        "n_unseen": cfg.n_unseen,
        "n_effects": cfg.n_effects,
        "d_t": cfg.d_t,
        "instances_per_class": cfg.instances_per_class,
        "rho": cfg.rho,
        "gzsl_seen_holdout_fraction": cfg.gzsl_seen_holdout_fraction,
        "token_noise": cfg.token_noise,
        "proto_scale": cfg.proto_scale,
        "classes": {
            d: {"sign": s, "effect": e, "pattern": p, "count": counts[d]}
            for d, (s, e, p) in zip(ddie_ids, triples)
        },
        "n_instances": len(instances),
        "n_drugs": len(graphs),
        "vocab_size": vocab,
    }
    (out_dir / "dataset_manifest.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return summary
