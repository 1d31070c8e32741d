"""Zero-shot prediction, protocol execution and metrics.

CZSL evaluates per fold: the fold's classes are the validation third and
the remaining unseen classes are both candidate set and test population;
metrics average over the three folds. GZSL uses every seen and unseen class
as candidates, scoring held-out seen instances alongside all unseen ones.
Prediction ranks candidates by the dot product between the pair
representation and each class representation, which by default is
conditioned on the query pair's substructures (a pair-independent variant
built from the prototype bank alone sits behind a flag).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .brl import BrlCache, encode_class_set
from .dataio import DataBundle, DdieSemanticsRecord, Instance, SplitSpec, gzsl_holdout
from .model import ModelParams, encode_instance
from .numerics import Tensor
from .pair_encoder import PairEncoding, encode_pair
from .trainer import TrainConfig


@dataclass
class Ranking:
    """Candidate classes for one instance, best first; exact score ties are
    broken toward the smaller class id."""

    instance_id: str
    class_ids: list[str]
    scores: list[float]


@dataclass
class EvalReport:
    mode: str
    metrics: dict
    per_class: dict
    config_hash: str = ""
    checkpoint_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "metrics": self.metrics,
            "per_class": self.per_class,
            "config_hash": self.config_hash,
            "checkpoint_hash": self.checkpoint_hash,
        }


def predict(
    pair: PairEncoding,
    candidate_records: list[DdieSemanticsRecord],
    params: ModelParams,
    instance_id: str = "",
    cache: BrlCache | None = None,
    pair_conditioned: bool = True,
    use_ssf: bool = True,
    include_attributes: bool = True,
) -> Ranking:
    if not candidate_records:
        raise ValueError("candidate set is empty")
    if not pair_conditioned:
        from .numerics import concat_rows

        static_p = concat_rows([params.encoder.q0, params.encoder.q0])
        pair = PairEncoding(
            h=pair.h, p=static_p,
            h_g=pair.h_g, h_g2=pair.h_g2, p_g=pair.p_g, p_g2=pair.p_g2,
        )
    z = encode_class_set(
        pair, candidate_records, params.brl,
        cache=cache, use_ssf=use_ssf, include_attributes=include_attributes,
    )
    scores = z.data @ pair.h.data
    order = sorted(
        range(len(candidate_records)),
        key=lambda j: (-scores[j], candidate_records[j].ddie_id),
    )
    return Ranking(
        instance_id=instance_id,
        class_ids=[candidate_records[j].ddie_id for j in order],
        scores=[float(scores[j]) for j in order],
    )


def topk_accuracy(rankings: list[Ranking], labels: list[str], k: int) -> float:
    """Percent of instances whose true class appears in the first k ranks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not rankings:
        return 0.0
    hits = sum(1 for r, y in zip(rankings, labels) if y in r.class_ids[:k])
    return 100.0 * hits / len(rankings)


def macro_accuracy(rankings: list[Ranking], labels: list[str]) -> float:
    """Unweighted mean over classes of per-class top-1 accuracy, percent."""
    totals: dict[str, int] = {}
    correct: dict[str, int] = {}
    for r, y in zip(rankings, labels):
        totals[y] = totals.get(y, 0) + 1
        if r.class_ids[0] == y:
            correct[y] = correct.get(y, 0) + 1
    if not totals:
        return 0.0
    return 100.0 * sum(correct.get(c, 0) / totals[c] for c in totals) / len(totals)


def harmonic_mean(acc_s: float, acc_u: float) -> float:
    """2ab / (a + b); zero when either side is zero."""
    if acc_s < 0 or acc_u < 0:
        raise ValueError("accuracies must be non-negative")
    if acc_s == 0.0 or acc_u == 0.0:
        return 0.0
    return 2.0 * acc_s * acc_u / (acc_s + acc_u)


def binary_metrics(
    rankings: list[Ranking],
    labels: list[str],
    seen_set: set[str],
) -> dict:
    """Seen/unseen side classification of the top-1 prediction, plus the
    share of side-correct predictions that also pick the exact class."""
    side_total = {"seen": 0, "unseen": 0}
    side_correct = {"seen": 0, "unseen": 0}
    exact = {"seen": 0, "unseen": 0}
    for r, y in zip(rankings, labels):
        side = "seen" if y in seen_set else "unseen"
        pred_side = "seen" if r.class_ids[0] in seen_set else "unseen"
        side_total[side] += 1
        if side == pred_side:
            side_correct[side] += 1
        if r.class_ids[0] == y:
            exact[side] += 1
    out = {}
    for side, key in (("seen", "s"), ("unseen", "u")):
        if side_total[side] == 0:
            out[f"acc_bi_{key}"] = None
            out[f"p_{key}"] = None
            continue
        acc_bi = 100.0 * side_correct[side] / side_total[side]
        acc1 = 100.0 * exact[side] / side_total[side]
        out[f"acc_bi_{key}"] = acc_bi
        out[f"p_{key}"] = 100.0 * acc1 / acc_bi if acc_bi > 0 else None
    return out


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ZERODDI_THREADS", "1")))
    except ValueError:
        return 1


def _rank_instances(
    params: ModelParams,
    bundle: DataBundle,
    instances: list[Instance],
    candidates: list[DdieSemanticsRecord],
    config: TrainConfig,
    pair_conditioned: bool = True,
) -> list[Ranking]:
    """Encode and rank every instance; reduction is index-ordered so the
    thread count never changes the result."""
    use_ssf = config.variant != "no-ssf"
    include_attr = config.variant != "no-attr"
    cache = BrlCache()
    pair_memo: dict[tuple[str, str], PairEncoding] = {}

    def encode(ins: Instance) -> PairEncoding:
        key = (ins.drug1_id, ins.drug2_id)
        got = pair_memo.get(key)
        if got is None:
            got = encode_instance(params, bundle.graphs, ins)
            pair_memo[key] = got
        return got

    def run(item: tuple[int, Instance]) -> Ranking:
        i, ins = item
        return predict(
            encode(ins), candidates, params,
            instance_id=str(i), cache=cache,
            pair_conditioned=pair_conditioned,
            use_ssf=use_ssf, include_attributes=include_attr,
        )

    workers = _worker_count()
    items = list(enumerate(instances))
    if workers == 1:
        return [run(item) for item in items]
    # token features are instance-independent; warm the cache before sharing
    for rec in candidates:
        from .brl import bilevel_tokens

        if rec.ddie_id not in cache.bilevel:
            cache.bilevel[rec.ddie_id] = bilevel_tokens(rec, params.brl, include_attr)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, items))


def _basic_metrics(rankings: list[Ranking], labels: list[str]) -> dict:
    m = {
        "acc_at_1": topk_accuracy(rankings, labels, 1),
        "acc_at_3": topk_accuracy(rankings, labels, 3),
        "acc_at_5": topk_accuracy(rankings, labels, 5),
        "acc_ave": macro_accuracy(rankings, labels),
        "n_instances": len(rankings),
    }
    assert m["acc_at_1"] <= m["acc_at_3"] <= m["acc_at_5"]
    return m


def _per_class_counts(rankings: list[Ranking], labels: list[str]) -> dict:
    out: dict[str, dict] = {}
    for r, y in zip(rankings, labels):
        slot = out.setdefault(y, {"total": 0, "top1_correct": 0, "predicted": {}})
        slot["total"] += 1
        pred = r.class_ids[0]
        slot["predicted"][pred] = slot["predicted"].get(pred, 0) + 1
        if pred == y:
            slot["top1_correct"] += 1
    return out


def czsl_fold_candidates(split: SplitSpec, fold: int) -> list[str]:
    """Test classes of one fold: every unseen class outside the fold."""
    if not 0 <= fold < len(split.folds):
        raise ValueError(f"fold {fold} out of range")
    held = set(split.folds[fold])
    for c in held:
        if c not in set(split.unseen_classes):
            raise ValueError(f"fold references unknown class {c!r}")
    return [c for c in split.unseen_classes if c not in held]


def evaluate_czsl_fold(
    params: ModelParams,
    bundle: DataBundle,
    split: SplitSpec,
    fold: int,
    config: TrainConfig,
    pair_conditioned: bool = True,
) -> dict:
    test_classes = czsl_fold_candidates(split, fold)
    candidates = [bundle.records[c] for c in sorted(test_classes)]
    instances = [ins for ins in bundle.instances if ins.ddie_id in set(test_classes)]
    rankings = _rank_instances(params, bundle, instances, candidates, config, pair_conditioned)
    labels = [ins.ddie_id for ins in instances]
    metrics = _basic_metrics(rankings, labels)
    return {
        "fold": fold,
        "validation_classes": sorted(split.folds[fold]),
        "test_classes": sorted(test_classes),
        "metrics": metrics,
        "per_class": _per_class_counts(rankings, labels),
    }


def evaluate_czsl_full(
    params: ModelParams,
    bundle: DataBundle,
    split: SplitSpec,
    config: TrainConfig,
    pair_conditioned: bool = True,
) -> dict:
    """Degenerate-folds CZSL: candidates are the whole unseen set. Suits
    tiny class counts where two-thirds folds lose meaning."""
    candidates = [bundle.records[c] for c in sorted(split.unseen_classes)]
    unseen = set(split.unseen_classes)
    instances = [ins for ins in bundle.instances if ins.ddie_id in unseen]
    rankings = _rank_instances(params, bundle, instances, candidates, config, pair_conditioned)
    labels = [ins.ddie_id for ins in instances]
    return {
        "metrics": _basic_metrics(rankings, labels),
        "per_class": _per_class_counts(rankings, labels),
    }


def run_protocol(
    params: ModelParams,
    bundle: DataBundle,
    split: SplitSpec,
    mode: str,
    config: TrainConfig,
    fold: int | str = "all",
    pair_conditioned: bool = True,
) -> EvalReport:
    mode = mode.lower()
    if mode == "czsl":
        folds = [fold] if isinstance(fold, int) else [0, 1, 2]
        per_fold = [
            evaluate_czsl_fold(params, bundle, split, f, config, pair_conditioned)
            for f in folds
        ]
        keys = ("acc_at_1", "acc_at_3", "acc_at_5", "acc_ave")
        averaged = {k: sum(f["metrics"][k] for f in per_fold) / len(per_fold) for k in keys}
        per_class: dict = {}
        for f in per_fold:
            for c, counts in f["per_class"].items():
                slot = per_class.setdefault(c, {"total": 0, "top1_correct": 0, "predicted": {}})
                slot["total"] += counts["total"]
                slot["top1_correct"] += counts["top1_correct"]
                for p, n in counts["predicted"].items():
                    slot["predicted"][p] = slot["predicted"].get(p, 0) + n
        return EvalReport(
            mode="czsl",
            metrics={"folds": per_fold, "averaged": averaged},
            per_class=per_class,
        )
    if mode == "gzsl":
        return _run_gzsl(params, bundle, split, config, pair_conditioned)
    raise ValueError(f"unknown mode {mode!r} (expected czsl or gzsl)")


def _run_gzsl(params, bundle, split, config, pair_conditioned) -> EvalReport:
    all_classes = sorted(split.seen_classes) + sorted(split.unseen_classes)
    candidates = [bundle.records[c] for c in all_classes]
    _, eval_side = gzsl_holdout(
        bundle.instances, split, split.gzsl_seen_holdout_fraction, split.seed
    )
    rankings = _rank_instances(params, bundle, eval_side, candidates, config, pair_conditioned)
    labels = [ins.ddie_id for ins in eval_side]
    seen_set = set(split.seen_classes)
    seen_idx = [i for i, y in enumerate(labels) if y in seen_set]
    unseen_idx = [i for i, y in enumerate(labels) if y not in seen_set]
    seen_metrics = _basic_metrics([rankings[i] for i in seen_idx], [labels[i] for i in seen_idx])
    unseen_metrics = _basic_metrics(
        [rankings[i] for i in unseen_idx], [labels[i] for i in unseen_idx]
    )
    metrics = {
        "candidates": len(candidates),
        "seen": seen_metrics,
        "unseen": unseen_metrics,
        "harmonic": {
            "acc_h_at_1": harmonic_mean(seen_metrics["acc_at_1"], unseen_metrics["acc_at_1"]),
            "acc_h_ave": harmonic_mean(seen_metrics["acc_ave"], unseen_metrics["acc_ave"]),
        },
        "binary": binary_metrics(rankings, labels, seen_set),
    }
    bi = metrics["binary"]
    if bi["acc_bi_s"] is not None:
        assert seen_metrics["acc_at_1"] <= bi["acc_bi_s"] + 1e-9
    if bi["acc_bi_u"] is not None:
        assert unseen_metrics["acc_at_1"] <= bi["acc_bi_u"] + 1e-9
    return EvalReport(mode="gzsl", metrics=metrics, per_class=_per_class_counts(rankings, labels))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def uniformity_stats(
    params: ModelParams,
    bundle: DataBundle,
    split: SplitSpec,
    config: TrainConfig,
    sample_size: int = 64,
    seed: int = 0,
) -> dict:
    """Spread diagnostics over seen-class representations conditioned on a
    sample of instances: per-instance coefficient of variation of centered
    class radii, averaged over the sample."""
    seen = set(split.seen_classes)
    pool = [ins for ins in bundle.instances if ins.ddie_id in seen]
    if not pool:
        raise ValueError("no seen-class instances to sample")
    rng = np.random.default_rng((seed, 0xD1A6))
    take = min(sample_size, len(pool))
    chosen = rng.choice(len(pool), size=take, replace=False)
    records = [bundle.records[c] for c in sorted(seen)]
    use_ssf = config.variant != "no-ssf"
    include_attr = config.variant != "no-attr"
    cache = BrlCache()
    cvs, mean_radii = [], []
    for i in chosen:
        ins = pool[int(i)]
        pair = encode_instance(params, bundle.graphs, ins)
        z = encode_class_set(
            pair, records, params.brl,
            cache=cache, use_ssf=use_ssf, include_attributes=include_attr,
        ).data
        center = z.mean(axis=0)
        radii = np.linalg.norm(z - center, axis=1)
        mu = radii.mean()
        cvs.append(radii.std() / mu if mu > 0 else 0.0)
        mean_radii.append(mu)
    return {
        "radius_cv": float(np.mean(cvs)),
        "mean_radius": float(np.mean(mean_radii)),
        "sampled_instances": int(take),
        "n_classes": len(records),
    }


def embedding_coordinates(
    params: ModelParams,
    bundle: DataBundle,
    instances: list[Instance],
    config: TrainConfig,
) -> tuple[np.ndarray, list[str]]:
    """Pair representations projected to 2-D by PCA with a fixed sign
    convention; the numeric stand-in for visual embedding inspection."""
    hs = []
    for ins in instances:
        pair = encode_instance(params, bundle.graphs, ins)
        hs.append(pair.h.data)
    h = np.stack(hs)
    centered = h - h.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    coords = centered @ comps.T
    return coords, [ins.ddie_id for ins in instances]


def select_checkpoint(
    reports: list[tuple[str, ModelParams]],
    bundle: DataBundle,
    split: SplitSpec,
    fold: int,
    config: TrainConfig,
    metric: str = "acc_ave",
) -> str:
    """Pick the candidate whose validation-fold classes score best; the
    fold's own classes act as candidates and population."""
    val_classes = sorted(split.folds[fold])
    candidates = [bundle.records[c] for c in val_classes]
    val_set = set(val_classes)
    instances = [ins for ins in bundle.instances if ins.ddie_id in val_set]
    best_name, best_score = "", -math.inf
    for name, params in reports:
        rankings = _rank_instances(params, bundle, instances, candidates, config)
        labels = [ins.ddie_id for ins in instances]
        score = _basic_metrics(rankings, labels)[metric]
        if score > best_score:
            best_name, best_score = name, score
    return best_name
