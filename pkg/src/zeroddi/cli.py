"""Command-line front door: synth, prepare, train, eval, resample,
gradcheck and inspect-attention.

Every successful run writes a manifest (inputs hashed, outputs hashed,
seed, wall time) into its output directory, guarded by a lock file against
concurrent writers. Exit codes: 0 success, 1 runtime failure, 2 usage,
3 validation failure; failures print one machine-readable line
``error category=<cat> message="..."`` to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .brl import attention_map, bilevel_tokens
from .dataio import (
    DataError,
    SynthConfig,
    class_counts,
    gzsl_holdout,
    load_dataset,
    load_instances,
    resample_imbalance,
    synth_generate,
    write_instances,
)
from .evalkit import (
    EvalReport,
    embedding_coordinates,
    run_protocol,
    uniformity_stats,
)
from .model import TrainSet, encode_instance, init_model
from .numerics import ShapeError, grad_check
from .gradcheck_suites import SCOPES, suite
from .trainer import (
    AdamState,
    CheckpointError,
    CheckpointState,
    TrainConfig,
    TrainingError,
    fit,
    load_checkpoint,
    parse_config_text,
    save_checkpoint,
    write_history,
)

LOCK_NAME = ".zeroddi.lock"


class UsageError(ValueError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(root: Path) -> dict[str, str]:
    out = {}
    if root.is_file():
        return {root.name: _sha256(root)}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != LOCK_NAME:
            out[p.relative_to(root).as_posix()] = _sha256(p)
    return out


class _RunDir:
    """Creates the output directory, holds the lock, writes the manifest."""

    def __init__(self, out: str | Path, command: str, argv: list[str], seed: int | None):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.argv = argv
        self.seed = seed
        self.inputs: dict[str, dict[str, str]] = {}
        self.t0 = time.perf_counter()
        self.lock = self.dir / LOCK_NAME
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise TrainingError(
                f"{self.dir}: already locked by another run (remove {LOCK_NAME} if stale)"
            )

    def add_input(self, label: str, path: str | Path) -> None:
        self.inputs[label] = _hash_tree(Path(path))

    def finish(self) -> None:
        outputs = {
            rel: digest
            for rel, digest in _hash_tree(self.dir).items()
            if rel != "manifest.json"
        }
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "seed": self.seed,
            "input_hashes": self.inputs,
            "output_paths": sorted(outputs),
            "output_hashes": outputs,
            "wall_ms": (time.perf_counter() - self.t0) * 1e3,
        }
        (self.dir / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    def release(self) -> None:
        try:
            self.lock.unlink()
        except FileNotFoundError:
            pass


def _load_train_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        cfg, explicit = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg, explicit = TrainConfig(), set()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "lambda_", None) is not None:
        cfg.lambda_ = args.lambda_
    if getattr(args, "tau", None) is not None:
        cfg.tau = args.tau
    if getattr(args, "loss", None) is not None:
        cfg.loss = args.loss
    if getattr(args, "variant", None) is not None:
        cfg.variant = args.variant
    cfg._explicit = explicit  # type: ignore[attr-defined]
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    run = _RunDir(args.out, "synth", args.argv, args.seed)
    try:
        cfg = SynthConfig(
            n_seen=args.n_seen,
            n_unseen=args.n_unseen,
            n_effects=args.n_effects,
            d_t=args.d_t,
            instances_per_class=args.instances_per_class,
            rho=args.rho,
            seed=args.seed,
            gzsl_seen_holdout_fraction=args.holdout_fraction,
        )
        summary = synth_generate(run.dir, cfg)
        print(
            f"synth: {summary['n_instances']} instances, "
            f"{summary['n_seen']}+{summary['n_unseen']} classes -> {run.dir}"
        )
        run.finish()
        return 0
    finally:
        run.release()


def cmd_prepare(args) -> int:
    run = _RunDir(args.out, "prepare", args.argv, None)
    try:
        run.add_input("data", Path(args.data))
        bundle = load_dataset(args.data)
        counts = class_counts(bundle.instances)
        report = {
            "n_graphs": len(bundle.graphs),
            "n_records": len(bundle.records),
            "n_instances": len(bundle.instances),
            "n_classes": len(counts),
            "d_t": bundle.d_t,
            "vocab_size": bundle.vocab_size,
            "max_class_count": max(counts.values()),
            "min_class_count": min(counts.values()),
            "has_splits": bundle.splits is not None,
        }
        if bundle.splits:
            report["n_seen"] = len(bundle.splits.seen_classes)
            report["n_unseen"] = len(bundle.splits.unseen_classes)
        (run.dir / "prepare_report.json").write_text(
            json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
        print(f"prepare: dataset at {args.data} is valid ({report['n_instances']} instances)")
        run.finish()
        return 0
    finally:
        run.release()


def cmd_resample(args) -> int:
    run = _RunDir(args.out, "resample", args.argv, args.seed)
    try:
        run.add_input("instances", Path(args.instances))
        instances = load_instances(args.instances)
        resampled = resample_imbalance(
            instances, rho_target=args.rho, min_count=args.min_count, seed=args.seed
        )
        write_instances(run.dir / "instances.tsv", resampled)
        counts = class_counts(resampled)
        print(
            f"resample: {len(instances)} -> {len(resampled)} instances, "
            f"ratio {max(counts.values()) / min(counts.values()):.1f}"
        )
        run.finish()
        return 0
    finally:
        run.release()


def cmd_train(args) -> int:
    run = _RunDir(args.out, "train", args.argv, None)
    try:
        cfg = _load_train_config(args)
        run.seed = cfg.seed
        run.add_input("data", Path(args.data))
        if args.config:
            run.add_input("config", Path(args.config))
        bundle = load_dataset(args.data)
        if bundle.splits is None:
            raise DataError(f"{args.data}: train needs a splits.json")
        if "d_t" not in getattr(cfg, "_explicit", set()):
            cfg.d_t = bundle.d_t
        cfg.validate()
        train_instances, _ = gzsl_holdout(
            bundle.instances, bundle.splits,
            bundle.splits.gzsl_seen_holdout_fraction, bundle.splits.seed,
        )
        train_set = TrainSet.from_bundle(bundle, train_instances)
        params = init_model(cfg, bundle.vocab_size, cfg.seed)
        adam = AdamState.fresh(params.named())
        params, history = fit(train_set, cfg, init=params, adam=adam)
        state = CheckpointState(params=params, adam=adam, config=cfg, epoch=cfg.epochs)
        save_checkpoint(state, run.dir / "checkpoint.bin")
        write_history(run.dir / "history.jsonl", history)
        if args.plots:
            from .plots import save_history_plot

            save_history_plot(history, run.dir / "history.png")
        print(
            f"train: {cfg.epochs} epochs over {len(train_instances)} instances, "
            f"final total {history[-1]['total']:.4f} -> {run.dir / 'checkpoint.bin'}"
        )
        run.finish()
        return 0
    finally:
        run.release()


def cmd_eval(args) -> int:
    run = _RunDir(args.out, "eval", args.argv, None)
    try:
        run.add_input("data", Path(args.data))
        run.add_input("checkpoint", Path(args.checkpoint))
        state = load_checkpoint(args.checkpoint)
        run.seed = state.config.seed
        bundle = load_dataset(args.data)
        if bundle.splits is None:
            raise DataError(f"{args.data}: eval needs a splits.json")
        fold = "all" if args.fold == "all" else int(args.fold)
        report = run_protocol(
            state.params, bundle, bundle.splits, args.mode, state.config,
            fold=fold, pair_conditioned=not args.pair_independent,
        )
        report.checkpoint_hash = _sha256(Path(args.checkpoint))
        report.config_hash = hashlib.sha256(
            json.dumps(
                state.config.__dict__, sort_keys=True, default=str
            ).encode("utf-8")
        ).hexdigest()
        report_path = run.dir / "report.json"
        report_path.write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
        if args.dump_predictions:
            _dump_predictions(run.dir / "predictions.tsv", state, bundle, args.mode)
        if args.plots:
            _eval_plots(run.dir, state, bundle, report)
        _print_eval_summary(report)
        run.finish()
        return 0
    finally:
        run.release()


def _dump_predictions(path: Path, state: CheckpointState, bundle, mode: str) -> None:
    from .evalkit import predict
    from .brl import BrlCache

    split = bundle.splits
    if mode == "czsl":
        classes = sorted(split.unseen_classes)
    else:
        classes = sorted(split.seen_classes) + sorted(split.unseen_classes)
    candidates = [bundle.records[c] for c in classes]
    wanted = set(classes)
    cache = BrlCache()
    use_ssf = state.config.variant != "no-ssf"
    include_attr = state.config.variant != "no-attr"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, ins in enumerate(bundle.instances):
            if ins.ddie_id not in wanted:
                continue
            pair = encode_instance(state.params, bundle.graphs, ins)
            r = predict(
                pair, candidates, state.params, instance_id=str(i), cache=cache,
                use_ssf=use_ssf, include_attributes=include_attr,
            )
            top = "\t".join(
                f"{c}\t{s:.6f}" for c, s in zip(r.class_ids[:5], r.scores[:5])
            )
            fh.write(f"{i}\t{ins.ddie_id}\t{top}\n")


def _eval_plots(out_dir: Path, state: CheckpointState, bundle, report: EvalReport) -> None:
    from .plots import save_embedding_scatter, save_metric_bars

    split = bundle.splits
    unseen = set(split.unseen_classes)
    instances = [ins for ins in bundle.instances if ins.ddie_id in unseen]
    if instances:
        coords, labels = embedding_coordinates(
            state.params, bundle, instances, state.config
        )
        with open(out_dir / "embedding_2d.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for i, (xy, y) in enumerate(zip(coords, labels)):
                fh.write(f"{i}\t{y}\t{xy[0]:.6f}\t{xy[1]:.6f}\n")
        save_embedding_scatter(coords, labels, out_dir / "embedding_2d.png")
    flat: dict[str, float] = {}
    if report.mode == "czsl":
        flat = dict(report.metrics["averaged"])
    else:
        for side in ("seen", "unseen"):
            for k in ("acc_at_1", "acc_ave"):
                flat[f"{side}.{k}"] = report.metrics[side][k]
        flat.update(report.metrics["harmonic"])
    save_metric_bars(flat, out_dir / "metrics.png", title=f"{report.mode} metrics")


def _print_eval_summary(report: EvalReport) -> None:
    if report.mode == "czsl":
        a = report.metrics["averaged"]
        print(
            "eval czsl: acc@1 {acc_at_1:.2f} acc@3 {acc_at_3:.2f} "
            "acc@5 {acc_at_5:.2f} acc_ave {acc_ave:.2f}".format(**a)
        )
    else:
        m = report.metrics
        print(
            f"eval gzsl: seen acc@1 {m['seen']['acc_at_1']:.2f} "
            f"unseen acc@1 {m['unseen']['acc_at_1']:.2f} "
            f"accH@1 {m['harmonic']['acc_h_at_1']:.2f} "
            f"accH_ave {m['harmonic']['acc_h_ave']:.2f}"
        )


def cmd_gradcheck(args) -> int:
    run = _RunDir(args.out, "gradcheck", args.argv, args.seed)
    try:
        checks = suite(args.scope, seed=args.seed)
        corrupt = os.environ.get("ZERODDI_GRADCHECK_CORRUPT") == "1"
        results = []
        ok = True
        for check in checks:
            report = grad_check(check.f, check.params, h=1e-5, tol=args.tol)
            err = report.max_rel_err
            if corrupt:
                err += 1.0  # test hook: force a failure downstream
            passed = err <= args.tol
            ok &= passed
            results.append({"component": check.name, "max_rel_err": err, "passed": passed})
            print(f"gradcheck {check.name}: max rel err {err:.3e} "
                  f"{'ok' if passed else 'FAIL'}")
        (run.dir / "gradcheck.json").write_text(
            json.dumps({"tol": args.tol, "results": results}, sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )
        run.finish()
        if not ok:
            worst = max(results, key=lambda r: r["max_rel_err"])
            print(
                f"error category=gradcheck message=\"worst offender "
                f"{worst['component']} at {worst['max_rel_err']:.3e}\"",
                file=sys.stderr,
            )
            return 1
        return 0
    finally:
        run.release()


def cmd_inspect_attention(args) -> int:
    run = _RunDir(args.out, "inspect-attention", args.argv, None)
    try:
        run.add_input("data", Path(args.data))
        run.add_input("checkpoint", Path(args.checkpoint))
        state = load_checkpoint(args.checkpoint)
        bundle = load_dataset(args.data)
        if not 0 <= args.instance < len(bundle.instances):
            raise DataError(f"instance index {args.instance} outside the instances file")
        ins = bundle.instances[args.instance]
        ddie_ids = [args.ddie] if args.ddie else sorted(bundle.records)
        for d in ddie_ids:
            if d not in bundle.records:
                raise DataError(f"unknown class {d!r}")
        pair = encode_instance(state.params, bundle.graphs, ins)
        include_attr = state.config.variant != "no-attr"
        out_path = run.dir / "attention.tsv"
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("instance_id\tddie_id\ttoken_index\tsubstructure_index\tattention\n")
            for d in ddie_ids:
                t = bilevel_tokens(bundle.records[d], state.params.brl, include_attr)
                a = attention_map(t, pair.p, state.params.brl).data
                for s_idx in range(a.shape[0]):
                    for t_idx in range(a.shape[1]):
                        fh.write(
                            f"{args.instance}\t{d}\t{t_idx}\t{s_idx}\t{a[s_idx, t_idx]:.17g}\n"
                        )
                if args.plots:
                    from .plots import save_attention_heatmap

                    save_attention_heatmap(
                        a, run.dir / f"attention_{d}.png",
                        title=f"instance {args.instance} vs {d}",
                    )
        print(f"inspect-attention: wrote {out_path}")
        run.finish()
        return 0
    finally:
        run.release()


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zeroddi",
        description="zero-shot interaction-event classification workbench",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="cmd", required=True)

    p = subs.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seen", type=int, default=12)
    p.add_argument("--n-unseen", type=int, default=4)
    p.add_argument("--n-effects", type=int, default=4)
    p.add_argument("--d-t", type=int, default=32)
    p.add_argument("--instances-per-class", type=int, default=60)
    p.add_argument("--rho", type=float, default=10.0)
    p.add_argument("--holdout-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("prepare", help="validate a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = subs.add_parser("resample", help="rebalance an instances file")
    p.add_argument("--instances", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rho", type=float, default=100.0)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_resample)

    p = subs.add_parser("train", help="fit a model on the seen classes")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--loss", choices=("dua", "ce", "hinge"))
    p.add_argument("--variant", choices=("full", "no-ssf", "no-attr"))
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="run a zero-shot protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("czsl", "gzsl"), required=True)
    p.add_argument("--fold", choices=("0", "1", "2", "all"), default="all")
    p.add_argument("--pair-independent", action="store_true")
    p.add_argument("--dump-predictions", action="store_true")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--scope", choices=SCOPES, default="all")
    p.add_argument("--out", default="zeroddi_gradcheck")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("inspect-attention", help="dump fusion attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--instance", type=int, required=True)
    p.add_argument("--ddie")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_inspect_attention)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    args.argv = list(argv)
    try:
        return args.func(args)
    except (DataError, ShapeError, ValueError) as e:
        print(f'error category=validation message="{e}"', file=sys.stderr)
        return 3
    except (TrainingError, CheckpointError, NotImplementedError, OSError) as e:
        print(f'error category=runtime message="{e}"', file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
