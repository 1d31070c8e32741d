import numpy as np
import pytest

from zeroddi.dataio import DdieSemanticsRecord, Instance, MolecularGraph
from zeroddi.model import TrainSet, init_model
from zeroddi.trainer import (
    AdamState,
    CheckpointError,
    CheckpointState,
    TrainConfig,
    TrainingError,
    config_to_text,
    fit,
    load_checkpoint,
    parse_config_text,
    save_checkpoint,
)


def _tiny_train_set(seed=0, n_classes=4, n_instances=16, d_t=5):
    rng = np.random.default_rng(seed)
    records = [
        DdieSemanticsRecord(f"c{j}", rng.normal(size=(3, d_t)), rng.normal(size=(2, d_t)))
        for j in range(n_classes)
    ]
    graphs, instances = {}, []
    for i in range(n_instances):
        n1, n2 = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        for name, n in ((f"a{i}", n1), (f"b{i}", n2)):
            codes = tuple(int(rng.integers(0, 5)) for _ in range(n))
            bonds = tuple((k, k + 1) for k in range(n - 1))
            graphs[name] = MolecularGraph(name, codes, bonds)
        instances.append(Instance(f"a{i}", f"b{i}", f"c{i % n_classes}"))
    return TrainSet(
        graphs=graphs,
        records=records,
        instances=instances,
        class_index={f"c{j}": j for j in range(n_classes)},
    )


def _tiny_config(**kw) -> TrainConfig:
    base = dict(
        d_v=8, d_n=8, d_r=6, N=4, d_t=5, epochs=2, batch_size=8,
        learning_rate=1e-3, seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def _params_equal(a, b) -> bool:
    na, nb = a.named(), b.named()
    return all(np.array_equal(na[k].data, nb[k].data) for k in na)


class TestFit:
    def test_overfit_single_batch(self):
        ts = _tiny_train_set(n_instances=8)
        cfg = _tiny_config(epochs=200, batch_size=8, learning_rate=3e-3, lambda_=0.1)
        params, history = fit(ts, cfg)
        totals = [h["total"] for h in history]
        # strictly decreasing over the first 10 steps, ends under 10 percent
        assert all(totals[i + 1] < totals[i] for i in range(10))
        assert totals[-1] < 0.1 * totals[0]

    def test_bitwise_deterministic(self):
        ts = _tiny_train_set()
        a, ha = fit(ts, _tiny_config())
        b, hb = fit(ts, _tiny_config())
        assert _params_equal(a, b)
        assert [h["total"] for h in ha] == [h["total"] for h in hb]

    def test_lambda_zero_matches_align_only_run(self):
        # dua at lambda=0 computes (and logs) uniformity but adds zero
        # gradient, so parameters match a loss that never builds it
        ts = _tiny_train_set()
        dua, hd = fit(ts, _tiny_config(lambda_=0.0, loss="dua"))
        ce, hc = fit(ts, _tiny_config(loss="ce"))
        assert _params_equal(dua, ce)
        assert hd[0]["cla"] > 0.0 and hd[0]["ins"] > 0.0
        assert hc[0]["cla"] == 0.0

    def test_empty_train_set_rejected(self):
        ts = _tiny_train_set()
        ts.instances = []
        with pytest.raises(TrainingError):
            fit(ts, _tiny_config())

    def test_d_t_mismatch_rejected(self):
        ts = _tiny_train_set()
        with pytest.raises(ValueError, match="d_t"):
            fit(ts, _tiny_config(d_t=9))

    def test_history_fields(self):
        ts = _tiny_train_set()
        _, history = fit(ts, _tiny_config(epochs=2))
        assert len(history) == 2
        for rec in history:
            assert set(rec) == {"epoch", "align", "cla", "ins", "total", "wall_ms"}

    def test_hinge_and_subsample_modes_run(self):
        ts = _tiny_train_set()
        fit(ts, _tiny_config(loss="hinge"))
        fit(ts, _tiny_config(class_subsample=2))

    def test_non_seen_instance_rejected(self):
        ts = _tiny_train_set()
        ts.instances.append(Instance("a0", "b0", "mystery"))
        with pytest.raises(ValueError):
            fit(ts, _tiny_config())


class TestCheckpoint:
    def test_round_trip_byte_identical(self, tmp_path):
        ts = _tiny_train_set()
        cfg = _tiny_config()
        params = init_model(cfg, 5, cfg.seed)
        adam = AdamState.fresh(params.named())
        params, _ = fit(ts, cfg, init=params, adam=adam)
        p1 = tmp_path / "a.bin"
        p2 = tmp_path / "b.bin"
        state = CheckpointState(params=params, adam=adam, config=cfg, epoch=cfg.epochs)
        save_checkpoint(state, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_resume_equivalence(self, tmp_path):
        ts = _tiny_train_set()
        full_cfg = _tiny_config(epochs=4)
        straight, _ = fit(ts, full_cfg)

        half_cfg = _tiny_config(epochs=2)
        params = init_model(half_cfg, 5, half_cfg.seed)
        adam = AdamState.fresh(params.named())
        params, _ = fit(ts, half_cfg, init=params, adam=adam)
        save_checkpoint(
            CheckpointState(params=params, adam=adam, config=half_cfg, epoch=2),
            tmp_path / "ck.bin",
        )
        state = load_checkpoint(tmp_path / "ck.bin")
        state.config.epochs = 4
        resumed, _ = fit(
            ts, state.config, init=state.params, adam=state.adam, start_epoch=state.epoch
        )
        assert _params_equal(straight, resumed)

    def test_fresh_init_round_trips_forward(self, tmp_path):
        from zeroddi.model import batch_forward

        ts = _tiny_train_set()
        cfg = _tiny_config()
        params = init_model(cfg, 5, 0)
        save_checkpoint(
            CheckpointState(params, AdamState.fresh(params.named()), cfg, 0),
            tmp_path / "ck.bin",
        )
        loaded = load_checkpoint(tmp_path / "ck.bin").params
        a = batch_forward(params, ts, ts.instances[:3])
        b = batch_forward(loaded, ts, ts.instances[:3])
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.h, b.h))
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.z, b.z))

    def test_truncated_file_rejected(self, tmp_path):
        cfg = _tiny_config()
        params = init_model(cfg, 5, 0)
        path = tmp_path / "ck.bin"
        save_checkpoint(
            CheckpointState(params, AdamState.fresh(params.named()), cfg, 0), path
        )
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(CheckpointError, match="payload"):
            load_checkpoint(path)

    def test_bad_magic_and_version(self, tmp_path):
        path = tmp_path / "ck.bin"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)
        cfg = _tiny_config()
        params = init_model(cfg, 5, 0)
        save_checkpoint(
            CheckpointState(params, AdamState.fresh(params.named()), cfg, 0), path
        )
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)


class TestConfig:
    def test_text_round_trip(self):
        cfg = TrainConfig(learning_rate=0.01, lambda_=0.3, class_subsample=7, N=8)
        back, explicit = parse_config_text(config_to_text(cfg))
        assert back == cfg
        assert "lambda_" in explicit

    def test_file_keys_match_fields(self):
        text = "lambda = 0.5\ntau = 0.8\nepochs = 3\nd_v = 16\nd_n = 16\n"
        cfg, explicit = parse_config_text(text)
        assert cfg.lambda_ == 0.5 and cfg.tau == 0.8 and cfg.epochs == 3
        assert explicit == {"lambda_", "tau", "epochs", "d_v", "d_n"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config_text("mystery = 1\n")

    def test_comments_and_blanks(self):
        cfg, _ = parse_config_text("# a comment\n\ntau = 0.5  # inline\n")
        assert cfg.tau == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(N=5).validate()
        with pytest.raises(ValueError):
            TrainConfig(d_v=16, d_n=32).validate()
        with pytest.raises(ValueError):
            TrainConfig(loss="nope").validate()
