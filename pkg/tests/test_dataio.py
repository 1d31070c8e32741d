import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zeroddi.dataio import (
    EmptyDatasetError,
    FormatError,
    Instance,
    MolecularGraph,
    ParseError,
    SplitSpec,
    SynthConfig,
    ValidationError,
    class_counts,
    gzsl_holdout,
    load_dataset,
    load_graphs,
    load_instances,
    load_splits,
    load_token_bank,
    make_splits,
    read_token_matrix,
    resample_imbalance,
    synth_generate,
    write_graphs,
    write_instances,
    write_splits,
    write_token_bank,
    write_token_matrix,
)


def _dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestGraphs:
    def test_single_atom_graph(self):
        g = MolecularGraph("d", (3,), ())
        assert g.n_atoms == 1

    def test_dangling_bond_rejected(self):
        with pytest.raises(ValidationError):
            MolecularGraph("d", (0, 1, 2), ((0, 5),))

    def test_self_loop_rejected(self):
        with pytest.raises(ValidationError):
            MolecularGraph("d", (0, 1), ((1, 1),))

    def test_duplicate_bond_rejected(self):
        with pytest.raises(ValidationError):
            MolecularGraph("d", (0, 1), ((0, 1), (1, 0)))

    def test_empty_graph_rejected(self):
        with pytest.raises(ValidationError):
            MolecularGraph("d", (), ())

    def test_round_trip(self, tmp_path):
        graphs = [
            MolecularGraph("a", (0, 1, 2), ((0, 1), (1, 2))),
            MolecularGraph("b", (5,), ()),
        ]
        path = tmp_path / "graphs.jsonl"
        write_graphs(path, graphs)
        loaded = load_graphs(path)
        assert loaded["a"] == graphs[0] and loaded["b"] == graphs[1]

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "graphs.jsonl"
        path.write_text('{"drug_id": "a", "atom_codes": [0], "bonds": []}\nnot json\n')
        with pytest.raises(ParseError, match=":2"):
            load_graphs(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "graphs.jsonl"
        rec = '{"drug_id": "a", "atom_codes": [0], "bonds": []}\n'
        path.write_text(rec + rec)
        with pytest.raises(ValidationError, match="duplicate"):
            load_graphs(path)


class TestTokenBank:
    def test_matrix_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        mat = rng.normal(size=(4, 9)).astype(np.float32)
        path = tmp_path / "m.zdtk"
        write_token_matrix(path, mat)
        back = read_token_matrix(path)
        assert back.dtype == np.float32 and np.array_equal(back, mat)

    def test_header_payload_mismatch(self, tmp_path):
        path = tmp_path / "m.zdtk"
        write_token_matrix(path, np.ones((4, 8), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[: 12 + 3 * 8 * 4])  # declares 4x8, holds 3x8
        with pytest.raises(FormatError, match="bytes"):
            read_token_matrix(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.zdtk"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            read_token_matrix(path)

    def test_bank_of_175_records(self, tmp_path):
        rng = np.random.default_rng(1)
        cls = {f"d{i:03d}": rng.normal(size=(2, 4)).astype(np.float32) for i in range(175)}
        attrs = {k: [rng.normal(size=(1, 4)).astype(np.float32)] for k in cls}
        manifest = write_token_bank(tmp_path, cls, attrs)
        bank = load_token_bank(manifest)
        assert len(bank) == 175

    def test_attr_files_concatenate(self, tmp_path):
        a0 = np.ones((2, 3), dtype=np.float32)
        a1 = 2 * np.ones((1, 3), dtype=np.float32)
        manifest = write_token_bank(
            tmp_path, {"x": np.zeros((1, 3), dtype=np.float32)}, {"x": [a0, a1]}
        )
        rec = load_token_bank(manifest)["x"]
        assert rec.attr_tokens.shape == (3, 3)
        assert np.array_equal(rec.attr_tokens[:2], a0.astype(np.float64))

    def test_inconsistent_width_rejected(self, tmp_path):
        manifest = write_token_bank(
            tmp_path,
            {"x": np.zeros((1, 3), dtype=np.float32), "y": np.zeros((1, 4), dtype=np.float32)},
            {"x": [np.zeros((1, 3), dtype=np.float32)], "y": [np.zeros((1, 4), dtype=np.float32)]},
        )
        with pytest.raises(ValidationError, match="width"):
            load_token_bank(manifest)


class TestInstances:
    def test_round_trip_and_resolution(self, tmp_path):
        graphs = {"a": MolecularGraph("a", (0,), ()), "b": MolecularGraph("b", (1,), ())}
        path = tmp_path / "instances.tsv"
        write_instances(path, [Instance("a", "b", "c1")])
        with pytest.raises(ValidationError, match="unknown class"):
            load_instances(path, graphs, records={})
        got = load_instances(path, graphs)
        assert got == [Instance("a", "b", "c1")]

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "instances.tsv"
        path.write_text("a\tb\n")
        with pytest.raises(ParseError, match=":1"):
            load_instances(path)


class TestResample:
    @staticmethod
    def _mk(counts: dict[str, int]) -> list[Instance]:
        out = []
        for c, n in counts.items():
            out += [Instance(f"{c}{i}a", f"{c}{i}b", c) for i in range(n)]
        return out

    def test_already_at_ratio_unchanged(self):
        ins = self._mk({"A": 1000, "B": 10})
        assert resample_imbalance(ins, 100.0) == ins

    def test_caps_to_ratio(self):
        ins = self._mk({"A": 100000, "B": 10})
        out = resample_imbalance(ins, 100.0)
        counts = class_counts(out)
        assert counts == {"A": 1000, "B": 10}

    def test_min_count_drops_class(self):
        ins = self._mk({"A": 50, "B": 3})
        out = resample_imbalance(ins, 100.0, min_count=10)
        assert class_counts(out) == {"A": 50}

    def test_all_dropped_is_error(self):
        with pytest.raises(EmptyDatasetError):
            resample_imbalance(self._mk({"A": 2}), 10.0, min_count=10)

    @given(st.dictionaries(st.sampled_from("ABCDEF"), st.integers(10, 300), min_size=2))
    @settings(max_examples=30, deadline=None)
    def test_ratio_invariant(self, counts):
        out = resample_imbalance(self._mk(counts), rho_target=3.0)
        got = class_counts(out)
        assert max(got.values()) / min(got.values()) <= 3.0


class TestSplits:
    def test_paper_scale_partition(self):
        counts = {f"c{i:03d}": 1000 - i for i in range(175)}
        split = make_splits(counts, n_unseen=68, seed=0)
        assert len(split.seen_classes) == 107 and len(split.unseen_classes) == 68
        assert sorted(len(f) for f in split.folds) == [22, 23, 23]

    def test_rarest_become_unseen(self):
        counts = {"big": 100, "mid": 50, "small": 2}
        split = make_splits(counts, n_unseen=1, seed=0)
        assert split.unseen_classes == ["small"]

    def test_tie_break_lexicographic(self):
        # tie at the boundary: smaller id ranks first (stays seen)
        counts = {"aa": 10, "ab": 10, "zz": 50}
        split = make_splits(counts, n_unseen=1, seed=0)
        assert split.unseen_classes == ["ab"]

    def test_deterministic(self):
        counts = {f"c{i}": i + 1 for i in range(30)}
        a = make_splits(counts, 9, seed=7)
        b = make_splits(counts, 9, seed=7)
        assert a == b

    def test_bad_n_unseen(self):
        with pytest.raises(ValueError):
            make_splits({"a": 1, "b": 2}, 0, seed=0)
        with pytest.raises(ValueError):
            make_splits({"a": 1, "b": 2}, 2, seed=0)

    def test_file_round_trip(self, tmp_path):
        split = make_splits({f"c{i}": i + 1 for i in range(10)}, 3, seed=1)
        path = tmp_path / "splits.json"
        write_splits(path, split)
        assert load_splits(path) == split


class TestGzslHoldout:
    @staticmethod
    def _split(seen, unseen):
        folds = [[], [], []]
        for i, c in enumerate(unseen):
            folds[i % 3].append(c)
        return SplitSpec(seen, unseen, folds, 0.1, seed=0)

    def test_ceil_fraction(self):
        ins = [Instance(f"a{i}", f"b{i}", "s") for i in range(10)]
        split = self._split(["s"], ["u1", "u2", "u3"])
        train, held = gzsl_holdout(ins, split, 0.1, seed=0)
        assert len(held) == 1 and len(train) == 9

    def test_disjoint(self):
        ins = [Instance(f"a{i}", f"b{i}", f"s{i % 3}") for i in range(30)]
        split = self._split(["s0", "s1", "s2"], ["u1", "u2", "u3"])
        train, held = gzsl_holdout(ins, split, 0.25, seed=3)
        assert set(train).isdisjoint(held)
        assert sorted(train + held) == sorted(ins)

    def test_per_class_counts(self):
        rng = np.random.default_rng(5)
        classes = {f"s{k}": int(rng.integers(5, 40)) for k in range(6)}
        ins = []
        for c, n in classes.items():
            ins += [Instance(f"{c}x{i}", f"{c}y{i}", c) for i in range(n)]
        split = self._split(sorted(classes), ["u0", "u1", "u2"])
        _, held = gzsl_holdout(ins, split, 0.1, seed=1)
        held_counts = class_counts(held)
        for c, n in classes.items():
            assert held_counts.get(c, 0) == -(-n // 10)  # ceil(0.1 n)

    def test_unseen_instances_route_to_eval(self):
        ins = [Instance("a", "b", "s"), Instance("c", "d", "u1")] * 3
        split = self._split(["s"], ["u1", "u2", "u3"])
        train, held = gzsl_holdout(ins, split, 0.5, seed=0)
        assert all(i.ddie_id == "s" for i in train)
        assert sum(1 for i in held if i.ddie_id == "u1") == 3


class TestSynth:
    def test_composition_structure(self, tmp_path):
        summary = synth_generate(tmp_path, SynthConfig(n_seen=12, n_unseen=4, seed=3))
        triples = {
            (c["sign"], c["effect"], c["pattern"]) for c in summary["classes"].values()
        }
        assert len(triples) == 16
        ids = sorted(summary["classes"])
        seen_t = {
            (c["sign"], c["effect"], c["pattern"])
            for d, c in summary["classes"].items()
            if d in ids[:12]
        }
        unseen_t = {
            (c["sign"], c["effect"], c["pattern"])
            for d, c in summary["classes"].items()
            if d in ids[12:]
        }
        assert seen_t.isdisjoint(unseen_t)
        # unseen attributes all occur among seen classes
        for dim in range(3):
            seen_vals = {t[dim] for t in seen_t}
            assert all(t[dim] in seen_vals for t in unseen_t)

    def test_rho_ratio(self, tmp_path):
        summary = synth_generate(tmp_path, SynthConfig(rho=100.0, seed=2))
        counts = [c["count"] for c in summary["classes"].values()]
        assert 90 <= max(counts) / min(counts) <= 110

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cfg = SynthConfig(n_seen=6, n_unseen=2, n_effects=3, instances_per_class=8, seed=9)
        synth_generate(a, cfg)
        synth_generate(b, cfg)
        assert _dir_digest(a) == _dir_digest(b)

    def test_loads_as_valid_dataset(self, tmp_path):
        synth_generate(tmp_path, SynthConfig(n_seen=6, n_unseen=2, n_effects=3,
                                             instances_per_class=6, seed=4))
        bundle = load_dataset(tmp_path)
        assert bundle.splits is not None
        assert len(bundle.records) == 8
        counts = class_counts(bundle.instances)
        ranked = sorted(counts.values(), reverse=True)
        assert all(counts[c] <= ranked[5] for c in bundle.splits.unseen_classes)

    def test_infeasible_composition(self, tmp_path):
        with pytest.raises(ValueError):
            synth_generate(tmp_path, SynthConfig(n_seen=20, n_unseen=20, n_effects=2))
