"""Bank format roundtrips, manifest validation, split properties."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finder.data_io import (
    DatasetManifest,
    FeatureBank,
    RepresentationRef,
    SplitAssignment,
    load_manifest,
    load_views,
    read_bank,
    resolve_splits,
    stratified_kfold,
    write_bank,
    write_manifest,
)
from finder.errors import BankFormatError, ConfigError, DataIntegrityError


def make_bank(rng, name="view0", n=10, dim=512, n_classes=4):
    feats = rng.standard_normal((n, dim)).astype(np.float32)
    labels = rng.integers(0, n_classes, n)
    ids = [f"u{i:04d}" for i in range(n)]
    return FeatureBank(name, feats, labels, ids)


class TestBankRoundtrip:
    def test_bitwise_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        bank = make_bank(rng)
        p = tmp_path / "b.bank"
        write_bank(bank, p)
        back = read_bank(p)
        assert back.representation_name == bank.representation_name
        np.testing.assert_array_equal(back.features, bank.features)
        np.testing.assert_array_equal(back.labels, bank.labels)
        assert back.sample_ids == bank.sample_ids

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000), n=st.integers(1, 30), dim=st.integers(1, 64))
    def test_roundtrip_property(self, tmp_path_factory, seed, n, dim):
        rng = np.random.default_rng(seed)
        bank = make_bank(rng, n=n, dim=dim)
        p = tmp_path_factory.mktemp("banks") / "b.bank"
        write_bank(bank, p)
        back = read_bank(p)
        np.testing.assert_array_equal(back.features, bank.features)
        assert back.sample_ids == bank.sample_ids

    def test_truncated_file_is_typed_error(self, tmp_path):
        rng = np.random.default_rng(1)
        p = tmp_path / "b.bank"
        write_bank(make_bank(rng), p)
        p.write_bytes(p.read_bytes()[:-20])
        with pytest.raises(BankFormatError):
            read_bank(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "b.bank"
        p.write_bytes(b"NOTABANK" + b"\x00" * 64)
        with pytest.raises(BankFormatError):
            read_bank(p)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataIntegrityError):
            FeatureBank("v", np.zeros((2, 3), dtype=np.float32), np.zeros(2, dtype=int), ["a", "a"])


class TestManifest:
    def _write_dataset(self, tmp_path, rng, dims=(16, 16), n=20, n_classes=4, mutate=None):
        labels = rng.integers(0, n_classes, n)
        ids = [f"u{i:04d}" for i in range(n)]
        refs = []
        for v, dim in enumerate(dims):
            feats = rng.standard_normal((n, dim)).astype(np.float32)
            bank = FeatureBank(f"view{v}", feats, labels.copy(), list(ids))
            if mutate:
                bank = mutate(v, bank)
            write_bank(bank, tmp_path / f"view{v}.bank")
            refs.append(RepresentationRef(f"view{v}", dim, f"view{v}.bank"))
        manifest = DatasetManifest(
            dataset_name="toy",
            class_names=[f"c{i}" for i in range(n_classes)],
            representations=refs,
            split_policy={"kind": "kfold", "k": 4, "seed": 7},
            base_dir=tmp_path,
        )
        write_manifest(manifest, tmp_path / "manifest.json")
        return tmp_path / "manifest.json"

    def test_load_validates_ok(self, tmp_path):
        rng = np.random.default_rng(2)
        path = self._write_dataset(tmp_path, rng)
        manifest, banks = load_manifest(path)
        assert manifest.n_classes == 4
        assert set(banks) == {"view0", "view1"}

    def test_dim_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(3)
        path = self._write_dataset(tmp_path, rng)
        doc = json.loads(path.read_text())
        doc["representations"][0]["dim"] = 768
        path.write_text(json.dumps(doc))
        with pytest.raises(DataIntegrityError):
            load_manifest(path)

    def test_label_disagreement_names_id(self, tmp_path):
        rng = np.random.default_rng(4)

        def mutate(v, bank):
            if v == 1:
                labels = bank.labels.copy()
                labels[3] = (labels[3] + 1) % 4
                return FeatureBank(bank.representation_name, bank.features, labels, bank.sample_ids)
            return bank

        path = self._write_dataset(tmp_path, rng, mutate=mutate)
        with pytest.raises(DataIntegrityError) as e:
            load_manifest(path)
        assert "u0003" in str(e.value)

    def test_misaligned_ids_rejected(self, tmp_path):
        rng = np.random.default_rng(5)

        def mutate(v, bank):
            if v == 1:
                ids = list(bank.sample_ids)
                ids[0], ids[1] = ids[1], ids[0]
                return FeatureBank(bank.representation_name, bank.features, bank.labels, ids)
            return bank

        path = self._write_dataset(tmp_path, rng, mutate=mutate)
        with pytest.raises(DataIntegrityError):
            load_manifest(path)

    def test_label_out_of_class_range(self, tmp_path):
        rng = np.random.default_rng(6)
        path = self._write_dataset(tmp_path, rng, n_classes=4)
        doc = json.loads(path.read_text())
        doc["class_names"] = ["a", "b"]  # labels go up to 3
        path.write_text(json.dumps(doc))
        with pytest.raises(DataIntegrityError):
            load_manifest(path)


class TestStratifiedKfold:
    def test_balanced_case_exact(self):
        labels = np.repeat(np.arange(4), 25)
        ids = [f"u{i:04d}" for i in range(100)]
        folds = stratified_kfold(ids, labels, k=5, seed=0)
        assert len(folds) == 5
        label_of = dict(zip(ids, labels))
        for f in folds:
            assert len(f.test_ids) == 20
            counts = np.bincount([label_of[i] for i in f.test_ids], minlength=4)
            np.testing.assert_array_equal(counts, [5, 5, 5, 5])

    def test_deterministic(self):
        labels = np.repeat(np.arange(3), 10)
        ids = [f"u{i}" for i in range(30)]
        a = stratified_kfold(ids, labels, k=5, seed=42)
        b = stratified_kfold(ids, labels, k=5, seed=42)
        assert [f.to_dict() for f in a] == [f.to_dict() for f in b]

    def test_partition_and_disjoint(self):
        rng = np.random.default_rng(7)
        labels = rng.integers(0, 3, 60)
        labels[:15] = np.arange(3).repeat(5)  # ensure every class >= k
        ids = [f"u{i:03d}" for i in range(60)]
        folds = stratified_kfold(ids, labels, k=5, seed=1)
        all_test = [i for f in folds for i in f.test_ids]
        assert sorted(all_test) == sorted(ids)  # test folds partition the data
        for f in folds:
            parts = set(f.train_ids) | set(f.val_ids) | set(f.test_ids)
            assert len(f.train_ids) + len(f.val_ids) + len(f.test_ids) == len(parts) == 60

    def test_unbalanced_proportions_within_one(self):
        rng = np.random.default_rng(8)
        sizes = rng.integers(5, 40, 19)  # 19-class toy set
        labels = np.concatenate([np.full(s, c) for c, s in enumerate(sizes)])
        ids = [f"u{i:04d}" for i in range(len(labels))]
        folds = stratified_kfold(ids, labels, k=5, seed=3)
        label_of = dict(zip(ids, labels))
        for c, s in enumerate(sizes):
            per_fold = [sum(1 for i in f.test_ids if label_of[i] == c) for f in folds]
            assert max(per_fold) - min(per_fold) <= 1
            assert sum(per_fold) == s

    def test_class_smaller_than_k_named(self):
        labels = np.array([0, 0, 0, 0, 0, 1, 1])
        ids = [f"u{i}" for i in range(7)]
        with pytest.raises(ConfigError) as e:
            stratified_kfold(ids, labels, k=5, seed=0)
        assert "class 1" in str(e.value)


class TestLoadViews:
    def _dataset(self, tmp_path, rng):
        n, n_classes = 24, 3
        labels = np.tile(np.arange(n_classes), n // n_classes)
        ids = [f"u{i:04d}" for i in range(n)]
        refs = []
        banks = {}
        for v, dim in enumerate((8, 12)):
            feats = rng.standard_normal((n, dim)).astype(np.float32)
            bank = FeatureBank(f"view{v}", feats, labels.copy(), list(ids))
            write_bank(bank, tmp_path / f"view{v}.bank")
            refs.append(RepresentationRef(f"view{v}", dim, f"view{v}.bank"))
            banks[f"view{v}"] = bank
        manifest = DatasetManifest("toy", [f"c{i}" for i in range(n_classes)], refs,
                                  {"kind": "kfold", "k": 3, "seed": 0}, base_dir=tmp_path)
        return manifest, banks

    def test_row_alignment(self, tmp_path):
        rng = np.random.default_rng(9)
        manifest, banks = self._dataset(tmp_path, rng)
        split = SplitAssignment("s", ["u0003", "u0001"], ["u0005"], ["u0002"])
        views, labels, ids = load_views(manifest, banks, split, "train")
        assert ids == ["u0001", "u0003"]  # canonical sorted order
        np.testing.assert_array_equal(views[0][0], banks["view0"].features[1])
        np.testing.assert_array_equal(views[1][1], banks["view1"].features[3])

    def test_missing_id_named(self, tmp_path):
        rng = np.random.default_rng(10)
        manifest, banks = self._dataset(tmp_path, rng)
        split = SplitAssignment("s", ["zzz"], [], [])
        with pytest.raises(DataIntegrityError) as e:
            load_views(manifest, banks, split, "train")
        assert "zzz" in str(e.value)

    def test_select_all_is_permutation(self, tmp_path):
        rng = np.random.default_rng(11)
        manifest, banks = self._dataset(tmp_path, rng)
        all_ids = list(banks["view0"].sample_ids)
        split = SplitAssignment("s", all_ids, [], [])
        views, labels, ids = load_views(manifest, banks, split, "train")
        assert sorted(ids) == sorted(all_ids)
        src = banks["view0"].features
        perm = [banks["view0"].sample_ids.index(i) for i in ids]
        np.testing.assert_array_equal(views[0], src[perm])

    def test_resolve_kfold_policy(self, tmp_path):
        rng = np.random.default_rng(12)
        manifest, banks = self._dataset(tmp_path, rng)
        splits = resolve_splits(manifest, banks)
        assert len(splits) == 3
