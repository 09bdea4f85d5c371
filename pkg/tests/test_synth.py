"""Generator determinism, bank validity, and the informativeness structure."""

import numpy as np
import pytest

from finder.data_io import load_manifest
from finder.errors import ConfigError
from finder.synth import SynthSpec, class_means, generate, write_dataset

from oracles import nearest_class_mean_accuracy


class TestSpecValidation:
    def test_dim_floor(self):
        with pytest.raises(ConfigError):
            SynthSpec(n_classes=16, view_dims=[10, 10])

    def test_informativeness_range(self):
        with pytest.raises(ConfigError):
            SynthSpec(informativeness=1.5)


class TestGeneration:
    def test_deterministic(self):
        spec = SynthSpec(seed=5)
        a, _ = generate(spec)
        b, _ = generate(spec)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)

    def test_means_pairwise_distinct_per_view(self):
        for rho in (0.0, 0.5, 1.0):
            spec = SynthSpec(n_classes=9, view_dims=[16, 16], informativeness=rho)
            for mat in class_means(spec):
                for i in range(9):
                    for j in range(i + 1, 9):
                        assert not np.array_equal(mat[i], mat[j])

    def test_banks_pass_manifest_validation(self, tmp_path):
        spec = SynthSpec(n_classes=4, n_per_class=10, view_dims=[12, 12], seed=1)
        path = write_dataset(spec, tmp_path, split="kfold", k=5)
        manifest, banks = load_manifest(path)
        assert manifest.n_classes == 4
        assert banks["synth_view0"].n == 40

    def test_official_split_files(self, tmp_path):
        spec = SynthSpec(n_classes=3, n_per_class=12, view_dims=[10, 10], seed=2)
        path = write_dataset(spec, tmp_path, split="official")
        manifest, banks = load_manifest(path)
        from finder.data_io import resolve_splits
        splits = resolve_splits(manifest, banks)
        assert len(splits) == 1
        s = splits[0]
        assert sorted(s.train_ids + s.val_ids + s.test_ids) == sorted(banks["synth_view0"].sample_ids)


class TestInformativenessStructure:
    def test_fused_beats_single_view_at_rho_one(self):
        spec = SynthSpec(n_classes=4, n_per_class=50, view_dims=[64, 64],
                         noise_scale=0.25, informativeness=1.0, seed=3)
        banks, labels = generate(spec)
        rng = np.random.default_rng(0)
        order = rng.permutation(len(labels))
        n_train = int(0.75 * len(labels))
        tr, te = order[:n_train], order[n_train:]
        accs = []
        for bank in banks:
            accs.append(nearest_class_mean_accuracy(
                bank.features[tr], labels[tr], bank.features[te], labels[te]))
        fused = np.concatenate([b.features for b in banks], axis=1)
        fused_acc = nearest_class_mean_accuracy(fused[tr], labels[tr], fused[te], labels[te])
        assert fused_acc > max(accs) + 0.2
        assert max(accs) < 0.75  # single view cannot separate the factor it is blind to
        assert fused_acc > 0.9

    def test_noiseless_limit_separable(self):
        spec = SynthSpec(n_classes=4, n_per_class=20, view_dims=[16, 16],
                         noise_scale=1e-4, informativeness=0.5, seed=4)
        banks, labels = generate(spec)
        fused = np.concatenate([b.features for b in banks], axis=1)
        acc = nearest_class_mean_accuracy(fused, labels, fused, labels)
        assert acc == 1.0
