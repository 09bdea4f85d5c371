"""Optimizer contracts, training-loop behavior, experiment orchestration."""

import json

import numpy as np
import pytest

from finder import backend
from finder.autodiff import Tensor
from finder.data_io import load_manifest
from finder.errors import ConfigError, NumericFailure
from finder.losses import RenyiParams
from finder.models import ConvBlock, Model, ModelConfig
from finder.synth import SynthSpec, write_dataset
from finder.training import AdamState, TrainConfig, adam_step, run_experiment, train_fold


def blobs(rng, n_per=40, dim=10, sep=6.0):
    """Two far-apart Gaussian blobs: linearly separable."""
    a = rng.standard_normal((n_per, dim)).astype(np.float32)
    b = rng.standard_normal((n_per, dim)).astype(np.float32) + sep
    x = np.concatenate([a, b])
    y = np.concatenate([np.zeros(n_per, dtype=np.int64), np.ones(n_per, dtype=np.int64)])
    order = rng.permutation(2 * n_per)
    return x[order], y[order]


class TestAdam:
    def test_first_step_magnitude(self):
        p = {"w": Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)}
        st = AdamState(p)
        adam_step(p, {"w": np.ones(4, dtype=np.float32)}, st, lr=1e-3)
        # m_hat = 1, v_hat = 1 after bias correction: update = lr / (1 + eps)
        np.testing.assert_allclose(-p["w"].data, 9.99999e-4, rtol=1e-5)
        assert st.t == 1

    def test_zero_gradient_keeps_parameters(self):
        p = {"w": Tensor(np.full(3, 1.5, dtype=np.float32), requires_grad=True)}
        st = AdamState(p)
        adam_step(p, {"w": np.zeros(3, dtype=np.float32)}, st, lr=1e-3)
        np.testing.assert_array_equal(p["w"].data, np.full(3, 1.5, dtype=np.float32))
        assert st.t == 1

    def test_beta_zero_degenerates_to_sign_sgd(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal(6).astype(np.float32)
        p = {"w": Tensor(np.zeros(6, dtype=np.float32), requires_grad=True)}
        st = AdamState(p, beta1=0.0, beta2=0.0)
        adam_step(p, {"w": g}, st, lr=0.01)
        expected = -0.01 * g / (np.abs(g) + st.eps)
        np.testing.assert_allclose(p["w"].data, expected, rtol=1e-5)

    def test_gradient_shape_mismatch_rejected(self):
        from finder.errors import ContractError
        p = {"w": Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)}
        st = AdamState(p)
        with pytest.raises(ContractError):
            adam_step(p, {"w": np.zeros(4, dtype=np.float32)}, st, lr=1e-3)

    def test_deterministic_trajectory(self):
        def run():
            rng = np.random.default_rng(1)
            p = {"w": Tensor(np.ones(5, dtype=np.float32), requires_grad=True)}
            st = AdamState(p)
            for _ in range(20):
                g = rng.standard_normal(5).astype(np.float32)
                adam_step(p, {"w": g}, st, lr=1e-2)
            return p["w"].data.tobytes()

        assert run() == run()


class TestTrainFold:
    def _cfg(self, **kw):
        defaults = dict(seed=0, lr=1e-3, epochs=40, batch_size=32,
                        early_stop_patience=5)
        defaults.update(kw)
        return TrainConfig(**defaults)

    def test_separable_reaches_full_train_accuracy(self, numpy_backend):
        rng = np.random.default_rng(2)
        x, y = blobs(rng, n_per=150)
        mc = ModelConfig(kind="fcn", input_dims=[10], n_classes=2, dense_units=[32, 16])
        model, curve, best_epoch, _ = train_fold(
            mc, [x[:240]], y[:240], [x[240:]], y[240:],
            self._cfg(early_stop_patience=40), ["a", "b"])
        out = model.forward([Tensor(x[:240])])
        acc = float(np.mean(np.argmax(out.probs.data, axis=1) == y[:240]))
        assert acc == 1.0
        assert curve[best_epoch - 1]["val_loss"] <= curve[0]["val_loss"]

    def test_patience_one_constant_loss_stops_after_two_epochs(self, numpy_backend):
        rng = np.random.default_rng(3)
        x, y = blobs(rng, n_per=20)
        mc = ModelConfig(kind="fcn", input_dims=[10], n_classes=2, dense_units=[8],
                         dropout_dense=0.0)
        # lr so small the float32 parameters never move: constant validation loss
        model, curve, best_epoch, epochs_run = train_fold(
            mc, [x[:30]], y[:30], [x[30:]], y[30:],
            self._cfg(lr=1e-30, epochs=40, early_stop_patience=1), ["a", "b"])
        assert epochs_run == 2
        assert best_epoch == 1

    def test_lambda_one_finder_matches_concat_fusion(self, numpy_backend):
        rng = np.random.default_rng(4)
        x0, y = blobs(rng, n_per=16, dim=12)
        x1 = rng.standard_normal(x0.shape).astype(np.float32) + x0
        kw = dict(input_dims=[12, 12], n_classes=2,
                  conv_blocks=[ConvBlock(8, 3, 2)], dense_units=[8],
                  projection_dim=6)
        cfg = self._cfg(epochs=3, batch_size=8, renyi=RenyiParams(lam=1.0))
        results = {}
        for kind in ("finder", "concat_fusion"):
            mc = ModelConfig(kind=kind, **kw)
            model, _, _, _ = train_fold(
                mc, [x0[:24], x1[:24]], y[:24], [x0[24:], x1[24:]], y[24:],
                cfg, ["a", "b"])
            results[kind] = {k: t.data.copy() for k, t in model.params.items()}
        assert set(results["finder"]) == set(results["concat_fusion"])
        for k in results["finder"]:
            np.testing.assert_array_equal(results["finder"][k], results["concat_fusion"][k])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_abort_names_epoch_and_batch(self, numpy_backend):
        rng = np.random.default_rng(5)
        x, y = blobs(rng, n_per=20)
        mc = ModelConfig(kind="fcn", input_dims=[10], n_classes=2, dense_units=[8],
                         dropout_dense=0.0)
        with pytest.raises(NumericFailure) as e:
            train_fold(mc, [x[:30]], y[:30], [x[30:]], y[30:],
                       self._cfg(lr=1e20, epochs=3), ["a", "b"])
        assert "epoch" in str(e.value) and "batch" in str(e.value)

    def test_empty_validation_rejected(self):
        rng = np.random.default_rng(6)
        x, y = blobs(rng, n_per=10)
        mc = ModelConfig(kind="fcn", input_dims=[10], n_classes=2)
        with pytest.raises(ConfigError):
            train_fold(mc, [x], y, [x[:0]], y[:0], self._cfg(), ["a", "b"])


def tiny_experiment(tmp_path, split="official", seed=11, kind="fcn", epochs=3, k=3):
    spec = SynthSpec(n_classes=3, n_per_class=12, view_dims=[12, 12],
                     noise_scale=0.4, informativeness=0.5, seed=seed)
    data_dir = tmp_path / "data"
    manifest_path = write_dataset(spec, data_dir, split=split, k=k)
    manifest, banks = load_manifest(manifest_path)
    views = ["synth_view0"] if kind in ("fcn", "cnn") else None
    dims = [12] if kind in ("fcn", "cnn") else [12, 12]
    mc = ModelConfig(kind=kind, input_dims=dims, n_classes=3,
                     dense_units=[16, 8], conv_blocks=[ConvBlock(8, 3, 2)],
                     projection_dim=8)
    cfg = TrainConfig(seed=seed, epochs=epochs, batch_size=8)
    out = tmp_path / "run"
    report = run_experiment(manifest, banks, mc, cfg, out, views)
    return report, out


class TestRunExperiment:
    def test_kfold_has_five_entries_plus_averages(self, tmp_path, numpy_backend):
        spec = SynthSpec(n_classes=3, n_per_class=15, view_dims=[12, 12],
                         noise_scale=0.4, informativeness=0.5, seed=7)
        manifest_path = write_dataset(spec, tmp_path / "d", split="kfold", k=5)
        manifest, banks = load_manifest(manifest_path)
        mc = ModelConfig(kind="fcn", input_dims=[12], n_classes=3, dense_units=[8])
        cfg = TrainConfig(seed=7, epochs=2, batch_size=8)
        report = run_experiment(manifest, banks, mc, cfg, tmp_path / "run", ["synth_view0"])
        assert len(report["folds"]) == 5
        accs = [f["accuracy"] for f in report["folds"]]
        assert report["averages"]["accuracy"] == pytest.approx(np.mean(accs), abs=1e-12)

    def test_official_split_single_entry(self, tmp_path, numpy_backend):
        report, _ = tiny_experiment(tmp_path, split="official")
        assert len(report["folds"]) == 1
        assert report["averages"]["accuracy"] == report["folds"][0]["accuracy"]

    def test_rerun_identical_bytes(self, tmp_path, numpy_backend):
        _, out1 = tiny_experiment(tmp_path / "a", split="official", seed=13)
        _, out2 = tiny_experiment(tmp_path / "b", split="official", seed=13)
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_checkpoints_written_and_loadable(self, tmp_path, numpy_backend):
        report, out = tiny_experiment(tmp_path, split="official")
        ckpt = out / report["folds"][0]["checkpoint"]
        assert ckpt.exists()
        Model.load(ckpt)

    def test_loss_identity_on_every_logged_step(self, tmp_path, numpy_backend):
        report, _ = tiny_experiment(tmp_path, split="official", kind="finder", epochs=4)
        for fold in report["folds"]:
            for entry in fold["loss_curve"]:
                lam = report["train_config"]["renyi"]["lambda"]
                expected = lam * entry["train_ce"] + (1 - lam) * entry["train_rd"]
                assert entry["train_total"] == pytest.approx(expected, abs=1e-6)
