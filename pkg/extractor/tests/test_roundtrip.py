"""Cross-component acceptance: banks and manifests built here must drive the
training toolkit end-to-end through its external interfaces."""

import json
import shutil
import subprocess

import numpy as np
import pytest

from ptm_extract.errors import AlignmentError
from ptm_extract.extract import ExtractorConfig, extract
from ptm_extract.manifest import build_manifest, read_bank_index, stratified_id_lists

EXPECTED_DIMS = {
    "wav2vec2": 768,
    "wav2vec2_emo": 768,
    "wavlm": 768,
    "xlsr": 1024,
    "whisper_encoder": 512,
    "xvector": 512,
}

finder_cli = shutil.which("finder")


@pytest.fixture(scope="session")
def extracted_banks(toy_corpus, tmp_path_factory):
    """One bank per model id over the 10-file toy corpus."""
    out = tmp_path_factory.mktemp("banks")
    paths = {}
    for model_id in EXPECTED_DIMS:
        config = ExtractorConfig(model_id, toy_corpus["rows"], weights="random", seed=0)
        path = out / f"{model_id}.bank"
        extract(config, path)
        paths[model_id] = path
    return paths


class TestExtractorDims:
    def test_every_model_emits_table_dim_and_primary_accepts(self, extracted_banks):
        from finder.data_io import read_bank  # reference parser for the wire format
        for model_id, path in extracted_banks.items():
            bank = read_bank(path)
            assert bank.dim == EXPECTED_DIMS[model_id], model_id
            assert bank.n == 10
            assert np.isfinite(bank.features).all()
            assert bank.sample_ids == sorted(bank.sample_ids)


class TestManifestBuilder:
    def test_aligned_banks_give_valid_manifest(self, extracted_banks, tmp_path):
        out = tmp_path / "ds"
        out.mkdir()
        banks = []
        for mid in ("whisper_encoder", "xvector"):
            dst = out / f"{mid}.bank"
            dst.write_bytes(extracted_banks[mid].read_bytes())
            banks.append(str(dst))
        path = build_manifest(banks, ["real_tone", "alt_tone"],
                              {"kind": "kfold", "k": 5, "seed": 1}, out)
        from finder.data_io import load_manifest
        manifest, loaded = load_manifest(path)
        assert {r.name for r in manifest.representations} == {"whisper_encoder", "xvector"}

    def test_shuffled_bank_raises_alignment_error(self, extracted_banks, tmp_path):
        from ptm_extract.banks import write_bank
        name, dim, labels, ids = read_bank_index(extracted_banks["xvector"])
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((len(ids), dim)).astype(np.float32)
        order = list(range(len(ids)))[::-1]
        write_bank(tmp_path / "shuffled.bank", name, feats,
                   np.array(labels)[order], [ids[i] for i in order])
        with pytest.raises(AlignmentError):
            build_manifest([str(extracted_banks["whisper_encoder"]), str(tmp_path / "shuffled.bank")],
                           ["a", "b"], {"kind": "kfold", "k": 5, "seed": 0}, tmp_path)

    def test_official_split_policy_structure(self, extracted_banks, tmp_path):
        name, dim, labels, ids = read_bank_index(extracted_banks["xvector"])
        train, val, test = stratified_id_lists(ids, labels, (0.6, 0.2, 0.2), seed=3)
        assert sorted(train + val + test) == sorted(ids)
        out = tmp_path / "ds"
        out.mkdir()
        for part, data in (("train", train), ("val", val), ("test", test)):
            (out / f"{part}_ids.json").write_text(json.dumps(data))
        dst = out / "xvector.bank"
        dst.write_bytes(extracted_banks["xvector"].read_bytes())
        path = build_manifest([str(dst)], ["a", "b"],
                              {"kind": "official", "train_path": "train_ids.json",
                               "val_path": "val_ids.json", "test_path": "test_ids.json"}, out)
        doc = json.loads(path.read_text())
        assert doc["split_policy"]["kind"] == "official"


@pytest.mark.skipif(finder_cli is None, reason="primary CLI not installed")
class TestCrossComponentTrain:
    def test_manifest_drives_primary_train_end_to_end(self, extracted_banks, tmp_path):
        out = tmp_path / "ds"
        out.mkdir()
        banks = []
        for mid in ("whisper_encoder", "xvector"):
            dst = out / f"{mid}.bank"
            dst.write_bytes(extracted_banks[mid].read_bytes())
            banks.append(str(dst))
        name, dim, labels, ids = read_bank_index(banks[0])
        train, val, test = stratified_id_lists(ids, labels, (0.6, 0.2, 0.2), seed=1)
        for part, data in (("train", train), ("val", val), ("test", test)):
            (out / f"{part}_ids.json").write_text(json.dumps(data))
        manifest = build_manifest(banks, ["real_tone", "alt_tone"],
                                  {"kind": "official", "train_path": "train_ids.json",
                                   "val_path": "val_ids.json", "test_path": "test_ids.json"},
                                  out, dataset_name="toy_tones")
        model_cfg = tmp_path / "model.json"
        model_cfg.write_text(json.dumps({
            "conv_blocks": [{"filters": 8, "kernel": 3, "pool": 2}],
            "dense_units": [16],
            "projection_dim": 8,
        }))
        run_dir = tmp_path / "run"
        proc = subprocess.run(
            [finder_cli, "train", "--manifest", str(manifest), "--kind", "finder",
             "--seed", "1", "--epochs", "2", "--batch-size", "4", "--strict",
             "--model-config", str(model_cfg), "--out-dir", str(run_dir)],
            capture_output=True, text=True, timeout=600)
        assert proc.returncode == 0, proc.stderr
        report = json.loads((run_dir / "report.json").read_text())
        assert report["dataset_name"] == "toy_tones"
        assert len(report["folds"]) == 1
        assert (run_dir / "official.ckpt").exists()
