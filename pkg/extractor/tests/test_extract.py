"""Extraction behavior: dims, determinism, error policy, corpus parsing."""

import numpy as np
import pytest

from ptm_extract.errors import ExtractError
from ptm_extract.extract import ExtractorConfig, ExtractSummary, extract, read_corpus_tsv
from ptm_extract.ptms import MODEL_REGISTRY, build_embedder

EXPECTED_DIMS = {
    "wav2vec2": 768,
    "wav2vec2_emo": 768,
    "wavlm": 768,
    "xlsr": 1024,
    "whisper_encoder": 512,
    "xvector": 512,
}


def test_registry_dims_match_table():
    assert {k: v.expected_dim for k, v in MODEL_REGISTRY.items()} == EXPECTED_DIMS


@pytest.mark.parametrize("model_id", sorted(MODEL_REGISTRY))
def test_silence_embeds_to_expected_dim(model_id):
    _, embedder = build_embedder(model_id, weights="random", seed=0)
    vec = embedder(np.zeros(16000, dtype=np.float32))
    assert vec.shape == (EXPECTED_DIMS[model_id],)
    assert np.isfinite(vec).all()


def test_same_file_twice_identical(toy_corpus):
    _, embedder = build_embedder("xvector", weights="random", seed=0)
    from ptm_extract.audio import load_wav_mono_16k
    wave = load_wav_mono_16k(toy_corpus["rows"][0][0])
    a = embedder(wave)
    b = embedder(wave)
    np.testing.assert_array_equal(a, b)


def test_rows_sorted_by_sample_id(toy_corpus, tmp_path):
    # feed the corpus reversed; rows must still come out in sorted id order
    config = ExtractorConfig("xvector", list(reversed(toy_corpus["rows"])), weights="random")
    extract(config, tmp_path / "x.bank")
    from ptm_extract.manifest import read_bank_index
    _, _, labels, ids = read_bank_index(tmp_path / "x.bank")
    assert ids == sorted(ids)
    assert labels == [row[1] for row in sorted(toy_corpus["rows"], key=lambda r: r[2])]


def test_skip_policy_logs_and_continues(toy_corpus, tmp_path):
    rows = list(toy_corpus["rows"]) + [(str(tmp_path / "missing.wav"), 0, "zzz_bad")]
    config = ExtractorConfig("xvector", rows, weights="random", on_error="skip")
    summary = extract(config, tmp_path / "x.bank")
    assert summary.skipped == ["zzz_bad"]
    assert summary.n_written == len(toy_corpus["rows"])


def test_fail_policy_raises(toy_corpus, tmp_path):
    rows = list(toy_corpus["rows"]) + [(str(tmp_path / "missing.wav"), 0, "zzz_bad")]
    config = ExtractorConfig("xvector", rows, weights="random", on_error="fail")
    with pytest.raises(Exception):
        extract(config, tmp_path / "x.bank")


def test_duplicate_ids_rejected(toy_corpus):
    rows = toy_corpus["rows"][:2] + [toy_corpus["rows"][0]]
    with pytest.raises(ExtractError):
        ExtractorConfig("xvector", rows)


def test_corpus_tsv_roundtrip(toy_corpus):
    rows = read_corpus_tsv(toy_corpus["tsv"])
    assert len(rows) == 10
    assert rows[0][1] in (0, 1)


def test_unknown_model_rejected():
    with pytest.raises(ExtractError):
        build_embedder("hubert", weights="random")


def test_pretrained_unavailable_models_error_clearly():
    for model_id in ("xvector", "wav2vec2_emo"):
        with pytest.raises(ExtractError, match="state_dict"):
            build_embedder(model_id, weights="pretrained")
