"""Corpus -> feature bank."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import load_wav_mono_16k
from .banks import write_bank
from .errors import AudioDecodeError, ExtractError
from .ptms import build_embedder, check_dim

log = logging.getLogger("ptm_extract")


@dataclass
class ExtractorConfig:
    model_id: str
    corpus: list[tuple[str, int, str]]   # (audio_path, class_label, sample_id)
    weights: str = "random"              # random | pretrained
    seed: int = 0
    batch_size: int = 8                  # progress/log granularity; inference is per utterance
    device: str = "cpu"
    on_error: str = "fail"               # fail | skip
    state_dict: str | None = None

    def __post_init__(self):
        if self.on_error not in ("fail", "skip"):
            raise ExtractError(f"on_error must be 'fail' or 'skip', got {self.on_error!r}")
        if not self.corpus:
            raise ExtractError("empty corpus")
        ids = [sid for _, _, sid in self.corpus]
        if len(set(ids)) != len(ids):
            raise ExtractError("duplicate sample ids in corpus")


@dataclass
class ExtractSummary:
    model_id: str
    dim: int
    n_written: int
    skipped: list[str] = field(default_factory=list)


def read_corpus_tsv(path) -> list[tuple[str, int, str]]:
    """TSV rows of audio_path <tab> integer label <tab> sample_id."""
    rows = []
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ExtractError(f"{path}:{lineno}: expected 3 tab-separated fields")
        audio, label, sid = parts
        try:
            label_int = int(label)
        except ValueError as exc:
            raise ExtractError(f"{path}:{lineno}: label must be an integer") from exc
        audio_path = Path(audio)
        if not audio_path.is_absolute():
            audio_path = base / audio_path
        rows.append((str(audio_path), label_int, sid))
    if not rows:
        raise ExtractError(f"{path}: no corpus rows")
    return rows


def extract(config: ExtractorConfig, out_path) -> ExtractSummary:
    """Embed every utterance and write the bank.

    Rows are written in sorted sample-id order so banks from different models
    over the same corpus stay row-aligned. Undecodable audio either aborts
    (on_error='fail') or is skipped with a log line; a width different from
    the registry's expected dim is always a hard error.
    """
    entry, embedder = build_embedder(config.model_id, config.weights, config.device,
                                     config.seed, config.state_dict)
    ordered = sorted(config.corpus, key=lambda row: row[2])
    features: list[np.ndarray] = []
    labels: list[int] = []
    ids: list[str] = []
    skipped: list[str] = []
    for i, (audio_path, label, sid) in enumerate(ordered):
        try:
            wave = load_wav_mono_16k(audio_path)
            vec = embedder(wave)
            check_dim(entry, vec, audio_path)
            if not np.isfinite(vec).all():
                raise AudioDecodeError(f"{audio_path}: non-finite embedding")
        except AudioDecodeError as exc:
            if config.on_error == "fail":
                raise
            log.warning("skipping %s: %s", sid, exc)
            skipped.append(sid)
            continue
        features.append(vec)
        labels.append(label)
        ids.append(sid)
        if (i + 1) % config.batch_size == 0:
            log.info("%s: %d/%d utterances", config.model_id, i + 1, len(ordered))
    if not features:
        raise ExtractError("all utterances failed to extract")
    write_bank(out_path, config.model_id, np.stack(features), np.array(labels), ids)
    return ExtractSummary(config.model_id, entry.expected_dim, len(ids), skipped)
