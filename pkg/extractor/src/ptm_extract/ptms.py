"""Registry of the six speech models and their per-utterance embedders.

Each embedder maps a mono 16 kHz float32 waveform to one fixed-width vector:
transformer models via average pooling of the last hidden state over time,
the speaker model via its native utterance embedding (stats pooling followed
by the segment layer). ``weights="random"`` builds the architecture from a
config with seeded random initialization (offline, used by tests);
``weights="pretrained"`` pulls the published checkpoints and needs network
access.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .errors import DimMismatchError, ExtractError


def _pool_last_hidden(model, inputs: torch.Tensor) -> np.ndarray:
    with torch.no_grad():
        hidden = model(inputs).last_hidden_state
    return hidden.mean(dim=1)[0].cpu().numpy().astype(np.float32)


class WaveEmbedder:
    """wav2vec2-family: raw waveform in, mean-pooled last hidden state out."""

    def __init__(self, model, feature_extractor, device: str):
        self.model = model.to(device).eval()
        self.fe = feature_extractor
        self.device = device

    def __call__(self, wave: np.ndarray) -> np.ndarray:
        inputs = self.fe(wave, sampling_rate=16000, return_tensors="pt")
        return _pool_last_hidden(self.model, inputs.input_values.to(self.device))


class WhisperEncoderEmbedder:
    """Whisper: log-mel features through the final encoder layer, mean-pooled."""

    def __init__(self, model, feature_extractor, device: str):
        self.encoder = model.get_encoder().to(device).eval()
        self.fe = feature_extractor
        self.device = device

    def __call__(self, wave: np.ndarray) -> np.ndarray:
        feats = self.fe(wave, sampling_rate=16000, return_tensors="pt")
        return _pool_last_hidden(self.encoder, feats.input_features.to(self.device))


# ---------------------------------------------------------------------------
# native TDNN speaker embedder


def log_mel_fbank(wave: np.ndarray, n_mels: int = 24, n_fft: int = 512,
                  win: int = 400, hop: int = 160, fmin: float = 20.0,
                  fmax: float = 7600.0, rate: int = 16000) -> np.ndarray:
    """(n_mels, frames) log mel filterbank energies."""
    if wave.shape[0] < win:
        wave = np.pad(wave, (0, win - wave.shape[0]))
    n_frames = 1 + (wave.shape[0] - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wave[idx] * np.hanning(win)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = 700.0 * (10.0 ** (mel_pts / 2595.0) - 1.0)
    bins = np.floor((n_fft + 1) * hz_pts / rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        if mid > lo:
            fb[m - 1, lo:mid] = (np.arange(lo, mid) - lo) / (mid - lo)
        if hi > mid:
            fb[m - 1, mid:hi] = (hi - np.arange(mid, hi)) / (hi - mid)
    mel = power @ fb.T
    return np.log(mel + 1e-6).T.astype(np.float32)


class XVectorTDNN(torch.nn.Module):
    """Frame-level dilated TDNN, stats pooling, one segment layer."""

    def __init__(self, n_mels: int = 24, embed_dim: int = 512):
        super().__init__()
        specs = [(n_mels, 512, 5, 1), (512, 512, 3, 2), (512, 512, 3, 3),
                 (512, 512, 1, 1), (512, 1500, 1, 1)]
        layers = []
        for c_in, c_out, k, d in specs:
            layers += [torch.nn.Conv1d(c_in, c_out, k, dilation=d),
                       torch.nn.ReLU(),
                       torch.nn.BatchNorm1d(c_out)]
        self.frames = torch.nn.Sequential(*layers)
        self.segment = torch.nn.Linear(3000, embed_dim)

    def forward(self, fbank: torch.Tensor) -> torch.Tensor:
        h = self.frames(fbank)
        stats = torch.cat([h.mean(dim=2), h.std(dim=2)], dim=1)
        return self.segment(stats)


class XVectorEmbedder:
    def __init__(self, model: XVectorTDNN, device: str):
        self.model = model.to(device).eval()
        self.device = device

    def __call__(self, wave: np.ndarray) -> np.ndarray:
        fbank = log_mel_fbank(wave)
        # receptive field of the dilated stack is 15 frames
        if fbank.shape[1] < 15:
            fbank = np.pad(fbank, ((0, 0), (0, 15 - fbank.shape[1])))
        x = torch.from_numpy(fbank[None]).to(self.device)
        with torch.no_grad():
            emb = self.model(x)
        return emb[0].cpu().numpy().astype(np.float32)


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    expected_dim: int
    checkpoint: str
    build: Callable[[str, str, int, str | None], object]  # (weights, device, seed, state_dict)


def _tiny_wav2vec2_kwargs(hidden: int) -> dict:
    heads = 4 if hidden % 4 == 0 else 8
    return dict(hidden_size=hidden, num_hidden_layers=2, num_attention_heads=heads,
                intermediate_size=256, conv_dim=(64, 64), conv_stride=(10, 8),
                conv_kernel=(10, 8), num_feat_extract_layers=2)


def _build_wav2vec2_like(arch: str, hidden: int, checkpoint: str):
    def build(weights: str, device: str, seed: int, state_dict: str | None):
        from transformers import (
            Wav2Vec2Config,
            Wav2Vec2FeatureExtractor,
            Wav2Vec2Model,
            WavLMConfig,
            WavLMModel,
        )
        config_cls, model_cls = {
            "wav2vec2": (Wav2Vec2Config, Wav2Vec2Model),
            "wavlm": (WavLMConfig, WavLMModel),
        }[arch]
        if weights == "pretrained":
            if state_dict:
                raise ExtractError("--state-dict applies to random-architecture models only")
            model = model_cls.from_pretrained(checkpoint)
            fe = Wav2Vec2FeatureExtractor.from_pretrained(checkpoint)
        else:
            torch.manual_seed(seed)
            model = model_cls(config_cls(**_tiny_wav2vec2_kwargs(hidden)))
            fe = Wav2Vec2FeatureExtractor()
            if state_dict:
                model.load_state_dict(torch.load(state_dict, map_location="cpu"))
        return WaveEmbedder(model, fe, device)

    return build


def _build_whisper(checkpoint: str):
    def build(weights: str, device: str, seed: int, state_dict: str | None):
        from transformers import WhisperConfig, WhisperFeatureExtractor, WhisperModel
        if weights == "pretrained":
            model = WhisperModel.from_pretrained(checkpoint)
            fe = WhisperFeatureExtractor.from_pretrained(checkpoint)
        else:
            torch.manual_seed(seed)
            cfg = WhisperConfig(d_model=512, encoder_layers=2, encoder_attention_heads=8,
                                decoder_layers=1, decoder_attention_heads=8,
                                vocab_size=128, max_target_positions=64,
                                pad_token_id=0, bos_token_id=1, eos_token_id=2,
                                decoder_start_token_id=3)
            model = WhisperModel(cfg)
            fe = WhisperFeatureExtractor()
            if state_dict:
                model.load_state_dict(torch.load(state_dict, map_location="cpu"))
        return WhisperEncoderEmbedder(model, fe, device)

    return build


def _build_wav2vec2_emo():
    base = _build_wav2vec2_like("wav2vec2", 768, "facebook/wav2vec2-base")

    def build(weights: str, device: str, seed: int, state_dict: str | None):
        if weights == "pretrained":
            raise ExtractError(
                "wav2vec2_emo ships as a speechbrain-format fine-tune of "
                "wav2vec2-base; export its state_dict and pass --state-dict "
                "with --weights random instead")
        return base(weights, device, seed, state_dict)

    return build


def _build_xvector():
    def build(weights: str, device: str, seed: int, state_dict: str | None):
        if weights == "pretrained":
            raise ExtractError(
                "xvector ships as a speechbrain-format checkpoint; export its "
                "state_dict and pass --state-dict with --weights random instead")
        torch.manual_seed(seed)
        model = XVectorTDNN()
        if state_dict:
            model.load_state_dict(torch.load(state_dict, map_location="cpu"))
        return XVectorEmbedder(model, device)

    return build


MODEL_REGISTRY: dict[str, ModelEntry] = {
    "wav2vec2": ModelEntry("wav2vec2", 768, "facebook/wav2vec2-base",
                           _build_wav2vec2_like("wav2vec2", 768, "facebook/wav2vec2-base")),
    "wav2vec2_emo": ModelEntry("wav2vec2_emo", 768,
                               "speechbrain/emotion-recognition-wav2vec2-IEMOCAP",
                               _build_wav2vec2_emo()),
    "wavlm": ModelEntry("wavlm", 768, "microsoft/wavlm-base",
                        _build_wav2vec2_like("wavlm", 768, "microsoft/wavlm-base")),
    "xlsr": ModelEntry("xlsr", 1024, "facebook/wav2vec2-xls-r-300m",
                       _build_wav2vec2_like("wav2vec2", 1024, "facebook/wav2vec2-xls-r-300m")),
    "whisper_encoder": ModelEntry("whisper_encoder", 512, "openai/whisper-base",
                                  _build_whisper("openai/whisper-base")),
    "xvector": ModelEntry("xvector", 512, "speechbrain/spkrec-xvect-voxceleb",
                          _build_xvector()),
}


def build_embedder(model_id: str, weights: str = "random", device: str = "cpu",
                   seed: int = 0, state_dict: str | None = None):
    if model_id not in MODEL_REGISTRY:
        raise ExtractError(f"unknown model id {model_id!r}; expected one of "
                           f"{sorted(MODEL_REGISTRY)}")
    if weights not in ("random", "pretrained"):
        raise ExtractError(f"weights must be 'random' or 'pretrained', got {weights!r}")
    entry = MODEL_REGISTRY[model_id]
    embedder = entry.build(weights, device, seed, state_dict)
    return entry, embedder


def check_dim(entry: ModelEntry, vec: np.ndarray, source: str) -> None:
    if vec.shape != (entry.expected_dim,):
        raise DimMismatchError(
            f"{entry.model_id} produced shape {vec.shape} for {source}, expected "
            f"({entry.expected_dim},)")
