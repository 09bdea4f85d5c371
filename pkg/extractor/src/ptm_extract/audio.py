"""WAV loading, stereo downmix, and resampling to the 16 kHz model rate."""

from __future__ import annotations

from math import gcd

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioDecodeError

TARGET_RATE = 16000

_NORMALIZERS = {
    np.dtype(np.int16): lambda x: x.astype(np.float32) / 32768.0,
    np.dtype(np.int32): lambda x: x.astype(np.float32) / 2147483648.0,
    np.dtype(np.uint8): lambda x: (x.astype(np.float32) - 128.0) / 128.0,
    np.dtype(np.float32): lambda x: x.astype(np.float32),
    np.dtype(np.float64): lambda x: x.astype(np.float32),
}


def load_wav_mono_16k(path) -> np.ndarray:
    """Decode a WAV file to mono float32 at 16 kHz.

    Multi-channel audio is downmixed by channel mean before resampling.
    """
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise AudioDecodeError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise AudioDecodeError(f"{path}: empty audio stream")
    norm = _NORMALIZERS.get(data.dtype)
    if norm is None:
        raise AudioDecodeError(f"{path}: unsupported sample dtype {data.dtype}")
    x = norm(data)
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise AudioDecodeError(f"{path}: unsupported shape {data.shape}")
    if rate != TARGET_RATE:
        if rate <= 0:
            raise AudioDecodeError(f"{path}: invalid sample rate {rate}")
        g = gcd(TARGET_RATE, rate)
        x = resample_poly(x, TARGET_RATE // g, rate // g).astype(np.float32)
    return np.ascontiguousarray(x, dtype=np.float32)
