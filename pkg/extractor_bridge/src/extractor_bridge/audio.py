"""WAV loading and resampling to the 16 kHz model rate."""

from __future__ import annotations

import wave
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

TARGET_SR = 16_000


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file as float64 in [-1, 1], downmixed to mono."""
    with wave.open(str(path), "rb") as w:
        sr = w.getframerate()
        n_channels = w.getnchannels()
        width = w.getsampwidth()
        raw = w.readframes(w.getnframes())
    if width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        samples = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    elif width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"{path}: unsupported sample width {width}")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, sr


def resample(samples: np.ndarray, sr: int, target_sr: int = TARGET_SR) -> np.ndarray:
    if sr == target_sr:
        return samples
    ratio = Fraction(target_sr, sr)
    return resample_poly(samples, ratio.numerator, ratio.denominator)


def load_audio_16k(path) -> np.ndarray:
    samples, sr = load_audio(path)
    return resample(samples, sr)


def load_audio(path) -> tuple[np.ndarray, int]:
    """WAV via the stdlib; other formats (e.g. FLAC) via soundfile if present."""
    if str(path).lower().endswith(".wav"):
        return load_wav(path)
    try:
        import soundfile
    except ImportError as exc:
        raise ValueError(
            f"{path}: non-WAV audio needs the soundfile package"
        ) from exc
    samples, sr = soundfile.read(str(path), dtype="float64", always_2d=True)
    return samples.mean(axis=1), int(sr)
