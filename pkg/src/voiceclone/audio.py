"""Audio I/O, resampling and log-mel feature extraction.

Everything here is pure and stateless: the same waveform and config always
produce bitwise-identical features, which the test suite relies on.
Pipeline-internal processing is fixed at 16 kHz mono.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

PIPELINE_RATE = 16000

_PCM16_SCALE = 32768.0


class AudioFormatError(ValueError):
    """Raised when an audio file violates the mono 16-bit PCM contract."""


@dataclass(frozen=True)
class Waveform:
    """Time-domain signal, samples in [-1, 1] after PCM decode."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise AudioFormatError("waveform must be mono (1-D sample array)")
        if samples.size == 0:
            raise AudioFormatError("empty audio")
        if not np.all(np.isfinite(samples)):
            raise AudioFormatError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    """Parameters of the waveform -> log-mel transform.

    Defaults are common neural-vocoder settings for 16 kHz speech.
    """

    fft_size: int = 1024
    hop_size: int = 256
    win_size: int = 1024
    mel_bins: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5
    sample_rate: int = PIPELINE_RATE

    def __post_init__(self):
        if not (0 < self.hop_size <= self.win_size <= self.fft_size):
            raise ValueError("require 0 < hop_size <= win_size <= fft_size")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError("require 0 <= fmin < fmax <= sample_rate/2")
        if self.mel_bins < 1:
            raise ValueError("mel_bins must be >= 1")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel energy matrix, one row per frame."""

    frames: np.ndarray
    config: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("mel frames must be a non-empty 2-D matrix")
        if frames.shape[1] != self.config.mel_bins:
            raise ValueError(
                f"expected {self.config.mel_bins} mel bins, got {frames.shape[1]}"
            )
        floor = np.log(self.config.log_floor)
        if frames.min() < floor - 1e-9:
            raise ValueError(
                f"log-mel entry {frames.min():.4f} below the floor log({self.config.log_floor})"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames * self.config.hop_size / self.config.sample_rate


def load_waveform(path: str | Path) -> Waveform:
    """Decode a mono 16-bit PCM WAV file to floats in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV not supported (PCM only)")
            if wf.getnchannels() != 1:
                raise AudioFormatError(
                    f"{path}: expected mono, got {wf.getnchannels()} channels"
                )
            if wf.getsampwidth() != 2:
                raise AudioFormatError(
                    f"{path}: expected 16-bit samples, got {8 * wf.getsampwidth()}-bit"
                )
            n = wf.getnframes()
            if n == 0:
                raise AudioFormatError(f"{path}: empty audio")
            raw = wf.readframes(n)
            rate = wf.getframerate()
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM16_SCALE
    return Waveform(samples, rate)


def save_waveform(w: Waveform, path: str | Path) -> None:
    """Write a waveform as mono 16-bit little-endian PCM WAV."""
    pcm = np.clip(np.round(w.samples * _PCM16_SCALE), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited resampling; output length is round(len * target / source)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    g = gcd(target_rate, w.sample_rate)
    up, down = target_rate // g, w.sample_rate // g
    out = resample_poly(w.samples, up, down, padtype="line")
    # resample_poly returns ceil(n*up/down) samples; trim to the rounded count.
    n_out = int(np.floor(len(w) * target_rate / w.sample_rate + 0.5))
    return Waveform(out[:n_out], target_rate)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(cfg: MelConfig) -> np.ndarray:
    """Center frequency in Hz of each triangular mel filter."""
    pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2)
    return mel_to_hz(pts)[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular filterbank matrix of shape [mel_bins, fft_size//2 + 1]."""
    n_freqs = cfg.fft_size // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_freqs)
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    fb = np.zeros((cfg.mel_bins, n_freqs), dtype=np.float64)
    for m in range(cfg.mel_bins):
        lo, center, hi = pts[m], pts[m + 1], pts[m + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def hann_window(win_size: int) -> np.ndarray:
    # Periodic Hann, the STFT convention.
    n = np.arange(win_size, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_size)


def frame_count(n_samples: int, cfg: MelConfig) -> int:
    """Frames under the no-padding convention: 1 + floor((len - win) / hop)."""
    if n_samples < cfg.win_size:
        raise ValueError(
            f"audio of {n_samples} samples is shorter than one window ({cfg.win_size})"
        )
    return 1 + (n_samples - cfg.win_size) // cfg.hop_size


def mel_spectrogram(w: Waveform, cfg: MelConfig | None = None) -> MelSpectrogram:
    """Log-mel transform of a 16 kHz waveform (no padding, natural log)."""
    cfg = cfg or MelConfig()
    if w.sample_rate != PIPELINE_RATE:
        raise ValueError(
            f"mel extraction runs at {PIPELINE_RATE} Hz; resample first "
            f"(got {w.sample_rate} Hz)"
        )
    n_frames = frame_count(len(w), cfg)
    offsets = np.arange(n_frames) * cfg.hop_size
    idx = offsets[:, None] + np.arange(cfg.win_size)[None, :]
    windowed = w.samples[idx] * hann_window(cfg.win_size)
    spectrum = np.fft.rfft(windowed, n=cfg.fft_size, axis=1)
    power = np.abs(spectrum) ** 2
    mel_power = power @ mel_filterbank(cfg).T
    frames = np.log(np.maximum(mel_power, cfg.log_floor))
    return MelSpectrogram(frames, cfg)
