"""Deterministic fake models for exercising the evaluation and benchmark
surfaces without training anything real."""

from __future__ import annotations

import hashlib
import time

import numpy as np

from .audio import MelConfig, MelSpectrogram, PIPELINE_RATE, Waveform


def _text_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")


class StubSynthesizer:
    """Maps text deterministically to a synthetic mel; optional artificial
    delay proportional to the produced audio duration (for RTF calibration)."""

    def __init__(self, mel_config: MelConfig | None = None, delay_factor: float = 0.0):
        self.mel_config = mel_config or MelConfig()
        self.delay_factor = delay_factor

    def synthesize_mel(self, text: str) -> MelSpectrogram:
        rng = np.random.default_rng(_text_seed(text))
        n_frames = 40 + 2 * len(text)
        frames = np.log(self.mel_config.log_floor) + 2.0 * rng.random(
            (n_frames, self.mel_config.mel_bins)
        )
        mel = MelSpectrogram(frames, self.mel_config)
        if self.delay_factor > 0:
            time.sleep(self.delay_factor * mel.duration)
        return mel


class StubVocoder:
    """Turns a mel into a deterministic harmonic waveform of the right length."""

    def vocode(self, mel: MelSpectrogram) -> Waveform:
        n = mel.n_frames * mel.config.hop_size
        t = np.arange(n) / PIPELINE_RATE
        energy = mel.frames.mean()
        freq = 150.0 + 10.0 * (energy % 20.0)
        return Waveform(0.4 * np.sin(2 * np.pi * freq * t), PIPELINE_RATE)
