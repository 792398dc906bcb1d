"""Flat key=value run configuration with file defaults and CLI overrides.

Every pipeline artifact (manifest metadata, checkpoints, reports) embeds
the fully resolved mapping for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .audio import MelConfig
from .speaker import SpeakerEncoderConfig
from .synthesizer import SynthesizerConfig
from .vocoder import VocoderConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    # mel extraction
    "mel_fft_size": 1024,
    "mel_hop_size": 256,
    "mel_win_size": 1024,
    "mel_bins": 80,
    "mel_fmin": 0.0,
    "mel_fmax": 8000.0,
    "mel_log_floor": 1e-5,
    # speaker encoder
    "speaker_hidden": 256,
    "speaker_layers": 3,
    "speaker_dim": 256,
    "speaker_min_frames": 40,
    "speaker_partial_frames": 160,
    "speaker_lr": 1e-3,
    "speaker_steps": 200,
    "speaker_batch_speakers": 2,
    "speaker_batch_utterances": 4,
    # synthesizer
    "synth_base_dim": 256,
    "synth_d_latent": 128,
    "synth_heads": 2,
    "synth_encoder_layers": 2,
    "synth_posterior_layers": 1,
    "synth_decoder_layers": 2,
    "synth_flow_steps": 4,
    "synth_flow_hidden": 128,
    "synth_alpha_max": 1.0,
    "synth_alpha_warmup_steps": 2000,
    "synth_beta": 1.0,
    "synth_reduction_factors": "4,3,2,1",
    "synth_reduction_boundaries": "500,1000,1500",
    "synth_temperature": 0.667,
    "synth_lr": 1e-3,
    "synth_steps": 500,
    # vocoder
    "vocoder_rates": "8,8,4",
    "vocoder_channels": 32,
    "vocoder_disc_channels": 16,
    "vocoder_discriminators": 2,
    "vocoder_lambda_fm": 2.0,
    "vocoder_lambda_mel": 45.0,
    "vocoder_lr": 2e-4,
    "vocoder_steps": 300,
    # dataset QC
    "asr_mode": "none",  # none | echo | http
    "asr_base_url": "",
    "asr_timeout": 30.0,
    "cer_threshold": 0.1,
    # benchmarking
    "bench_runs": 10,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def ints(self, key: str) -> tuple[int, ...]:
        raw = str(self.values[key]).strip()
        return tuple(int(part) for part in raw.split(",") if part != "")

    def resolved(self) -> dict[str, Any]:
        return dict(self.values)

    def mel_config(self) -> MelConfig:
        return MelConfig(
            fft_size=self["mel_fft_size"],
            hop_size=self["mel_hop_size"],
            win_size=self["mel_win_size"],
            mel_bins=self["mel_bins"],
            fmin=self["mel_fmin"],
            fmax=self["mel_fmax"],
            log_floor=self["mel_log_floor"],
        )

    def speaker_config(self) -> SpeakerEncoderConfig:
        return SpeakerEncoderConfig(
            mel_bins=self["mel_bins"],
            hidden_size=self["speaker_hidden"],
            num_layers=self["speaker_layers"],
            embedding_dim=self["speaker_dim"],
            min_frames=self["speaker_min_frames"],
            partial_frames=self["speaker_partial_frames"],
            lr=self["speaker_lr"],
        )

    def synthesizer_config(self, vocab_size: int) -> SynthesizerConfig:
        return SynthesizerConfig(
            vocab_size=vocab_size,
            mel_bins=self["mel_bins"],
            base_dim=self["synth_base_dim"],
            speaker_dim=self["speaker_dim"],
            d_latent=self["synth_d_latent"],
            n_heads=self["synth_heads"],
            encoder_layers=self["synth_encoder_layers"],
            posterior_layers=self["synth_posterior_layers"],
            decoder_layers=self["synth_decoder_layers"],
            flow_steps=self["synth_flow_steps"],
            flow_hidden=self["synth_flow_hidden"],
            alpha_max=self["synth_alpha_max"],
            alpha_warmup_steps=self["synth_alpha_warmup_steps"],
            beta=self["synth_beta"],
            reduction_factors=self.ints("synth_reduction_factors"),
            reduction_boundaries=self.ints("synth_reduction_boundaries"),
            temperature=self["synth_temperature"],
            lr=self["synth_lr"],
        )

    def vocoder_config(self) -> VocoderConfig:
        return VocoderConfig(
            mel=self.mel_config(),
            upsample_rates=self.ints("vocoder_rates"),
            base_channels=self["vocoder_channels"],
            disc_channels=self["vocoder_disc_channels"],
            n_discriminators=self["vocoder_discriminators"],
            lambda_fm=self["vocoder_lambda_fm"],
            lambda_mel=self["vocoder_lambda_mel"],
            lr=self["vocoder_lr"],
        )


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Parse "key = value" lines; '#' starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        raw[key] = value
    return raw


def load_run_config(
    path: str | Path | None = None, overrides: Sequence[str] = ()
) -> RunConfig:
    """DEFAULTS <- config file <- 'key=value' overrides, unknown keys rejected."""
    values = dict(DEFAULTS)
    if path is not None:
        for key, raw in parse_config_file(path).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            values[key] = _coerce(key, raw)
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override must look like key=value, got {override!r}")
        key, raw = (part.strip() for part in override.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(values)
