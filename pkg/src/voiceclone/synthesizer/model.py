"""The assembled synthesizer: text in, mel-spectrogram out in one decoder
pass, with a train-only posterior and an invertible text-conditioned prior."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..audio import MelConfig, MelSpectrogram
from ..checkpoint import load_checkpoint, save_checkpoint
from ..speaker import SpeakerEmbedding
from ..textnorm import TokenSequence, Vocab
from .config import SynthesizerConfig
from .flow import FlowPrior
from .modules import (
    Decoder,
    GaussianPosterior,
    LengthPrediction,
    LengthPredictor,
    PosteriorEncoder,
    TextEncoder,
)


class Synthesizer(nn.Module):
    def __init__(self, config: SynthesizerConfig, identity_prior_init: bool = True):
        super().__init__()
        self.config = config
        self.text_encoder = TextEncoder(config)
        self.posterior = PosteriorEncoder(config)
        self.decoder = Decoder(config)
        self.length_predictor = LengthPredictor(config)
        self.prior = FlowPrior(config, identity_init=identity_prior_init)

    def _token_tensor(self, tokens: TokenSequence | torch.Tensor) -> torch.Tensor:
        if isinstance(tokens, TokenSequence):
            ids = torch.tensor(tokens.ids, dtype=torch.long)
        else:
            ids = tokens.long()
        if ids.numel() == 0:
            raise ValueError("empty token sequence")
        if (ids < 0).any() or (ids >= self.config.vocab_size).any():
            raise ValueError("token id out of vocabulary range")
        return ids

    def _speaker_tensor(self, spk: SpeakerEmbedding | torch.Tensor) -> torch.Tensor:
        if isinstance(spk, SpeakerEmbedding):
            vec = torch.as_tensor(spk.vector, dtype=torch.float32)
        else:
            vec = spk
        norm = float(vec.norm())
        if abs(norm - 1.0) > 1e-4:
            raise ValueError(f"speaker embedding must be unit-norm, |v| = {norm}")
        return vec

    def encode_text(
        self, tokens: TokenSequence | torch.Tensor, spk: SpeakerEmbedding | torch.Tensor
    ) -> torch.Tensor:
        """[n_tokens, d_model] with the speaker vector in columns [base_dim:]."""
        return self.text_encoder(self._token_tensor(tokens), self._speaker_tensor(spk))

    def posterior_encode(
        self, x_enc: torch.Tensor, mel_frames: torch.Tensor, reduction: int
    ) -> GaussianPosterior:
        """Train-only: Gaussian over ceil(n_frames / reduction) latent frames."""
        if not self.training:
            raise RuntimeError(
                "posterior is train-only; inference samples the prior instead"
            )
        return self.posterior(x_enc, mel_frames, reduction)

    def decode(
        self,
        z: torch.Tensor,
        x_enc: torch.Tensor,
        reduction: int,
        isolate_frames: bool = False,
        collect_attention: bool = False,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        return self.decoder(
            z,
            x_enc,
            reduction,
            isolate_frames=isolate_frames,
            collect_attention=collect_attention,
        )

    def predict_length(
        self, x_enc: torch.Tensor, ground_truth: int | None = None
    ) -> LengthPrediction:
        return self.length_predictor(x_enc, ground_truth)

    def synthesize(
        self,
        tokens: TokenSequence | torch.Tensor,
        spk: SpeakerEmbedding | torch.Tensor,
        generator: torch.Generator | None = None,
        temperature: float | None = None,
        mel_config: MelConfig | None = None,
    ) -> MelSpectrogram:
        """Sample the prior once, decode once, return the mel-spectrogram.

        temperature scales the base noise; 0 gives the deterministic
        mode (the flow inverse of zeros).
        """
        temperature = self.config.temperature if temperature is None else temperature
        reduction = self.config.reduction_factors[-1]
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                x_enc = self.encode_text(tokens, spk)
                prediction = self.predict_length(x_enc)
                n_frames = min(prediction.predicted_frames, self.config.max_output_frames)
                n_latent = math.ceil(n_frames / reduction)
                noise = torch.randn(
                    (n_latent, self.config.d_latent), generator=generator
                )
                z, _ = self.prior.inverse(temperature * noise, x_enc)
                self.decoder.reset_call_counter()
                frames, _ = self.decode(z, x_enc, reduction)
                assert self.decoder.calls == 1, "decoder must run exactly once"
                frames = frames[:n_frames]
        finally:
            self.train(was_training)
        if mel_config is None:
            mel_config = MelConfig(mel_bins=self.config.mel_bins)
        elif mel_config.mel_bins != self.config.mel_bins:
            raise ValueError(
                f"mel_config has {mel_config.mel_bins} bins, model emits {self.config.mel_bins}"
            )
        # a log-mel below the extraction floor is meaningless downstream
        clamped = np.maximum(frames.double().numpy(), math.log(mel_config.log_floor))
        return MelSpectrogram(clamped, mel_config)


def save_synthesizer(
    path: str | Path, model: Synthesizer, vocab: Vocab, extra: dict | None = None
) -> None:
    config = {
        "synthesizer": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(model.config).items()
        },
        "vocab": dict(vocab.token_to_id),
        **(extra or {}),
    }
    save_checkpoint(path, kind="synthesizer", config=config, state=model.state_dict())


def load_synthesizer(path: str | Path) -> tuple[Synthesizer, Vocab]:
    ckpt = load_checkpoint(path, expected_kind="synthesizer")
    raw = dict(ckpt.config["synthesizer"])
    for key in ("reduction_factors", "reduction_boundaries"):
        raw[key] = tuple(raw[key])
    model = Synthesizer(SynthesizerConfig(**raw))
    model.load_state_dict(ckpt.state)
    model.eval()
    return model, Vocab(ckpt.config["vocab"])
