"""GAN vocoder: upsampling generator, multi-scale discriminators, and the
least-squares adversarial / feature-matching / mel reconstruction losses.

The loss surface is the contract here; the generator/discriminator pair is
deliberately small so every summation structure (over discriminators, over
feature layers) is exercised at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import MelConfig, MelSpectrogram, Waveform, hann_window, mel_filterbank
from .checkpoint import save_checkpoint


@dataclass(frozen=True)
class VocoderConfig:
    mel: MelConfig = field(default_factory=MelConfig)
    upsample_rates: tuple[int, ...] = (8, 8, 4)
    base_channels: int = 32
    n_discriminators: int = 2
    disc_channels: int = 16
    lambda_fm: float = 2.0
    lambda_mel: float = 45.0
    lr: float = 2e-4

    def __post_init__(self):
        product = math.prod(self.upsample_rates)
        if product != self.mel.hop_size:
            raise ValueError(
                f"upsample rates multiply to {product}, must equal hop {self.mel.hop_size}"
            )
        if any(r % 2 for r in self.upsample_rates):
            raise ValueError("upsample rates must be even (keeps lengths exact)")
        if self.n_discriminators < 1:
            raise ValueError("need at least one discriminator")


def torch_mel_spectrogram(wave: torch.Tensor, cfg: MelConfig) -> torch.Tensor:
    """Differentiable mirror of the numpy log-mel transform."""
    if wave.ndim != 1:
        raise ValueError("expected a 1-D waveform tensor")
    if wave.shape[0] < cfg.win_size:
        raise ValueError("audio shorter than one window")
    frames = wave.unfold(0, cfg.win_size, cfg.hop_size)
    window = torch.as_tensor(hann_window(cfg.win_size), dtype=wave.dtype, device=wave.device)
    spectrum = torch.fft.rfft(frames * window, n=cfg.fft_size, dim=1)
    power = spectrum.real**2 + spectrum.imag**2
    fb = torch.as_tensor(mel_filterbank(cfg), dtype=wave.dtype, device=wave.device)
    mel_power = power @ fb.T
    return torch.log(torch.clamp(mel_power, min=cfg.log_floor))


class Generator(nn.Module):
    """Mel [n_frames, mel_bins] -> waveform of exactly n_frames * hop samples."""

    def __init__(self, config: VocoderConfig | None = None):
        super().__init__()
        self.config = config or VocoderConfig()
        cfg = self.config
        channels = cfg.base_channels
        self.pre = nn.Conv1d(cfg.mel.mel_bins, channels, kernel_size=7, padding=3)
        ups = []
        for rate in cfg.upsample_rates:
            out_channels = max(channels // 2, 4)
            ups.append(
                nn.ModuleDict(
                    {
                        "up": nn.ConvTranspose1d(
                            channels,
                            out_channels,
                            kernel_size=2 * rate,
                            stride=rate,
                            padding=rate // 2,
                        ),
                        "conv": nn.Conv1d(out_channels, out_channels, kernel_size=7, padding=3),
                    }
                )
            )
            channels = out_channels
        self.ups = nn.ModuleList(ups)
        self.post = nn.Conv1d(channels, 1, kernel_size=7, padding=3)

    def forward(self, mel_frames: torch.Tensor) -> torch.Tensor:
        if mel_frames.ndim != 2:
            raise ValueError("expected mel of shape [n_frames, mel_bins]")
        n_frames = mel_frames.shape[0]
        h = self.pre(mel_frames.T.unsqueeze(0))
        for block in self.ups:
            h = block["up"](F.leaky_relu(h, 0.1))
            h = h + block["conv"](F.leaky_relu(h, 0.1))
        wave = torch.tanh(self.post(h)).squeeze(0).squeeze(0)
        expected = n_frames * self.config.mel.hop_size
        assert wave.shape[0] == expected, f"generator length {wave.shape[0]} != {expected}"
        return wave


class ScaleDiscriminator(nn.Module):
    """One discriminator scale exposing per-layer feature maps and a score map."""

    def __init__(self, channels: int = 16):
        super().__init__()
        self.layers = nn.ModuleList(
            [
                nn.Conv1d(1, channels, kernel_size=15, stride=2, padding=7),
                nn.Conv1d(channels, channels, kernel_size=15, stride=2, padding=7),
                nn.Conv1d(channels, channels, kernel_size=5, stride=1, padding=2),
            ]
        )
        self.score = nn.Conv1d(channels, 1, kernel_size=3, padding=1)

    def forward(self, wave: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        h = wave.reshape(1, 1, -1)
        features = []
        for layer in self.layers:
            h = F.leaky_relu(layer(h), 0.1)
            features.append(h)
        return features, self.score(h).squeeze(0).squeeze(0)


class DiscriminatorSet(nn.Module):
    """K discriminators; the k-th sees the waveform average-pooled 2^k times."""

    def __init__(self, config: VocoderConfig | None = None):
        super().__init__()
        self.config = config or VocoderConfig()
        self.discriminators = nn.ModuleList(
            ScaleDiscriminator(self.config.disc_channels)
            for _ in range(self.config.n_discriminators)
        )

    def __len__(self) -> int:
        return len(self.discriminators)

    def forward(self, wave: torch.Tensor) -> list[tuple[list[torch.Tensor], torch.Tensor]]:
        outputs = []
        scaled = wave.reshape(1, 1, -1)
        for k, disc in enumerate(self.discriminators):
            if k > 0:
                scaled = F.avg_pool1d(scaled, kernel_size=2, stride=2)
            outputs.append(disc(scaled.squeeze(0).squeeze(0)))
        return outputs


def adv_loss_d(score_real: torch.Tensor, score_fake: torch.Tensor) -> torch.Tensor:
    """(D(x) - 1)^2 + D(G(s))^2, averaged over score entries."""
    if not (torch.isfinite(score_real).all() and torch.isfinite(score_fake).all()):
        raise ValueError("discriminator scores must be finite")
    return ((score_real - 1.0) ** 2).mean() + (score_fake**2).mean()


def adv_loss_g(score_fake: torch.Tensor) -> torch.Tensor:
    """(D(G(s)) - 1)^2, averaged over score entries."""
    if not torch.isfinite(score_fake).all():
        raise ValueError("discriminator scores must be finite")
    return ((score_fake - 1.0) ** 2).mean()


def feature_matching_loss(
    feats_real: Sequence[torch.Tensor], feats_fake: Sequence[torch.Tensor]
) -> torch.Tensor:
    """Sum over layers of the per-layer mean absolute feature difference."""
    if len(feats_real) != len(feats_fake):
        raise ValueError(
            f"layer count mismatch: {len(feats_real)} vs {len(feats_fake)}"
        )
    total = None
    for real, fake in zip(feats_real, feats_fake):
        if real.shape != fake.shape:
            raise ValueError(f"feature shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
        term = (real - fake).abs().sum() / real.numel()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("need at least one feature layer")
    return total


def mel_loss(x: Waveform | torch.Tensor, x_hat: Waveform | torch.Tensor, cfg: MelConfig) -> torch.Tensor:
    """Mean absolute log-mel difference between two equal-length waveforms."""
    a = torch.as_tensor(x.samples if isinstance(x, Waveform) else x)
    b = torch.as_tensor(x_hat.samples if isinstance(x_hat, Waveform) else x_hat)
    if a.shape != b.shape:
        raise ValueError(f"waveform length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.dtype != b.dtype:
        a, b = a.double(), b.double()
    return (torch_mel_spectrogram(a, cfg) - torch_mel_spectrogram(b, cfg)).abs().mean()


@dataclass(frozen=True)
class VocoderLossBreakdown:
    """Per-discriminator terms plus the recomposed totals.

    loss_g and loss_d are derived here with a fixed left-to-right
    accumulation so the recomposition identity is exact at float64.
    """

    adv_g: tuple[torch.Tensor, ...]
    adv_d: tuple[torch.Tensor, ...]
    fm: tuple[torch.Tensor, ...]
    mel: torch.Tensor
    lambda_fm: float
    lambda_mel: float
    loss_g: torch.Tensor = field(init=False)
    loss_d: torch.Tensor = field(init=False)

    def __post_init__(self):
        if not (len(self.adv_g) == len(self.adv_d) == len(self.fm)):
            raise ValueError("per-discriminator term tuples must align")
        for name, terms in (("adv_g", self.adv_g), ("adv_d", self.adv_d), ("fm", self.fm)):
            for t in terms:
                if float(t.detach()) < 0:
                    raise ValueError(f"{name} term is negative")
        if float(self.mel.detach()) < 0:
            raise ValueError("mel term is negative")
        loss_g = None
        for g, f in zip(self.adv_g, self.fm):
            term = g.double() + self.lambda_fm * f.double()
            loss_g = term if loss_g is None else loss_g + term
        loss_g = loss_g + self.lambda_mel * self.mel.double()
        loss_d = None
        for d in self.adv_d:
            loss_d = d.double() if loss_d is None else loss_d + d.double()
        object.__setattr__(self, "loss_g", loss_g)
        object.__setattr__(self, "loss_d", loss_d)

    def as_floats(self) -> dict:
        return {
            "adv_g": [float(t.detach()) for t in self.adv_g],
            "adv_d": [float(t.detach()) for t in self.adv_d],
            "fm": [float(t.detach()) for t in self.fm],
            "mel": float(self.mel.detach()),
            "loss_g": float(self.loss_g.detach()),
            "loss_d": float(self.loss_d.detach()),
        }


def vocoder_losses(
    x: torch.Tensor,
    mel_frames: torch.Tensor,
    generator: Generator,
    discriminators: DiscriminatorSet,
    lambda_fm: float | None = None,
    lambda_mel: float | None = None,
) -> VocoderLossBreakdown:
    """All loss terms for one (real waveform, mel) pair.

    The discriminator terms score the generator output detached, as used
    by the discriminator update.
    """
    cfg = generator.config
    lambda_fm = cfg.lambda_fm if lambda_fm is None else lambda_fm
    lambda_mel = cfg.lambda_mel if lambda_mel is None else lambda_mel
    expected = mel_frames.shape[0] * cfg.mel.hop_size
    if x.shape[0] != expected:
        raise ValueError(
            f"waveform has {x.shape[0]} samples, mel implies {expected}"
        )
    x_hat = generator(mel_frames)
    real_out = discriminators(x)
    fake_out = discriminators(x_hat)
    fake_detached = discriminators(x_hat.detach())
    adv_g, adv_d, fm = [], [], []
    for (feats_r, score_r), (feats_f, score_f), (_, score_fd) in zip(
        real_out, fake_out, fake_detached
    ):
        adv_g.append(adv_loss_g(score_f))
        adv_d.append(adv_loss_d(score_r, score_fd))
        fm.append(feature_matching_loss([f.detach() for f in feats_r], feats_f))
    return VocoderLossBreakdown(
        adv_g=tuple(adv_g),
        adv_d=tuple(adv_d),
        fm=tuple(fm),
        mel=mel_loss(x, x_hat, cfg.mel),
        lambda_fm=lambda_fm,
        lambda_mel=lambda_mel,
    )


def train_vocoder(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    config: VocoderConfig | None = None,
    *,
    steps: int = 300,
    seed: int = 0,
    out_path: str | Path | None = None,
    config_extra: dict | None = None,
) -> tuple[Generator, DiscriminatorSet, list[dict]]:
    """Alternating D/G training on (waveform samples, mel frames) pairs."""
    if not pairs:
        raise ValueError("empty manifest")
    config = config or VocoderConfig()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    generator = Generator(config)
    discriminators = DiscriminatorSet(config)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=(0.8, 0.99))
    opt_d = torch.optim.Adam(discriminators.parameters(), lr=config.lr, betas=(0.8, 0.99))

    history: list[dict] = []
    for step in range(steps):
        wave_np, mel_np = pairs[rng.integers(len(pairs))]
        x = torch.as_tensor(wave_np, dtype=torch.float32)
        mel_frames = torch.as_tensor(mel_np, dtype=torch.float32)

        x_hat = generator(mel_frames)
        assert x_hat.shape[0] == mel_frames.shape[0] * config.mel.hop_size

        # discriminator step on the detached generator output
        d_loss = None
        fake_detached = discriminators(x_hat.detach())
        real_out = discriminators(x)
        for (_, score_r), (_, score_fd) in zip(real_out, fake_detached):
            term = adv_loss_d(score_r, score_fd)
            d_loss = term if d_loss is None else d_loss + term
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # generator step
        real_out = discriminators(x)
        fake_out = discriminators(x_hat)
        g_loss = None
        fm_terms, adv_terms = [], []
        for (feats_r, _), (feats_f, score_f) in zip(real_out, fake_out):
            adv = adv_loss_g(score_f)
            fm = feature_matching_loss([f.detach() for f in feats_r], feats_f)
            adv_terms.append(float(adv.detach()))
            fm_terms.append(float(fm.detach()))
            term = adv + config.lambda_fm * fm
            g_loss = term if g_loss is None else g_loss + term
        mel_term = mel_loss(x, x_hat, config.mel)
        g_loss = g_loss + config.lambda_mel * mel_term
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        history.append(
            {
                "step": step,
                "loss_d": float(d_loss.detach()),
                "loss_g": float(g_loss.detach()),
                "mel": float(mel_term.detach()),
                "adv_g": adv_terms,
                "fm": fm_terms,
            }
        )

    if out_path is not None:
        save_checkpoint(
            out_path,
            kind="vocoder",
            config={
                **{k: v for k, v in asdict(config).items() if k != "mel"},
                "mel": asdict(config.mel),
                "seed": seed,
                "steps": steps,
                **(config_extra or {}),
            },
            state=generator.state_dict(),
        )
    return generator, discriminators, history


def load_generator(path: str | Path) -> Generator:
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(path, expected_kind="vocoder")
    raw = dict(ckpt.config)
    mel = MelConfig(**raw["mel"])
    fields = set(VocoderConfig.__dataclass_fields__) - {"mel"}
    config = VocoderConfig(
        mel=mel,
        **{k: (tuple(v) if isinstance(v, list) else v) for k, v in raw.items() if k in fields},
    )
    generator = Generator(config)
    generator.load_state_dict(ckpt.state)
    generator.eval()
    return generator


def vocode(generator: Generator, mel: MelSpectrogram) -> Waveform:
    """Run the generator on a mel-spectrogram, returning 16 kHz audio."""
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            frames = torch.as_tensor(mel.frames, dtype=torch.float32)
            wave = generator(frames).double().numpy()
    finally:
        generator.train(was_training)
    return Waveform(wave, mel.config.sample_rate)
