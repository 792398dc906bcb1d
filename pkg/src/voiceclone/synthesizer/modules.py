"""Synthesizer building blocks: text encoder with speaker conditioning,
mel posterior, one-shot decoder, and the gradient-stopped length predictor.

Everything operates on single utterances ([time, channels] tensors); the
flow prior additionally accepts batched input for density evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import SynthesizerConfig


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sine/cosine position table of shape [n, dim]."""
    position = torch.arange(n, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype)
    angle = position / torch.pow(torch.tensor(10000.0, dtype=dtype), half / dim)
    table = torch.zeros(n, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return table


def causality_mask(n: int) -> torch.Tensor:
    """Boolean [n, n] matrix where entry (i, j) is True iff j <= i."""
    if n < 1:
        raise ValueError("mask size must be >= 1")
    return torch.tril(torch.ones(n, n, dtype=torch.bool))


def _attn_disallowed(allowed: torch.Tensor) -> torch.Tensor:
    # nn.MultiheadAttention masks where True means "blocked"
    return ~allowed


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian over latent frames; log-variance is clamped."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ValueError("mean and log_variance must share a shape")
        if not torch.isfinite(self.mean).all() or not torch.isfinite(self.log_variance).all():
            raise ValueError("posterior parameters must be finite")

    @property
    def n_frames(self) -> int:
        return self.mean.shape[0]


@dataclass
class LengthPrediction:
    """Predicted output frame count, kept positive via log parameterization."""

    log_predicted: torch.Tensor  # 0-dim tensor, gradient-carrying
    ground_truth: int | None = None

    @property
    def predicted(self) -> float:
        return float(torch.exp(self.log_predicted))

    @property
    def predicted_frames(self) -> int:
        return max(1, round(self.predicted))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feed-forward, optional attention mask."""

    def __init__(self, dim: int, n_heads: int, ff_mult: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_mult * dim), nn.ReLU(), nn.Linear(ff_mult * dim, dim)
        )

    def forward(self, x: torch.Tensor, allowed: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm1(x)
        mask = None if allowed is None else _attn_disallowed(allowed)
        attn_out, _ = self.attn(h, h, h, attn_mask=mask, need_weights=False)
        x = x + attn_out
        return x + self.ff(self.norm2(x))


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention from a query sequence onto a context."""

    def __init__(self, dim: int, context_dim: int, n_heads: int, ff_mult: int = 2):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(
            dim, n_heads, kdim=context_dim, vdim=context_dim, batch_first=True
        )
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_mult * dim), nn.ReLU(), nn.Linear(ff_mult * dim, dim)
        )

    def forward(
        self, x: torch.Tensor, context: torch.Tensor, need_weights: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        attn_out, weights = self.attn(
            self.norm(x), context, context, need_weights=need_weights,
            average_attn_weights=True,
        )
        x = x + attn_out
        return x + self.ff(self.norm2(x)), weights


class TextEncoder(nn.Module):
    """Token embedding + self-attention; the speaker vector is broadcast and
    concatenated onto every position, so columns [base_dim:] of the output
    are exactly the speaker embedding."""

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        self.config = config
        if config.base_dim % config.n_heads != 0:
            raise ValueError("base_dim must be divisible by n_heads")
        self.embedding = nn.Embedding(config.vocab_size, config.base_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.base_dim, config.n_heads, config.ff_mult)
            for _ in range(config.encoder_layers)
        )

    def forward(self, token_ids: torch.Tensor, speaker: torch.Tensor) -> torch.Tensor:
        if token_ids.ndim != 1 or token_ids.numel() == 0:
            raise ValueError("token_ids must be a non-empty 1-D id tensor")
        if speaker.ndim != 1 or speaker.shape[0] != self.config.speaker_dim:
            raise ValueError(
                f"speaker embedding must have dim {self.config.speaker_dim}"
            )
        x = self.embedding(token_ids)
        x = x + sinusoidal_positions(x.shape[0], x.shape[1], dtype=x.dtype).to(x.device)
        x = x.unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        x = x.squeeze(0)
        conditioned = torch.cat(
            [x, speaker.to(x.dtype).unsqueeze(0).expand(x.shape[0], -1)], dim=-1
        )
        if not torch.isfinite(conditioned).all():
            raise ValueError("text encoding produced non-finite values")
        return conditioned


def pool_frames(frames: torch.Tensor, reduction: int) -> torch.Tensor:
    """Mean-pool groups of `reduction` frames, repeating the last frame to
    fill the final group; output length is ceil(n / reduction)."""
    if reduction == 1:
        return frames
    n = frames.shape[0]
    n_groups = math.ceil(n / reduction)
    pad = n_groups * reduction - n
    if pad:
        frames = torch.cat([frames, frames[-1:].expand(pad, -1)], dim=0)
    return frames.reshape(n_groups, reduction, -1).mean(dim=1)


class PosteriorEncoder(nn.Module):
    """Train-time Gaussian over latent frames given the target mel and text."""

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.prenet = nn.Sequential(
            nn.Linear(config.mel_bins, d), nn.ReLU(), nn.Linear(d, d)
        )
        self.self_block = TransformerBlock(d, config.n_heads, config.ff_mult)
        self.cross_blocks = nn.ModuleList(
            CrossAttentionBlock(d, d, config.n_heads, config.ff_mult)
            for _ in range(config.posterior_layers)
        )
        self.mean_head = nn.Linear(d, config.d_latent)
        self.logvar_head = nn.Linear(d, config.d_latent)

    def forward(
        self, x_enc: torch.Tensor, mel_frames: torch.Tensor, reduction: int
    ) -> GaussianPosterior:
        pooled = pool_frames(self.prenet(mel_frames), reduction)
        h = pooled + sinusoidal_positions(
            pooled.shape[0], pooled.shape[1], dtype=pooled.dtype
        ).to(pooled.device)
        h = self.self_block(h.unsqueeze(0))
        for block in self.cross_blocks:
            h, _ = block(h, x_enc.unsqueeze(0))
        h = h.squeeze(0)
        clamp = self.config.logvar_clamp
        return GaussianPosterior(
            mean=self.mean_head(h),
            log_variance=self.logvar_head(h).clamp(-clamp, clamp),
        )


class Decoder(nn.Module):
    """One-shot decoder: all output frames are produced by a single call,
    and no frame's computation reads another frame's output. `calls` counts
    invocations so the non-autoregressive contract can be asserted."""

    MAX_REDUCTION = 8

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.input_proj = nn.Linear(config.d_latent, d)
        self.self_blocks = nn.ModuleList(
            TransformerBlock(d, config.n_heads, config.ff_mult)
            for _ in range(config.decoder_layers)
        )
        self.cross_blocks = nn.ModuleList(
            CrossAttentionBlock(d, d, config.n_heads, config.ff_mult)
            for _ in range(config.decoder_layers)
        )
        self.group_position = nn.Embedding(self.MAX_REDUCTION, d)
        self.out = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, config.mel_bins))
        self.calls = 0

    def reset_call_counter(self):
        self.calls = 0

    def forward(
        self,
        z: torch.Tensor,
        x_enc: torch.Tensor,
        reduction: int,
        isolate_frames: bool = False,
        causal: bool = True,
        collect_attention: bool = False,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """[n_latent, d_latent] -> ([n_latent * reduction, mel_bins], attn maps).

        isolate_frames is a diagnostic mode restricting self-attention to
        the diagonal so latent frame i can only influence output group i.
        """
        if not (1 <= reduction <= self.MAX_REDUCTION):
            raise ValueError(f"reduction must be in 1..{self.MAX_REDUCTION}")
        self.calls += 1
        n = z.shape[0]
        h = self.input_proj(z)
        h = h + sinusoidal_positions(n, h.shape[1], dtype=h.dtype).to(h.device)
        if isolate_frames:
            allowed = torch.eye(n, dtype=torch.bool, device=h.device)
        elif causal:
            allowed = causality_mask(n).to(h.device)
        else:
            allowed = None
        h = h.unsqueeze(0)
        attention_maps = []
        for self_block, cross_block in zip(self.self_blocks, self.cross_blocks):
            h = self_block(h, allowed)
            if isolate_frames:
                continue  # diagnostic mode: no cross-frame or text mixing
            h, weights = cross_block(h, x_enc.unsqueeze(0), need_weights=collect_attention)
            if collect_attention and weights is not None:
                attention_maps.append(weights.squeeze(0).detach())
        h = h.squeeze(0)
        # upsample: each latent frame emits `reduction` mel frames in parallel
        expanded = h.repeat_interleave(reduction, dim=0)
        group_idx = torch.arange(n * reduction, device=h.device) % reduction
        expanded = expanded + self.group_position(group_idx).to(h.dtype)
        return self.out(expanded), attention_maps


class LengthPredictor(nn.Module):
    """Predicts log output length from the text encoding.

    The input is detached inside forward, so no gradient from the length
    loss ever reaches text-encoder parameters.
    """

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        d = config.d_model
        self.net = nn.Sequential(nn.Linear(d, d // 2), nn.ReLU(), nn.Linear(d // 2, 1))

    def forward(self, x_enc: torch.Tensor, ground_truth: int | None = None) -> LengthPrediction:
        pooled = x_enc.detach().mean(dim=0)
        return LengthPrediction(
            log_predicted=self.net(pooled).squeeze(-1), ground_truth=ground_truth
        )
