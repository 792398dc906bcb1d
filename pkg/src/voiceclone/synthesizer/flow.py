"""Text-conditioned invertible prior over latent sequences.

A stack of steps, each an invertible channel-mixing linear map followed by
an affine coupling whose scale/shift conditioner attends over the text
encoding and (causally) over earlier latent frames. The base density is a
standard normal, so log p(z) = log N(forward(z)) + log|det J_forward|.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import SynthesizerConfig
from .modules import CrossAttentionBlock, causality_mask, sinusoidal_positions, _attn_disallowed


class FlowNumericsError(RuntimeError):
    """A flow step produced non-finite values; carries the step index."""


def _as_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.ndim == 2:
        return x.unsqueeze(0), True
    if x.ndim == 3:
        return x, False
    raise ValueError("expected [frames, dim] or [batch, frames, dim]")


class InvertibleLinear(nn.Module):
    """Per-frame invertible channel mixing, identity-initialized by default."""

    def __init__(self, dim: int, identity_init: bool = True, generator: torch.Generator | None = None):
        super().__init__()
        if identity_init:
            weight = torch.eye(dim)
        else:
            gauss = torch.randn(dim, dim, generator=generator)
            weight, _ = torch.linalg.qr(gauss)  # random rotation, |det| = 1
        self.weight = nn.Parameter(weight.contiguous())

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        u = z @ self.weight.T
        logdet = torch.linalg.slogdet(self.weight).logabsdet * z.shape[-2]
        return u, logdet.expand(z.shape[0])

    def inverse(self, u: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = torch.linalg.solve(self.weight, u.transpose(-1, -2)).transpose(-1, -2)
        logdet = -torch.linalg.slogdet(self.weight).logabsdet * u.shape[-2]
        return z, logdet.expand(u.shape[0])


class AffineCoupling(nn.Module):
    """Affine coupling over a channel split.

    The untouched half plus attention context (text encoding, causal view
    of earlier latent frames) produce per-entry log-scale and shift for the
    transformed half; the log-determinant is the summed log-scale.
    """

    def __init__(
        self,
        config: SynthesizerConfig,
        flip: bool,
        identity_init: bool = True,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        self.flip = flip
        d = config.d_latent
        self.d_keep = d // 2
        self.d_change = d - self.d_keep
        hidden = config.flow_hidden
        self.in_proj = nn.Linear(self.d_keep, hidden)
        self.context_attn = nn.MultiheadAttention(
            hidden, config.n_heads, kdim=config.d_model, vdim=config.d_model,
            batch_first=True,
        )
        self.frame_attn = nn.MultiheadAttention(hidden, config.n_heads, batch_first=True)
        self.out_proj = nn.Linear(hidden, 2 * self.d_change)
        if identity_init:
            nn.init.zeros_(self.out_proj.weight)
            nn.init.zeros_(self.out_proj.bias)
        elif generator is not None:
            with torch.no_grad():
                self.out_proj.weight.copy_(
                    0.3 * torch.randn(self.out_proj.weight.shape, generator=generator)
                )
                self.out_proj.bias.copy_(
                    0.3 * torch.randn(self.out_proj.bias.shape, generator=generator)
                )

    def _split(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if self.flip:
            return z[..., self.d_keep :], z[..., : self.d_keep]
        return z[..., : self.d_keep], z[..., self.d_keep :]

    def _join(self, keep: torch.Tensor, change: torch.Tensor) -> torch.Tensor:
        if self.flip:
            return torch.cat([change, keep], dim=-1)
        return torch.cat([keep, change], dim=-1)

    def _scale_shift(
        self, keep: torch.Tensor, context: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        b, n, _ = keep.shape
        h = self.in_proj(keep)
        h = h + sinusoidal_positions(n, h.shape[-1], dtype=h.dtype).to(h.device)
        ctx = context.expand(b, -1, -1)
        attn_out, _ = self.context_attn(h, ctx, ctx, need_weights=False)
        h = h + attn_out
        frame_mask = _attn_disallowed(causality_mask(n).to(h.device))
        frame_out, _ = self.frame_attn(h, h, h, attn_mask=frame_mask, need_weights=False)
        h = h + frame_out
        log_scale, shift = self.out_proj(h).chunk(2, dim=-1)
        log_scale = torch.tanh(log_scale)  # bounded for stability
        return log_scale, shift

    def forward(
        self, z: torch.Tensor, context: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        keep, change = self._split(z)
        log_scale, shift = self._scale_shift(keep, context)
        out = change * torch.exp(log_scale) + shift
        return self._join(keep, out), log_scale.sum(dim=(-1, -2))

    def inverse(
        self, u: torch.Tensor, context: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        keep, transformed = self._split(u)
        log_scale, shift = self._scale_shift(keep, context)
        change = (transformed - shift) * torch.exp(-log_scale)
        return self._join(keep, change), -log_scale.sum(dim=(-1, -2))


class FlowPrior(nn.Module):
    """Invertible map between latent sequences and a standard-normal base."""

    def __init__(
        self,
        config: SynthesizerConfig,
        identity_init: bool = True,
        init_seed: int | None = None,
    ):
        super().__init__()
        self.config = config
        generator = None
        if init_seed is not None:
            generator = torch.Generator().manual_seed(init_seed)
        self.mixings = nn.ModuleList(
            InvertibleLinear(config.d_latent, identity_init, generator)
            for _ in range(config.flow_steps)
        )
        self.couplings = nn.ModuleList(
            AffineCoupling(config, flip=bool(i % 2), identity_init=identity_init, generator=generator)
            for i in range(config.flow_steps)
        )

    def _check(self, x: torch.Tensor, step: int, direction: str):
        if not torch.isfinite(x).all():
            raise FlowNumericsError(f"non-finite values after {direction} step {step}")

    def forward(
        self, z: torch.Tensor, context: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        x, squeeze = _as_batched(z)
        context, _ = _as_batched(context)
        logdet = x.new_zeros(x.shape[0])
        for i, (mixing, coupling) in enumerate(zip(self.mixings, self.couplings)):
            x, ld = mixing(x)
            logdet = logdet + ld
            x, ld = coupling(x, context)
            logdet = logdet + ld
            self._check(x, i, "forward")
        if squeeze:
            return x.squeeze(0), logdet.squeeze(0)
        return x, logdet

    def inverse(
        self, u: torch.Tensor, context: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        x, squeeze = _as_batched(u)
        context, _ = _as_batched(context)
        logdet = x.new_zeros(x.shape[0])
        steps = list(zip(self.mixings, self.couplings))
        for i, (mixing, coupling) in enumerate(reversed(steps)):
            x, ld = coupling.inverse(x, context)
            logdet = logdet + ld
            x, ld = mixing.inverse(x)
            logdet = logdet + ld
            self._check(x, len(steps) - 1 - i, "inverse")
        if squeeze:
            return x.squeeze(0), logdet.squeeze(0)
        return x, logdet

    def log_prob(self, z: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """log density of z under the flow-transformed standard normal."""
        x, squeeze = _as_batched(z)
        u, logdet = self.forward(x, context)
        n_entries = u.shape[-1] * u.shape[-2]
        base = -0.5 * (u**2).sum(dim=(-1, -2)) - 0.5 * n_entries * math.log(2 * math.pi)
        out = base + logdet
        return out.squeeze(0) if squeeze else out


def flow_forward(z, x_enc, prior: FlowPrior):
    return prior.forward(z, x_enc)


def flow_inverse(u, x_enc, prior: FlowPrior):
    return prior.inverse(u, x_enc)


def prior_log_prob(z, x_enc, prior: FlowPrior):
    return prior.log_prob(z, x_enc)
