"""Synthesizer hyperparameters and training schedules."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SynthesizerConfig:
    vocab_size: int
    mel_bins: int = 80
    base_dim: int = 256
    speaker_dim: int = 256
    d_latent: int = 128
    n_heads: int = 2
    encoder_layers: int = 2
    posterior_layers: int = 1
    decoder_layers: int = 2
    flow_steps: int = 4
    flow_hidden: int = 128
    ff_mult: int = 2
    logvar_clamp: float = 10.0
    # alpha rises linearly 0 -> alpha_max over alpha_warmup_steps
    alpha_max: float = 1.0
    alpha_warmup_steps: int = 2000
    beta: float = 1.0
    # mel frames per latent frame, stepped down at the boundary steps
    reduction_factors: tuple[int, ...] = (4, 3, 2, 1)
    reduction_boundaries: tuple[int, ...] = (500, 1000, 1500)
    temperature: float = 0.667
    lr: float = 1e-3
    max_output_frames: int = 4000

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved ids")
        if self.d_model % self.n_heads != 0:
            raise ValueError("base_dim + speaker_dim must be divisible by n_heads")
        if self.d_latent % 2 != 0:
            raise ValueError("d_latent must be even (coupling splits channels)")
        if len(self.reduction_boundaries) != len(self.reduction_factors) - 1:
            raise ValueError("need one boundary fewer than reduction factors")
        if any(f < 1 for f in self.reduction_factors):
            raise ValueError("reduction factors must be >= 1")
        if list(self.reduction_boundaries) != sorted(self.reduction_boundaries):
            raise ValueError("reduction boundaries must be ascending")

    @property
    def d_model(self) -> int:
        return self.base_dim + self.speaker_dim


def anneal_schedules(step: int, config: SynthesizerConfig) -> tuple[float, int]:
    """(alpha, reduction_factor) for a training step.

    alpha ramps linearly from 0 to alpha_max across the warmup; the
    reduction factor walks down its descending sequence at the boundaries.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    if config.alpha_warmup_steps <= 0:
        alpha = config.alpha_max
    else:
        alpha = config.alpha_max * min(1.0, step / config.alpha_warmup_steps)
    idx = sum(1 for b in config.reduction_boundaries if step >= b)
    return alpha, config.reduction_factors[idx]
