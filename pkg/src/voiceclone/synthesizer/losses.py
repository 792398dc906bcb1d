"""Training objective of the synthesizer.

Total loss is reconstruction MSE plus a weighted KL between the mel
posterior and the text-conditioned flow prior plus a weighted squared
error on log output length. The KL is a single-sample Monte-Carlo
estimate against the flow; the closed form is available when the prior
is known to be the identity flow (standard normal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .flow import FlowPrior
from .modules import GaussianPosterior

_RECOMPOSE_TOL = 1e-9


@dataclass(frozen=True)
class SynthLossBreakdown:
    reconstruction: torch.Tensor
    kl: torch.Tensor
    length: torch.Tensor
    alpha: float
    beta: float
    total: torch.Tensor

    def __post_init__(self):
        values = self.as_floats()
        recomposed = (
            values["reconstruction"]
            + self.alpha * values["kl"]
            + self.beta * values["length"]
        )
        if not math.isclose(values["total"], recomposed, rel_tol=0, abs_tol=_RECOMPOSE_TOL):
            raise ValueError(f"total {values['total']} != recomposition {recomposed}")

    def as_floats(self) -> dict[str, float]:
        return {
            "reconstruction": float(self.reconstruction.detach()),
            "kl": float(self.kl.detach()),
            "length": float(self.length.detach()),
            "alpha": self.alpha,
            "beta": self.beta,
            "total": float(self.total.detach()),
        }


def diag_gaussian_log_prob(
    z: torch.Tensor, mean: torch.Tensor, log_variance: torch.Tensor
) -> torch.Tensor:
    """Summed log density of z under a diagonal Gaussian."""
    return -0.5 * (
        ((z - mean) ** 2) / torch.exp(log_variance)
        + log_variance
        + math.log(2 * math.pi)
    ).sum()


def gaussian_kl_standard_normal(q: GaussianPosterior) -> torch.Tensor:
    """Closed-form KL(q || N(0, I)) summed over all latent entries."""
    var = torch.exp(q.log_variance)
    return 0.5 * (var + q.mean**2 - 1.0 - q.log_variance).sum()


def reparameterize(
    q: GaussianPosterior,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Sample z = mean + std * eps with eps ~ N(0, I) from the given rng."""
    if noise is None:
        noise = torch.randn(
            q.mean.shape, generator=generator, dtype=q.mean.dtype, device=q.mean.device
        )
    elif noise.shape != q.mean.shape:
        raise ValueError("noise must match the posterior shape")
    return q.mean + torch.exp(0.5 * q.log_variance) * noise


def kl_monte_carlo(
    q: GaussianPosterior,
    prior: FlowPrior,
    x_enc: torch.Tensor,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Single-sample estimate of KL(q || prior); returns (kl, z)."""
    z = reparameterize(q, generator=generator, noise=noise)
    log_q = diag_gaussian_log_prob(z, q.mean, q.log_variance)
    log_p = prior.log_prob(z, x_enc)
    return log_q - log_p, z


def synthesizer_loss(
    y: torch.Tensor,
    y_tilde: torch.Tensor,
    q: GaussianPosterior,
    prior: FlowPrior,
    x_enc: torch.Tensor,
    ground_truth_frames: int,
    log_predicted_frames: torch.Tensor,
    alpha: float,
    beta: float,
    *,
    kl_mode: str = "mc",
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> SynthLossBreakdown:
    """Eq-style three-term objective over one utterance.

    y_tilde may be longer than y (latent upsampling overshoot); the excess
    tail is ignored. kl_mode "mc" draws one reparameterized sample against
    the flow prior; "closed_form" is only valid when the prior is the
    identity flow over a standard normal base.
    """
    if y_tilde.shape[0] < y.shape[0] or y_tilde.shape[1] != y.shape[1]:
        raise ValueError(
            f"prediction {tuple(y_tilde.shape)} cannot cover target {tuple(y.shape)}"
        )
    if ground_truth_frames < 1:
        raise ValueError("ground-truth length must be >= 1 frame")
    reconstruction = ((y_tilde[: y.shape[0]] - y) ** 2).mean()
    if kl_mode == "mc":
        kl, _ = kl_monte_carlo(q, prior, x_enc, generator=generator, noise=noise)
    elif kl_mode == "closed_form":
        kl = gaussian_kl_standard_normal(q)
    else:
        raise ValueError(f"unknown kl_mode {kl_mode!r}")
    length = (math.log(ground_truth_frames) - log_predicted_frames) ** 2
    # combine in float64 so the breakdown recomposes to the total exactly
    reconstruction, kl, length = reconstruction.double(), kl.double(), length.double()
    total = reconstruction + alpha * kl + beta * length
    return SynthLossBreakdown(
        reconstruction=reconstruction,
        kl=kl,
        length=length,
        alpha=alpha,
        beta=beta,
        total=total,
    )
