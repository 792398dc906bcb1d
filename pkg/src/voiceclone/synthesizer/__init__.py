from .config import SynthesizerConfig, anneal_schedules
from .flow import FlowNumericsError, FlowPrior, flow_forward, flow_inverse, prior_log_prob
from .losses import (
    SynthLossBreakdown,
    diag_gaussian_log_prob,
    gaussian_kl_standard_normal,
    kl_monte_carlo,
    reparameterize,
    synthesizer_loss,
)
from .model import Synthesizer, load_synthesizer, save_synthesizer
from .modules import (
    Decoder,
    GaussianPosterior,
    LengthPrediction,
    LengthPredictor,
    PosteriorEncoder,
    TextEncoder,
    causality_mask,
    pool_frames,
)
from .train import TrainExample, prepare_examples, train_synthesizer, write_pgm

__all__ = [
    "SynthesizerConfig",
    "anneal_schedules",
    "FlowNumericsError",
    "FlowPrior",
    "flow_forward",
    "flow_inverse",
    "prior_log_prob",
    "SynthLossBreakdown",
    "diag_gaussian_log_prob",
    "gaussian_kl_standard_normal",
    "kl_monte_carlo",
    "reparameterize",
    "synthesizer_loss",
    "Synthesizer",
    "load_synthesizer",
    "save_synthesizer",
    "Decoder",
    "GaussianPosterior",
    "LengthPrediction",
    "LengthPredictor",
    "PosteriorEncoder",
    "TextEncoder",
    "causality_mask",
    "pool_frames",
    "TrainExample",
    "prepare_examples",
    "train_synthesizer",
    "write_pgm",
]
