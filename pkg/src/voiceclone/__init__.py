"""Voice cloning pipeline: speaker encoder, non-autoregressive VAE synthesizer
with a flow prior, GAN vocoder losses, dataset tooling and a listening-test
harness."""

__version__ = "0.1.0"
