import numpy as np
import pytest
import torch

from voiceclone.audio import MelConfig, MelSpectrogram, mel_spectrogram
from voiceclone.speaker import (
    SpeakerEncoderConfig,
    embed_utterance,
    train_speaker_encoder_on_mels,
)
from voiceclone.synthesizer import (
    SynthesizerConfig,
    TrainExample,
    train_synthesizer,
)
from voiceclone.textnorm import build_vocab, normalize_text, tokenize
from voiceclone.toydata import TOY_TEXTS, make_sine_pairs, toy_utterance
from voiceclone.vocoder import VocoderConfig, train_vocoder

N_TOY_UTTERANCES = 50


@pytest.fixture(autouse=True)
def _single_threaded_torch():
    # keeps tiny-model training deterministic and avoids oversubscription
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_mels_by_speaker():
    """2 speakers x 50 synthetic utterances as mel frame arrays."""
    mels = {}
    for s in range(2):
        mels[f"spk{s}"] = [
            mel_spectrogram(toy_utterance(s, u, seconds=1.0, seed=123)).frames
            for u in range(N_TOY_UTTERANCES)
        ]
    return mels


@pytest.fixture(scope="session")
def toy_speaker_config():
    return SpeakerEncoderConfig(
        mel_bins=80,
        hidden_size=64,
        num_layers=2,
        embedding_dim=32,
        min_frames=20,
        partial_frames=59,
        lr=5e-3,
    )


@pytest.fixture(scope="session")
def trained_speaker(toy_mels_by_speaker, toy_speaker_config):
    """Speaker encoder trained 200 steps on the first 40 utterances per speaker."""
    torch.set_num_threads(1)
    train_split = {k: v[:40] for k, v in toy_mels_by_speaker.items()}
    model, losses = train_speaker_encoder_on_mels(
        train_split,
        toy_speaker_config,
        steps=200,
        batch_speakers=2,
        batch_utterances=4,
        seed=1,
    )
    return model, losses


@pytest.fixture(scope="session")
def toy_synth_setup(toy_mels_by_speaker, trained_speaker):
    """Training examples, vocab and a small config for the synthesizer."""
    speaker_model, _ = trained_speaker
    raw = []
    for s, spk in enumerate(sorted(toy_mels_by_speaker)):
        for u, frames in enumerate(toy_mels_by_speaker[spk][:10]):
            text = normalize_text(TOY_TEXTS[(s + u) % len(TOY_TEXTS)])
            raw.append((text, frames, spk, f"{spk}_utt{u:03d}"))
    vocab = build_vocab(text for text, _, _, _ in raw)
    examples = [
        TrainExample(
            ids=tokenize(text, vocab),
            mel=frames,
            speaker_vec=embed_utterance(MelSpectrogram(frames), speaker_model).vector,
            utt_id=utt_id,
        )
        for text, frames, _, utt_id in raw
    ]
    config = SynthesizerConfig(
        vocab_size=len(vocab),
        mel_bins=80,
        base_dim=32,
        speaker_dim=speaker_model.config.embedding_dim,
        d_latent=8,
        n_heads=2,
        encoder_layers=1,
        posterior_layers=1,
        decoder_layers=1,
        flow_steps=2,
        flow_hidden=16,
        alpha_max=0.05,
        alpha_warmup_steps=400,
        beta=1.0,
        reduction_factors=(2, 1),
        reduction_boundaries=(150,),
        lr=2e-3,
    )
    return examples, vocab, config


@pytest.fixture(scope="session")
def trained_synth(toy_synth_setup, tmp_path_factory):
    """Synthesizer trained 400 steps on the 20-utterance toy split."""
    torch.set_num_threads(1)
    examples, vocab, config = toy_synth_setup
    attention_dir = tmp_path_factory.mktemp("attention")
    model, history = train_synthesizer(
        examples,
        vocab,
        config,
        steps=400,
        seed=11,
        attention_dir=attention_dir,
        attention_every=100,
    )
    return model, history, vocab, attention_dir


CLI_TINY_OVERRIDES = [
    "mel_fft_size=256",
    "mel_win_size=256",
    "mel_hop_size=64",
    "mel_bins=16",
    "speaker_hidden=32",
    "speaker_layers=1",
    "speaker_dim=16",
    "speaker_min_frames=10",
    "speaker_partial_frames=60",
    "speaker_steps=25",
    "synth_base_dim=16",
    "synth_d_latent=8",
    "synth_encoder_layers=1",
    "synth_decoder_layers=1",
    "synth_flow_steps=2",
    "synth_flow_hidden=16",
    "synth_alpha_max=0.05",
    "synth_alpha_warmup_steps=40",
    "synth_reduction_factors=2,1",
    "synth_reduction_boundaries=20",
    "synth_steps=40",
    "vocoder_rates=4,4,4",
    "vocoder_channels=8",
    "vocoder_disc_channels=8",
    "vocoder_steps=15",
]


def cli_args_with_overrides(*argv):
    extra = []
    for override in CLI_TINY_OVERRIDES:
        extra.extend(["--set", override])
    return list(argv) + extra


def run_cli_checked(*argv, expect=0):
    from voiceclone.cli import main

    code = main(list(argv))
    assert code == expect, f"exit {code} != {expect} for {argv}"
    return code


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    from voiceclone.audio import save_waveform
    from voiceclone.toydata import make_toy_corpus

    root = tmp_path_factory.mktemp("cli_e2e")
    make_toy_corpus(root / "corpus", n_speakers=2, utterances_per_speaker=6, seconds=0.35)
    for s in range(2):
        save_waveform(toy_utterance(s, 99, seconds=1.2, seed=7), root / "refs" / f"spk{s}.wav")
    return root


@pytest.fixture(scope="session")
def cli_preprocessed(cli_workspace):
    run_cli_checked(*cli_args_with_overrides(
        "preprocess", "--workdir", str(cli_workspace), "--corpus", "corpus", "--out", "data"
    ))
    return cli_workspace / "data"


@pytest.fixture(scope="session")
def cli_checkpoints(cli_workspace, cli_preprocessed):
    ckpt_dir = cli_workspace / "ckpt"
    run_cli_checked(*cli_args_with_overrides(
        "train", "speaker", "--workdir", str(cli_workspace),
        "--manifest", "data/manifest.jsonl", "--out", "ckpt/speaker.ckpt",
    ))
    run_cli_checked(*cli_args_with_overrides(
        "train", "synth", "--workdir", str(cli_workspace),
        "--manifest", "data/manifest.jsonl", "--out", "ckpt/synth.ckpt",
        "--speaker-ckpt", "ckpt/speaker.ckpt",
    ))
    run_cli_checked(*cli_args_with_overrides(
        "train", "vocoder", "--workdir", str(cli_workspace),
        "--manifest", "data/manifest.jsonl", "--out", "ckpt/vocoder.ckpt",
    ))
    return ckpt_dir


@pytest.fixture(scope="session")
def toy_vocoder_config():
    return VocoderConfig(
        mel=MelConfig(fft_size=256, win_size=256, hop_size=64, mel_bins=16, fmax=8000.0),
        upsample_rates=(4, 4, 4),
        base_channels=16,
        disc_channels=8,
        lr=5e-4,
    )


@pytest.fixture(scope="session")
def toy_sine_pairs(toy_vocoder_config):
    return make_sine_pairs(toy_vocoder_config.mel, n_items=12, seconds=0.25, seed=0)


@pytest.fixture(scope="session")
def trained_vocoder(toy_vocoder_config, toy_sine_pairs):
    """Generator/discriminators trained 300 steps on the sine corpus."""
    torch.set_num_threads(1)
    generator, discriminators, history = train_vocoder(
        toy_sine_pairs, toy_vocoder_config, steps=300, seed=0
    )
    return generator, discriminators, history


def assert_relative_gradients_match(analytic: np.ndarray, numeric: np.ndarray, tol: float = 1e-4):
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = scale > 1e-8
    if mask.any():
        rel = np.abs(analytic - numeric)[mask] / scale[mask]
        assert rel.max() < tol, f"max relative gradient error {rel.max():.3e}"
    np.testing.assert_allclose(analytic[~mask], numeric[~mask], atol=1e-7)


def central_difference_gradient(fn, tensor: torch.Tensor, indices, eps: float = 1e-5):
    """Central finite differences of scalar fn at the given flat indices.

    Writes through multi-indices on the original tensor so perturbations
    land even when the storage is non-contiguous.
    """
    target = tensor.detach()
    grads = []
    with torch.no_grad():
        for idx in indices:
            multi = np.unravel_index(int(idx), tuple(tensor.shape)) if tensor.ndim else ()
            orig = target[multi].item() if tensor.ndim else target.item()
            def put(value):
                if tensor.ndim:
                    target[multi] = value
                else:
                    target.fill_(value)
            put(orig + eps)
            hi = float(fn())
            put(orig - eps)
            lo = float(fn())
            put(orig)
            grads.append((hi - lo) / (2 * eps))
    return np.asarray(grads)
