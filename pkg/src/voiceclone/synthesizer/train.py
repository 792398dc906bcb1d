"""Synthesizer training loop (single-utterance steps, CPU-friendly)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..audio import MelConfig, PIPELINE_RATE, load_waveform, mel_spectrogram, resample
from ..speaker import SpeakerEncoder, embed_utterance
from ..textnorm import TokenSequence, Vocab, build_vocab, normalize_text, tokenize
from .config import SynthesizerConfig, anneal_schedules
from .losses import reparameterize, synthesizer_loss
from .model import Synthesizer, save_synthesizer


@dataclass(frozen=True)
class TrainExample:
    ids: TokenSequence
    mel: np.ndarray
    speaker_vec: np.ndarray
    utt_id: str


def write_pgm(matrix: np.ndarray, path: str | Path) -> None:
    """Write a [0, 1]-valued matrix as a binary 8-bit grayscale PGM."""
    values = np.clip(np.asarray(matrix, dtype=np.float64), 0.0, 1.0)
    pixels = np.round(values * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def prepare_examples(
    manifest_rows: Sequence[dict],
    speaker_model: SpeakerEncoder,
    mel_config: MelConfig | None = None,
) -> tuple[list[TrainExample], Vocab]:
    """Turn manifest rows into (token ids, mel, speaker embedding) triples.

    The speaker embedding of each example comes from its own audio, i.e.
    the reference utterance equals the target during training.
    """
    if not manifest_rows:
        raise ValueError("empty manifest")
    mel_config = mel_config or MelConfig()
    texts = [normalize_text(row["text"]) for row in manifest_rows]
    vocab = build_vocab(texts)
    examples = []
    for row, text in zip(manifest_rows, texts):
        w = load_waveform(row["audio_path"])
        if w.sample_rate != PIPELINE_RATE:
            w = resample(w, PIPELINE_RATE)
        mel = mel_spectrogram(w, mel_config)
        spk = embed_utterance(mel, speaker_model)
        examples.append(
            TrainExample(
                ids=tokenize(text, vocab),
                mel=mel.frames,
                speaker_vec=spk.vector,
                utt_id=row["id"],
            )
        )
    return examples, vocab


def train_synthesizer(
    examples: Sequence[TrainExample],
    vocab: Vocab,
    config: SynthesizerConfig,
    *,
    steps: int = 500,
    seed: int = 0,
    out_path: str | Path | None = None,
    attention_dir: str | Path | None = None,
    attention_every: int = 100,
    checkpoint_every: int | None = None,
    config_extra: dict | None = None,
) -> tuple[Synthesizer, list[dict]]:
    """Returns the trained model and a per-step history of the loss terms."""
    if not examples:
        raise ValueError("empty manifest")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    noise_gen = torch.Generator().manual_seed(seed + 1)
    model = Synthesizer(config)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    history: list[dict] = []
    for step in range(steps):
        alpha, reduction = anneal_schedules(step, config)
        example = examples[rng.integers(len(examples))]
        mel = torch.as_tensor(example.mel, dtype=torch.float32)
        x_enc = model.encode_text(example.ids, torch.as_tensor(example.speaker_vec, dtype=torch.float32))
        q = model.posterior_encode(x_enc, mel, reduction)
        eps = torch.randn(q.mean.shape, generator=noise_gen)
        z = reparameterize(q, noise=eps)
        dump_now = attention_dir is not None and step % attention_every == 0
        y_tilde, attention = model.decode(z, x_enc, reduction, collect_attention=dump_now)
        prediction = model.predict_length(x_enc, ground_truth=mel.shape[0])
        loss = synthesizer_loss(
            mel,
            y_tilde,
            q,
            model.prior,
            x_enc,
            ground_truth_frames=mel.shape[0],
            log_predicted_frames=prediction.log_predicted,
            alpha=alpha,
            beta=config.beta,
            kl_mode="mc",
            noise=eps,
        )
        optimizer.zero_grad()
        loss.total.backward()
        nn.utils.clip_grad_norm_(model.parameters(), 5.0)
        optimizer.step()
        history.append(
            {"step": step, "reduction": reduction, "utt": example.utt_id, **loss.as_floats()}
        )
        if dump_now:
            for layer, weights in enumerate(attention):
                write_pgm(
                    weights.numpy(),
                    Path(attention_dir) / f"step{step:06d}_layer{layer}.pgm",
                )
        if (
            out_path is not None
            and checkpoint_every
            and (step + 1) % checkpoint_every == 0
            and step + 1 < steps
        ):
            save_synthesizer(
                Path(f"{out_path}.step{step + 1:06d}"), model, vocab,
                extra={"seed": seed, "steps": step + 1, **(config_extra or {})},
            )

    if out_path is not None:
        save_synthesizer(
            out_path, model, vocab,
            extra={"seed": seed, "steps": steps, **(config_extra or {})},
        )
    return model, history
