"""Recurrent speaker encoder and its discriminative training objective.

An LSTM stack reads a mel-spectrogram and projects the final hidden state
to a unit-norm embedding. Training pulls utterances toward their own
speaker centroid and away from other speakers' centroids with a softmax
over scaled cosine similarities; the similarity scale stays positive.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import MelConfig, MelSpectrogram, PIPELINE_RATE, load_waveform, mel_spectrogram, resample
from .checkpoint import save_checkpoint

_MIN_SCALE = 1e-4


@dataclass(frozen=True)
class SpeakerEncoderConfig:
    mel_bins: int = 80
    hidden_size: int = 256
    num_layers: int = 3
    embedding_dim: int = 256
    min_frames: int = 40
    partial_frames: int = 160
    lr: float = 1e-3


@dataclass(frozen=True)
class SpeakerEmbedding:
    """Fixed-dimension unit-norm voice identity vector."""

    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        object.__setattr__(self, "vector", vec)
        if vec.ndim != 1:
            raise ValueError("embedding must be a vector")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding contains non-finite entries")
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding must be unit-norm, got |v| = {norm}")

    @property
    def dim(self) -> int:
        return self.vector.size


class SpeakerBatch:
    """Rectangular N x M stack of mel-spectrograms for the training loss."""

    def __init__(self, mels: Sequence[Sequence[MelSpectrogram]]):
        if len(mels) < 2:
            raise ValueError("need at least 2 speakers in a batch")
        counts = {len(group) for group in mels}
        if len(counts) != 1:
            raise ValueError("batch must be rectangular (same utterance count per speaker)")
        if counts.pop() < 2:
            raise ValueError("need at least 2 utterances per speaker")
        self.mels = [list(group) for group in mels]

    @property
    def n_speakers(self) -> int:
        return len(self.mels)

    @property
    def n_utterances(self) -> int:
        return len(self.mels[0])


class SpeakerEncoder(nn.Module):
    def __init__(self, config: SpeakerEncoderConfig | None = None):
        super().__init__()
        self.config = config or SpeakerEncoderConfig()
        self.lstm = nn.LSTM(
            input_size=self.config.mel_bins,
            hidden_size=self.config.hidden_size,
            num_layers=self.config.num_layers,
            batch_first=True,
        )
        self.projection = nn.Linear(self.config.hidden_size, self.config.embedding_dim)
        # similarity scale/offset of the training objective
        self.similarity_weight = nn.Parameter(torch.tensor(10.0))
        self.similarity_bias = nn.Parameter(torch.tensor(-5.0))

    def forward(self, mels: torch.Tensor) -> torch.Tensor:
        """[batch, frames, mel_bins] -> unit-norm [batch, embedding_dim]."""
        _, (hidden, _) = self.lstm(mels)
        embeds = self.projection(hidden[-1])
        return F.normalize(embeds, p=2, dim=-1, eps=1e-12)


def embed_utterance(mel: MelSpectrogram, model: SpeakerEncoder) -> SpeakerEmbedding:
    """Deterministic unit-norm embedding of one utterance."""
    if mel.n_frames < model.config.min_frames:
        raise ValueError(
            f"utterance too short: {mel.n_frames} frames < {model.config.min_frames}"
        )
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            frames = torch.as_tensor(mel.frames, dtype=torch.float32).unsqueeze(0)
            vec = model(frames)[0].double().numpy()
    finally:
        model.train(was_training)
    return SpeakerEmbedding(vec / np.linalg.norm(vec))


def similarity_matrix(
    embeddings: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor
) -> torch.Tensor:
    """Scaled cosine similarities of shape [N, M, N].

    Entry [j, i, k] compares utterance i of speaker j against speaker k's
    centroid; the own-speaker centroid excludes the utterance itself.
    """
    n, m, _ = embeddings.shape
    unit = F.normalize(embeddings, p=2, dim=-1, eps=1e-12)
    centroids = F.normalize(unit.mean(dim=1), p=2, dim=-1, eps=1e-12)
    sums = unit.sum(dim=1)
    cos = torch.einsum("jid,kd->jik", unit, centroids)
    exclusive = F.normalize(
        (sums.unsqueeze(1) - unit) / (m - 1), p=2, dim=-1, eps=1e-12
    )
    own = (unit * exclusive).sum(dim=-1)
    idx = torch.arange(n)
    cos = cos.clone()
    cos[idx, :, idx] = own
    return weight.clamp(min=_MIN_SCALE) * cos + bias


def ge2e_loss(
    embeddings: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor
) -> torch.Tensor:
    """Softmax contrast of each utterance against speaker centroids.

    embeddings: [N speakers, M utterances, D], N >= 2 and M >= 2.
    """
    if embeddings.ndim != 3:
        raise ValueError("expected embeddings of shape [N, M, D]")
    n, m, _ = embeddings.shape
    if n < 2 or m < 2:
        raise ValueError(f"degenerate batch: need N >= 2 and M >= 2, got N={n}, M={m}")
    sim = similarity_matrix(embeddings, weight, bias)
    labels = torch.arange(n, device=sim.device).repeat_interleave(m)
    return F.cross_entropy(sim.reshape(n * m, n), labels)


def _load_mels_by_speaker(
    manifest_rows: Sequence[dict], mel_config: MelConfig
) -> dict[str, list[np.ndarray]]:
    by_speaker: dict[str, list[np.ndarray]] = {}
    for row in manifest_rows:
        w = load_waveform(row["audio_path"])
        if w.sample_rate != PIPELINE_RATE:
            w = resample(w, PIPELINE_RATE)
        mel = mel_spectrogram(w, mel_config)
        by_speaker.setdefault(row["speaker"], []).append(mel.frames)
    return by_speaker


def train_speaker_encoder(
    manifest_rows: Sequence[dict],
    config: SpeakerEncoderConfig | None = None,
    *,
    steps: int = 200,
    batch_speakers: int = 2,
    batch_utterances: int = 4,
    seed: int = 0,
    mel_config: MelConfig | None = None,
    out_path: str | Path | None = None,
    config_extra: dict | None = None,
) -> tuple[SpeakerEncoder, list[float]]:
    """Train on a manifest of audio rows; returns the model and loss curve."""
    config = config or SpeakerEncoderConfig()
    mels = _load_mels_by_speaker(manifest_rows, mel_config or MelConfig())
    return train_speaker_encoder_on_mels(
        mels,
        config,
        steps=steps,
        batch_speakers=batch_speakers,
        batch_utterances=batch_utterances,
        seed=seed,
        out_path=out_path,
        config_extra=config_extra,
    )


def train_speaker_encoder_on_mels(
    mels_by_speaker: dict[str, Sequence[np.ndarray]],
    config: SpeakerEncoderConfig | None = None,
    *,
    steps: int = 200,
    batch_speakers: int = 2,
    batch_utterances: int = 4,
    seed: int = 0,
    out_path: str | Path | None = None,
    config_extra: dict | None = None,
) -> tuple[SpeakerEncoder, list[float]]:
    config = config or SpeakerEncoderConfig()
    speakers = sorted(mels_by_speaker)
    if len(speakers) < 2:
        raise ValueError(f"need at least 2 speakers to train, got {len(speakers)}")
    for spk in speakers:
        if len(mels_by_speaker[spk]) < 2:
            raise ValueError(f"speaker {spk!r} has fewer than 2 utterances")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = SpeakerEncoder(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    n_spk = min(batch_speakers, len(speakers))
    losses: list[float] = []
    for _ in range(steps):
        chosen = rng.choice(len(speakers), size=n_spk, replace=False)
        batch = []
        for si in chosen:
            pool = mels_by_speaker[speakers[si]]
            picks = rng.choice(len(pool), size=batch_utterances, replace=len(pool) < batch_utterances)
            group = []
            for pi in picks:
                frames = pool[pi]
                crop = min(config.partial_frames, frames.shape[0])
                start = rng.integers(0, frames.shape[0] - crop + 1)
                group.append(frames[start : start + crop])
            batch.append(np.stack(group))
        crop = min(g.shape[1] for g in batch)
        stacked = torch.as_tensor(
            np.stack([g[:, :crop] for g in batch]), dtype=torch.float32
        )
        n, m = stacked.shape[:2]
        embeds = model(stacked.reshape(n * m, crop, -1)).reshape(n, m, -1)
        loss = ge2e_loss(embeds, model.similarity_weight, model.similarity_bias)
        optimizer.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(model.parameters(), 3.0)
        optimizer.step()
        with torch.no_grad():
            model.similarity_weight.clamp_(min=_MIN_SCALE)
        losses.append(float(loss.detach()))

    if out_path is not None:
        save_checkpoint(
            out_path,
            kind="speaker",
            config={**asdict(config), "seed": seed, "steps": steps, **(config_extra or {})},
            state=model.state_dict(),
        )
    return model, losses


def load_speaker_encoder(path: str | Path) -> SpeakerEncoder:
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(path, expected_kind="speaker")
    fields = set(SpeakerEncoderConfig.__dataclass_fields__)
    config = SpeakerEncoderConfig(**{k: v for k, v in ckpt.config.items() if k in fields})
    model = SpeakerEncoder(config)
    model.load_state_dict(ckpt.state)
    model.eval()
    return model
