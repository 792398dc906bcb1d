"""Synthetic desk-scale corpora for smoke training and benchmarks.

Speakers are separated by fundamental frequency and harmonic weighting, so
a discriminative encoder can tell them apart after a few hundred steps on
a CPU. Audio is deterministic for a given seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import PIPELINE_RATE, Waveform, save_waveform

TOY_TEXTS = (
    "ni3 hao3",
    "zai4 jian4",
    "xie4 xie4 ni3",
    "jin1 tian1 tian1 qi4 hen3 hao3",
    "huan1 ying2 guang1 lin2",
    "qing3 zhu4 yi4 an1 quan2",
    "wo3 hen3 gao1 xing4",
    "ming2 tian1 jian4",
)

_BASE_F0 = (130.0, 270.0, 190.0, 350.0)


def toy_utterance(
    speaker_index: int, utt_index: int, seconds: float = 1.0, seed: int = 0
) -> Waveform:
    """One synthetic utterance: three harmonic 'syllables' with an envelope."""
    rng = np.random.default_rng((seed, speaker_index, utt_index))
    f0 = _BASE_F0[speaker_index % len(_BASE_F0)] * (1.0 + 0.03 * rng.standard_normal())
    n = int(seconds * PIPELINE_RATE)
    t = np.arange(n) / PIPELINE_RATE
    signal = np.zeros(n)
    n_syllables = 3
    seg = n // n_syllables
    # higher-index speakers put more energy into upper harmonics
    harmonic_tilt = 0.4 + 0.4 * (speaker_index % 2)
    for k in range(n_syllables):
        sl = slice(k * seg, (k + 1) * seg)
        pitch = f0 * (1.0 + 0.15 * rng.standard_normal())
        envelope = np.hanning(seg)
        chunk = np.zeros(seg)
        for h, weight in enumerate((1.0, harmonic_tilt, harmonic_tilt**2), start=1):
            chunk += weight * np.sin(2 * np.pi * pitch * h * t[sl] + rng.uniform(0, 2 * np.pi))
        signal[sl] = envelope * chunk
    signal += 0.003 * rng.standard_normal(n)
    signal = 0.5 * signal / np.max(np.abs(signal))
    return Waveform(signal, PIPELINE_RATE)


def make_listen_demo(root: str | Path, seed: int = 0):
    """Synthesize audio assets plus a full default listening-test plan.

    MOS and A/B items alternate; A/B pairs get two distinct renditions of
    the same sentence. Returns (plan, plan_path).
    """
    from .listen.plan import SCENARIO_TABLE, create_plan_from_table3, save_plan

    root = Path(root)
    asset_dir = root / "assets"
    entries: dict[str, list[dict]] = {}
    counter = 0
    for scenario, _, count in SCENARIO_TABLE:
        rows = []
        for _ in range(count):
            kind = "mos" if counter % 2 == 0 else "ab"
            n_refs = 1 if kind == "mos" else 2
            refs, systems = [], []
            for r in range(n_refs):
                path = asset_dir / f"item{counter:02d}_{r}.wav"
                save_waveform(
                    toy_utterance(r, counter, seconds=0.4, seed=seed), path
                )
                refs.append(str(path))
                systems.append("system-a" if r == 0 else "system-b")
            rows.append(
                {
                    "text": f"test sentence {counter:02d}",
                    "kind": kind,
                    "audio": refs,
                    "systems": systems,
                }
            )
            counter += 1
        entries[scenario] = rows
    plan = create_plan_from_table3(entries)
    plan_path = root / "plan.json"
    save_plan(plan, plan_path)
    return plan, plan_path


def make_sine_pairs(
    mel_config, n_items: int = 12, seconds: float = 0.25, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(waveform, mel) pairs of harmonic tones for vocoder smoke training.

    Waveforms are trimmed to n_frames * hop so generator output lengths
    line up exactly.
    """
    from .audio import mel_spectrogram

    rng = np.random.default_rng(seed)
    pairs = []
    n = int(seconds * PIPELINE_RATE)
    t = np.arange(n) / PIPELINE_RATE
    for i in range(n_items):
        f0 = 180.0 + 35.0 * (i % 5) + 3.0 * rng.standard_normal()
        w = 0.5 * np.sin(2 * np.pi * f0 * t) + 0.15 * np.sin(2 * np.pi * 2 * f0 * t)
        mel = mel_spectrogram(Waveform(w, PIPELINE_RATE), mel_config)
        pairs.append((w[: mel.n_frames * mel_config.hop_size], mel.frames))
    return pairs


def make_toy_corpus(
    root: str | Path,
    n_speakers: int = 2,
    utterances_per_speaker: int = 50,
    seconds: float = 1.0,
    seed: int = 0,
) -> list[dict]:
    """Write a WAV corpus plus transcripts.tsv; returns manifest-style rows."""
    root = Path(root)
    rows = []
    transcript_lines = []
    for s in range(n_speakers):
        speaker = f"spk{s}"
        for u in range(utterances_per_speaker):
            text = TOY_TEXTS[(s + u) % len(TOY_TEXTS)]
            utt_id = f"{speaker}_utt{u:03d}"
            path = root / speaker / f"utt{u:03d}.wav"
            save_waveform(toy_utterance(s, u, seconds=seconds, seed=seed), path)
            rows.append(
                {
                    "id": utt_id,
                    "audio_path": str(path),
                    "text": text,
                    "speaker": speaker,
                    "scenario": None,
                    "emotion": None,
                }
            )
            transcript_lines.append(f"{utt_id}\t{speaker}\t{text}")
    (root / "transcripts.tsv").write_text("\n".join(transcript_lines) + "\n", "utf-8")
    return rows
