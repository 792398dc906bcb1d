#!/usr/bin/env python3
"""End-to-end desk-scale experiment: synthetic corpus -> preprocess ->
train all three components -> clone a voice -> benchmark RTF.

Everything runs on CPU in a few minutes with deliberately tiny model sizes.

Usage: python scripts/run_toy_pipeline.py WORKDIR [--steps-scale 1.0]
"""

import argparse
import sys
from pathlib import Path

from voiceclone.audio import save_waveform
from voiceclone.cli import main as cli
from voiceclone.toydata import make_toy_corpus, toy_utterance

TINY = {
    "mel_fft_size": 256,
    "mel_win_size": 256,
    "mel_hop_size": 64,
    "mel_bins": 16,
    "speaker_hidden": 64,
    "speaker_layers": 2,
    "speaker_dim": 32,
    "speaker_min_frames": 10,
    "speaker_partial_frames": 80,
    "speaker_steps": 200,
    "synth_base_dim": 32,
    "synth_d_latent": 8,
    "synth_encoder_layers": 1,
    "synth_decoder_layers": 1,
    "synth_flow_steps": 2,
    "synth_flow_hidden": 16,
    "synth_alpha_max": 0.05,
    "synth_alpha_warmup_steps": 400,
    "synth_reduction_factors": "2,1",
    "synth_reduction_boundaries": "150",
    "synth_steps": 400,
    "vocoder_rates": "4,4,4",
    "vocoder_channels": 16,
    "vocoder_disc_channels": 8,
    "vocoder_steps": 300,
}


def overrides(scale: float):
    values = dict(TINY)
    for key in ("speaker_steps", "synth_steps", "vocoder_steps"):
        values[key] = max(10, int(values[key] * scale))
    flags = []
    for key, value in values.items():
        flags.extend(["--set", f"{key}={value}"])
    return flags


def run(step, argv):
    print(f"== {step}: voiceclone {' '.join(argv[:6])} ...")
    code = cli(argv)
    if code != 0:
        sys.exit(f"{step} failed with exit code {code}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("workdir", type=Path)
    parser.add_argument("--steps-scale", type=float, default=1.0)
    args = parser.parse_args()
    root = args.workdir
    root.mkdir(parents=True, exist_ok=True)

    make_toy_corpus(root / "corpus", n_speakers=2, utterances_per_speaker=20, seconds=0.5)
    save_waveform(toy_utterance(0, 999, seconds=1.5, seed=42), root / "refs" / "spk0.wav")
    save_waveform(toy_utterance(1, 999, seconds=1.5, seed=42), root / "refs" / "spk1.wav")
    (root / "bench.txt").write_text("ni3 hao3\nzai4 jian4\njin1 tian1 tian1 qi4 hen3 hao3\n")

    flags = overrides(args.steps_scale)
    base = ["--workdir", str(root)]
    run("preprocess", ["preprocess", *base, "--corpus", "corpus", "--out", "data", *flags])
    run("train speaker", ["train", "speaker", *base, "--manifest", "data/manifest.jsonl",
                          "--out", "ckpt/speaker.ckpt", *flags])
    run("train synth", ["train", "synth", *base, "--manifest", "data/manifest.jsonl",
                        "--out", "ckpt/synth.ckpt", "--speaker-ckpt", "ckpt/speaker.ckpt",
                        "--attention-dir", "attention", *flags])
    run("train vocoder", ["train", "vocoder", *base, "--manifest", "data/manifest.jsonl",
                          "--out", "ckpt/vocoder.ckpt", *flags])
    for speaker in ("spk0", "spk1"):
        run(f"clone {speaker}", ["clone", *base,
                                 "--reference", f"refs/{speaker}.wav",
                                 "--text", "jin1 tian1 tian1 qi4 hen3 hao3",
                                 "--speaker-ckpt", "ckpt/speaker.ckpt",
                                 "--synth-ckpt", "ckpt/synth.ckpt",
                                 "--vocoder-ckpt", "ckpt/vocoder.ckpt",
                                 "--out", f"cloned_{speaker}.wav", *flags])
    run("bench-rtf", ["bench-rtf", *base, "--test-set", "bench.txt",
                      "--synth-ckpt", "ckpt/synth.ckpt",
                      "--speaker-ckpt", "ckpt/speaker.ckpt",
                      "--reference", "refs/spk0.wav",
                      "--out", "rtf.json", *flags])
    print(f"done; artifacts under {root}")


if __name__ == "__main__":
    main()
