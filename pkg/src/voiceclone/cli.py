"""Pipeline entry point.

Subcommands mirror the independently trained components plus the
evaluation surfaces:

    preprocess  build a QC'd manifest and mel cache from a raw corpus
    train       train speaker | synth | vocoder from a manifest
    clone       reference audio + text -> cloned 16 kHz WAV
    bench-rtf   real-time-factor benchmark (10 runs by default)
    serve       run the listening-test service (optionally with the web UI)
    report      render MOS / A/B tables from a ratings export

Exit codes: 0 success, 1 usage error, 2 data error, 3 external-service error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .audio import (
    AudioFormatError,
    PIPELINE_RATE,
    load_waveform,
    mel_spectrogram,
    resample,
    save_waveform,
)
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .dataset import (
    AsrUnavailableError,
    HttpAsrClient,
    UtteranceRecord,
    build_manifest,
    load_manifest,
    manifest_row,
    qc_check,
)
from .evalstats import ab_preference, mos_summary, read_rating_records, rtf_measure
from .listen.plan import PlanError, load_plan
from .listen.service import ListenService
from .speaker import embed_utterance, load_speaker_encoder, train_speaker_encoder
from .stubs import StubSynthesizer, StubVocoder
from .synthesizer import load_synthesizer, prepare_examples, train_synthesizer
from .textnorm import TextNormError, normalize_text, tokenize
from .vocoder import load_generator, train_vocoder, vocode

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_EXTERNAL = 3

_DATA_ERRORS = (
    ValueError,
    KeyError,
    FileNotFoundError,
    AudioFormatError,
    TextNormError,
    CheckpointError,
    PlanError,
    ConfigError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class EchoAsr:
    """Test/demo ASR that returns the known transcript for each file."""

    def __init__(self, transcripts: dict[str, str]):
        self.transcripts = transcripts

    def transcribe(self, audio_path: str) -> str:
        return self.transcripts[str(audio_path)]


def build_parser() -> _Parser:
    parser = _Parser(prog="voiceclone", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="root for all relative paths")
    common.add_argument("--config", default=None, help="key=value config file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="corpus -> manifest + mel cache")
    p.add_argument("--corpus", required=True, help="directory with WAVs and transcripts.tsv")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", parents=[common], help="train one component")
    p.add_argument("component", choices=["speaker", "synth", "vocoder"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--speaker-ckpt", default=None, help="required for synth")
    p.add_argument("--steps", type=int, default=None, help="override configured step count")
    p.add_argument("--attention-dir", default=None, help="synth: dump attention maps here")

    p = sub.add_parser("clone", parents=[common], help="clone a voice onto new text")
    p.add_argument("--reference", required=True, help="reference WAV (>= 1 s)")
    p.add_argument("--text", required=True)
    p.add_argument("--speaker-ckpt", default=None)
    p.add_argument("--synth-ckpt", default=None)
    p.add_argument("--vocoder-ckpt", default=None)
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--stub-model", action="store_true", help="use deterministic fake models")

    p = sub.add_parser("bench-rtf", parents=[common], help="real-time-factor benchmark")
    p.add_argument("--test-set", required=True, help="text file, one sentence per line")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out", default=None, help="write the report as JSON here")
    p.add_argument("--stub-model", action="store_true")
    p.add_argument("--stub-delay", type=float, default=0.05,
                   help="stub synthesis seconds per second of audio")
    p.add_argument("--speaker-ckpt", default=None)
    p.add_argument("--synth-ckpt", default=None)
    p.add_argument("--reference", default=None, help="reference WAV for the speaker embedding")

    p = sub.add_parser("serve", parents=[common], help="run the listening-test service")
    p.add_argument("--plan", default=None, help="plan JSON (omit with --demo)")
    p.add_argument("--data", required=True, help="directory for session/rating logs")
    p.add_argument("--demo", action="store_true", help="generate a synthetic demo plan first")
    p.add_argument("--ui", default=None, help="static directory with the built web UI")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8300)

    p = sub.add_parser("report", parents=[common], help="ratings export -> tables")
    p.add_argument("--export", required=True, help="line-delimited rating records")
    p.add_argument("--out", default=None, help="write machine-readable JSON here")

    return parser


def _resolve(workdir: str, path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else Path(workdir) / p


def _load_transcripts(corpus_dir: Path) -> list[tuple[str, str, str]]:
    path = corpus_dir / "transcripts.tsv"
    if not path.exists():
        raise FileNotFoundError(f"missing transcript file: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'id<TAB>speaker<TAB>text'")
        rows.append((parts[0], parts[1], parts[2]))
    return rows


def _find_audio(corpus_dir: Path, utt_id: str, speaker: str) -> Path:
    direct = corpus_dir / speaker / f"{utt_id.removeprefix(speaker + '_')}.wav"
    if direct.exists():
        return direct
    fallback = corpus_dir / f"{utt_id}.wav"
    if fallback.exists():
        return fallback
    raise FileNotFoundError(f"no audio for utterance {utt_id}")


def cmd_preprocess(args, cfg: RunConfig) -> int:
    corpus_dir = _resolve(args.workdir, args.corpus)
    out_dir = _resolve(args.workdir, args.out)
    if not corpus_dir.exists():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    transcripts = _load_transcripts(corpus_dir)
    mel_config = cfg.mel_config()
    mel_dir = out_dir / "mels"
    mel_dir.mkdir(parents=True, exist_ok=True)

    asr = None
    if cfg["asr_mode"] == "echo":
        asr = EchoAsr({})
    elif cfg["asr_mode"] == "http":
        asr = HttpAsrClient(cfg["asr_base_url"] or None, cfg["asr_timeout"])

    records = []
    for utt_id, speaker, text in transcripts:
        audio_path = _find_audio(corpus_dir, utt_id, speaker)
        rec = UtteranceRecord(
            id=utt_id, audio_path=str(audio_path), raw_text=text, speaker_id=speaker
        )
        try:
            w = load_waveform(audio_path)
            if w.sample_rate != PIPELINE_RATE:
                w = resample(w, PIPELINE_RATE)
            mel = mel_spectrogram(w, mel_config)
        except (AudioFormatError, ValueError) as exc:
            print(f"flagged {utt_id}: {exc}", file=sys.stderr)
            records.append(replace(rec, qc_status="removed"))
            continue
        if isinstance(asr, EchoAsr):
            asr.transcripts[str(audio_path)] = text
        if asr is None:
            normalized = normalize_text(text)
            rec = replace(rec, normalized_text=str(normalized), qc_status="pass")
        else:
            rec = qc_check(rec, asr, threshold=cfg["cer_threshold"])
        if rec.qc_status == "pass":
            np.save(mel_dir / f"{utt_id}.npy", mel.frames)
        records.append(rec)

    manifest_path = out_dir / "manifest.jsonl"
    n_exported = build_manifest(records, manifest_path)
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.qc_status] = counts.get(rec.qc_status, 0) + 1
    meta = {"config": cfg.resolved(), "status_counts": counts, "exported": n_exported}
    (out_dir / "manifest.meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True), "utf-8"
    )
    print(json.dumps({"manifest": str(manifest_path), "exported": n_exported, **counts}))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    torch.set_num_threads(max(1, torch.get_num_threads()))
    manifest = load_manifest(_resolve(args.workdir, args.manifest))
    out_path = _resolve(args.workdir, args.out)
    seed = cfg["seed"]
    echo = {"run_config": cfg.resolved()}

    if args.component == "speaker":
        steps = args.steps or cfg["speaker_steps"]
        _, losses = train_speaker_encoder(
            manifest,
            cfg.speaker_config(),
            steps=steps,
            batch_speakers=cfg["speaker_batch_speakers"],
            batch_utterances=cfg["speaker_batch_utterances"],
            seed=seed,
            mel_config=cfg.mel_config(),
            out_path=out_path,
            config_extra=echo,
        )
        history = [{"step": i, "loss": v} for i, v in enumerate(losses)]
    elif args.component == "synth":
        speaker_ckpt = _resolve(args.workdir, args.speaker_ckpt)
        if speaker_ckpt is None or not speaker_ckpt.exists():
            raise FileNotFoundError("speaker checkpoint required to train the synthesizer")
        speaker_model = load_speaker_encoder(speaker_ckpt)
        examples, vocab = prepare_examples(manifest, speaker_model, cfg.mel_config())
        synth_config = cfg.synthesizer_config(vocab_size=len(vocab))
        if synth_config.speaker_dim != speaker_model.config.embedding_dim:
            raise ValueError(
                "speaker_dim config does not match the speaker checkpoint "
                f"({synth_config.speaker_dim} vs {speaker_model.config.embedding_dim})"
            )
        steps = args.steps or cfg["synth_steps"]
        _, history = train_synthesizer(
            examples,
            vocab,
            synth_config,
            steps=steps,
            seed=seed,
            out_path=out_path,
            attention_dir=_resolve(args.workdir, args.attention_dir),
            config_extra=echo,
        )
    else:
        mel_config = cfg.mel_config()
        pairs = []
        for row in manifest:
            w = load_waveform(row["audio_path"])
            if w.sample_rate != PIPELINE_RATE:
                w = resample(w, PIPELINE_RATE)
            mel = mel_spectrogram(w, mel_config)
            pairs.append((w.samples[: mel.n_frames * mel_config.hop_size], mel.frames))
        steps = args.steps or cfg["vocoder_steps"]
        _, _, history = train_vocoder(
            pairs, cfg.vocoder_config(), steps=steps, seed=seed,
            out_path=out_path, config_extra=echo,
        )

    log_path = out_path.with_suffix(out_path.suffix + ".log.jsonl")
    with log_path.open("w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")
    summary = {"checkpoint": str(out_path), "steps": len(history), "log": str(log_path)}
    if history and "loss" in history[0]:
        summary["final_loss"] = history[-1]["loss"]
    print(json.dumps(summary))
    return EXIT_OK


def _reference_embedding(args, cfg: RunConfig, speaker_ckpt: Path):
    reference = load_waveform(_resolve(args.workdir, args.reference))
    if reference.duration < 1.0:
        raise ValueError(
            f"reference too short: {reference.duration:.2f} s, need >= 1 s"
        )
    if reference.sample_rate != PIPELINE_RATE:
        reference = resample(reference, PIPELINE_RATE)
    mel = mel_spectrogram(reference, cfg.mel_config())
    return embed_utterance(mel, load_speaker_encoder(speaker_ckpt))


def cmd_clone(args, cfg: RunConfig) -> int:
    out_path = _resolve(args.workdir, args.out)
    if args.stub_model:
        stub_mel = StubSynthesizer(cfg.mel_config()).synthesize_mel(args.text)
        wave = StubVocoder().vocode(stub_mel)
        n_frames = stub_mel.n_frames
    else:
        for name in ("speaker_ckpt", "synth_ckpt", "vocoder_ckpt"):
            if getattr(args, name) is None:
                raise ValueError(f"--{name.replace('_', '-')} is required without --stub-model")
        embedding = _reference_embedding(args, cfg, _resolve(args.workdir, args.speaker_ckpt))
        synth, vocab = load_synthesizer(_resolve(args.workdir, args.synth_ckpt))
        generator_model = load_generator(_resolve(args.workdir, args.vocoder_ckpt))
        tokens = tokenize(normalize_text(args.text), vocab)
        rng = torch.Generator().manual_seed(cfg["seed"])
        mel = synth.synthesize(
            tokens,
            embedding,
            generator=rng,
            temperature=args.temperature,
            mel_config=cfg.mel_config(),
        )
        wave = vocode(generator_model, mel)
        n_frames = mel.n_frames
    save_waveform(wave, out_path)
    hop = cfg["mel_hop_size"]
    print(
        json.dumps(
            {
                "out": str(out_path),
                "frames": n_frames,
                "samples": len(wave),
                "duration": len(wave) / PIPELINE_RATE,
                "expected_duration": n_frames * hop / PIPELINE_RATE,
            }
        )
    )
    return EXIT_OK


def cmd_bench_rtf(args, cfg: RunConfig) -> int:
    test_path = _resolve(args.workdir, args.test_set)
    sentences = [s for s in test_path.read_text("utf-8").splitlines() if s.strip()]
    if not sentences:
        raise ValueError(f"test set is empty: {test_path}")
    runs = args.runs or cfg["bench_runs"]

    if args.stub_model:
        stub = StubSynthesizer(cfg.mel_config(), delay_factor=args.stub_delay)

        def synth(text: str) -> float:
            return stub.synthesize_mel(text).duration

    else:
        if args.synth_ckpt is None or args.speaker_ckpt is None or args.reference is None:
            raise ValueError(
                "bench-rtf needs --synth-ckpt, --speaker-ckpt and --reference "
                "(or --stub-model)"
            )
        model, vocab = load_synthesizer(_resolve(args.workdir, args.synth_ckpt))
        embedding = _reference_embedding(args, cfg, _resolve(args.workdir, args.speaker_ckpt))
        token_batches = [tokenize(normalize_text(s), vocab, strict=False) for s in sentences]
        by_text = dict(zip(sentences, token_batches))
        rng = torch.Generator().manual_seed(cfg["seed"])

        def synth(text: str) -> float:
            mel = model.synthesize(by_text[text], embedding, generator=rng)
            return mel.duration

    report = rtf_measure(synth, sentences, runs=runs)
    payload = {
        "rtf": report.rtf,
        "runs": report.runs,
        "per_run": list(report.per_run),
        "config": cfg.resolved(),
    }
    if args.out:
        _resolve(args.workdir, args.out).write_text(json.dumps(payload, indent=2), "utf-8")
    print(json.dumps({"rtf": report.rtf, "runs": report.runs, "per_run": list(report.per_run)}))
    return EXIT_OK


def cmd_serve(args, cfg: RunConfig) -> int:
    import uvicorn

    from .listen.app import create_app

    if args.demo:
        from .toydata import make_listen_demo

        plan, plan_path = make_listen_demo(Path(args.workdir) / "listen-demo")
        print(f"demo plan written to {plan_path}", file=sys.stderr)
    else:
        if args.plan is None:
            raise ValueError("--plan is required unless --demo is given")
        plan = load_plan(_resolve(args.workdir, args.plan))
    service = ListenService(plan, _resolve(args.workdir, args.data))
    app = create_app(service, ui_dir=_resolve(args.workdir, args.ui))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _mos_section(records: list[dict]) -> dict:
    groups: dict[str, list[int]] = {}
    for r in records:
        systems = r.get("systems") or []
        label = systems[0] if systems else "(all systems)"
        groups.setdefault(label, []).append(r["value"])
    section = {}
    for label in sorted(groups):
        values = groups[label]
        if len(values) < 2:
            continue
        summary = mos_summary(values)
        section[label] = {
            "mean": summary.mean,
            "half_width": summary.half_width,
            "n": summary.n,
            "formatted": summary.formatted(),
        }
    return section


def cmd_report(args, cfg: RunConfig) -> int:
    records = read_rating_records(_resolve(args.workdir, args.export))
    mos_records = [r for r in records if r["kind"] == "mos"]
    ab_records = [r for r in records if r["kind"] == "ab"]

    lines = []
    payload: dict = {"config": cfg.resolved()}
    if mos_records:
        section = _mos_section(mos_records)
        payload["mos"] = section
        lines.append("MOS (mean opinion score, 95% CI)")
        for label, row in section.items():
            lines.append(f"  {label:<20} {row['formatted']}  (n={row['n']})")
    else:
        lines.append("MOS section omitted: no MOS ratings in export.")

    if ab_records:
        result = ab_preference([r["value"] for r in ab_records])
        labels = ab_records[0].get("systems") or ["A", "B"]
        payload["ab"] = {
            "pct_a": result.pct_a,
            "pct_b": result.pct_b,
            "pct_same": result.pct_same,
            "p_value": result.p_value,
            "labels": list(labels),
        }
        lines.append(f"A/B preference ({labels[0]} / {labels[1] if len(labels) > 1 else 'B'} / Same)")
        lines.append(f"  {result.formatted()}")
    else:
        lines.append("A/B section omitted: no A/B votes in export.")

    print("\n".join(lines))
    if args.out:
        _resolve(args.workdir, args.out).write_text(json.dumps(payload, indent=2), "utf-8")
    return EXIT_OK


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "clone": cmd_clone,
    "bench-rtf": cmd_bench_rtf,
    "serve": cmd_serve,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_run_config(
            _resolve(args.workdir, args.config) if args.config else None,
            overrides=args.overrides,
        )
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AsrUnavailableError as exc:
        print(f"external service error: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
