import hashlib
import json
import wave as wave_mod
from pathlib import Path

import pytest

from conftest import cli_args_with_overrides as with_overrides
from conftest import run_cli_checked as run_cli
from voiceclone.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from voiceclone.config import ConfigError, load_run_config
from voiceclone.dataset import load_manifest
from voiceclone.toydata import make_toy_corpus


def cli_json(capsys, *argv, expect=EXIT_OK):
    run_cli(*argv, expect=expect)
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


@pytest.fixture(scope="module")
def workspace(cli_workspace):
    return cli_workspace


@pytest.fixture(scope="module")
def preprocessed(cli_preprocessed):
    return cli_preprocessed


@pytest.fixture(scope="module")
def checkpoints(cli_checkpoints):
    return cli_checkpoints


class TestConfig:
    def test_defaults_and_overrides(self):
        cfg = load_run_config(overrides=["seed=7", "mel_bins=32"])
        assert cfg["seed"] == 7
        assert cfg["mel_bins"] == 32
        assert cfg["vocoder_lambda_mel"] == 45.0

    def test_config_file_roundtrip(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 3\nmel_bins = 20  # comment\n", "utf-8")
        cfg = load_run_config(path)
        assert cfg["seed"] == 3
        assert cfg["mel_bins"] == 20

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("no_such_key = 1\n", "utf-8")
        with pytest.raises(ConfigError, match="no_such_key"):
            load_run_config(path)
        with pytest.raises(ConfigError, match="typo"):
            load_run_config(overrides=["typo=1"])

    def test_tuple_keys(self):
        cfg = load_run_config(overrides=["synth_reduction_factors=4,2,1"])
        assert cfg.ints("synth_reduction_factors") == (4, 2, 1)


class TestExitCodes:
    def test_usage_error(self):
        assert main(["no-such-command"]) == EXIT_USAGE

    def test_data_error_for_missing_corpus(self, tmp_path):
        assert (
            main(["preprocess", "--workdir", str(tmp_path), "--corpus", "ghost", "--out", "x"])
            == EXIT_DATA
        )

    def test_data_error_for_bad_config_key(self, tmp_path):
        assert (
            main([
                "preprocess", "--workdir", str(tmp_path), "--corpus", "c", "--out", "x",
                "--set", "bogus=1",
            ])
            == EXIT_DATA
        )


class TestPreprocess:
    def test_manifest_and_mel_cache(self, workspace, preprocessed, capsys):
        manifest = load_manifest(preprocessed / "manifest.jsonl")
        assert len(manifest) == 12
        mels = sorted((preprocessed / "mels").glob("*.npy"))
        assert len(mels) == 12
        meta = json.loads((preprocessed / "manifest.meta.json").read_text("utf-8"))
        assert meta["status_counts"] == {"pass": 12}
        assert meta["config"]["mel_bins"] == 16

    def test_rerun_is_byte_identical(self, workspace, preprocessed):
        before = (preprocessed / "manifest.jsonl").read_bytes()
        run_cli(*with_overrides(
            "preprocess", "--workdir", str(workspace), "--corpus", "corpus", "--out", "data"
        ))
        assert (preprocessed / "manifest.jsonl").read_bytes() == before

    def test_corrupt_wav_flagged_others_processed(self, tmp_path, capsys):
        root = tmp_path
        make_toy_corpus(root / "corpus", 2, 3, seconds=0.35)
        (root / "corpus" / "spk0" / "utt000.wav").write_bytes(b"not audio at all")
        payload = cli_json(capsys, *with_overrides(
            "preprocess", "--workdir", str(root), "--corpus", "corpus", "--out", "out"
        ))
        assert payload["removed"] == 1
        assert payload["pass"] == 5
        assert len(load_manifest(root / "out" / "manifest.jsonl")) == 5

    def test_echo_asr_mode_passes_everything(self, tmp_path, capsys):
        make_toy_corpus(tmp_path / "corpus", 2, 2, seconds=0.35)
        payload = cli_json(capsys, *with_overrides(
            "preprocess", "--workdir", str(tmp_path), "--corpus", "corpus", "--out", "out",
            "--set", "asr_mode=echo",
        ))
        assert payload["pass"] == 4


class TestTrain:
    def test_synth_requires_speaker_checkpoint(self, workspace, preprocessed, capsys):
        code = main(with_overrides(
            "train", "synth", "--workdir", str(workspace),
            "--manifest", "data/manifest.jsonl", "--out", "ckpt/nope.ckpt",
        ))
        assert code == EXIT_DATA
        assert "speaker checkpoint required" in capsys.readouterr().err

    def test_all_checkpoints_written(self, checkpoints):
        for name in ("speaker.ckpt", "synth.ckpt", "vocoder.ckpt"):
            assert (checkpoints / name).exists()
            assert (checkpoints / f"{name}.log.jsonl").exists()

    def test_checkpoints_embed_run_config(self, checkpoints):
        from voiceclone.checkpoint import load_checkpoint

        for name, kind in (
            ("speaker.ckpt", "speaker"),
            ("synth.ckpt", "synthesizer"),
            ("vocoder.ckpt", "vocoder"),
        ):
            ckpt = load_checkpoint(checkpoints / name, expected_kind=kind)
            assert ckpt.config["run_config"]["mel_bins"] == 16


class TestClone:
    def clone(self, workspace, capsys, out_name, reference="refs/spk0.wav", seed=0):
        return cli_json(capsys, *with_overrides(
            "clone", "--workdir", str(workspace),
            "--reference", reference,
            "--text", "ni3 hao3",
            "--speaker-ckpt", "ckpt/speaker.ckpt",
            "--synth-ckpt", "ckpt/synth.ckpt",
            "--vocoder-ckpt", "ckpt/vocoder.ckpt",
            "--out", out_name,
            "--set", f"seed={seed}",
        ))

    def test_wav_duration_matches_predicted_frames(self, workspace, checkpoints, capsys):
        payload = self.clone(workspace, capsys, "clone_a.wav")
        out = workspace / "clone_a.wav"
        assert out.exists()
        with wave_mod.open(str(out), "rb") as wf:
            assert wf.getframerate() == 16000
            n_samples = wf.getnframes()
        assert n_samples == payload["frames"] * 64
        assert payload["duration"] == payload["expected_duration"]

    def test_deterministic_output_hash(self, workspace, checkpoints, capsys):
        self.clone(workspace, capsys, "clone_b1.wav", seed=5)
        self.clone(workspace, capsys, "clone_b2.wav", seed=5)
        h1 = hashlib.sha256((workspace / "clone_b1.wav").read_bytes()).hexdigest()
        h2 = hashlib.sha256((workspace / "clone_b2.wav").read_bytes()).hexdigest()
        assert h1 == h2

    def test_reference_speaker_changes_output(self, workspace, checkpoints, capsys):
        self.clone(workspace, capsys, "clone_s0.wav", reference="refs/spk0.wav")
        self.clone(workspace, capsys, "clone_s1.wav", reference="refs/spk1.wav")
        a = (workspace / "clone_s0.wav").read_bytes()
        b = (workspace / "clone_s1.wav").read_bytes()
        assert a != b

    def test_short_reference_rejected(self, workspace, checkpoints, capsys):
        code = main(with_overrides(
            "clone", "--workdir", str(workspace),
            "--reference", "corpus/spk0/utt001.wav",  # 0.35 s < 1 s
            "--text", "ni3 hao3",
            "--speaker-ckpt", "ckpt/speaker.ckpt",
            "--synth-ckpt", "ckpt/synth.ckpt",
            "--vocoder-ckpt", "ckpt/vocoder.ckpt",
            "--out", "never.wav",
        ))
        assert code == EXIT_DATA
        assert "reference too short" in capsys.readouterr().err

    def test_stub_model_clone(self, tmp_path, capsys):
        payload = cli_json(capsys,
            "clone", "--workdir", str(tmp_path), "--stub-model",
            "--reference", "unused.wav", "--text", "ni3 hao3", "--out", "stub.wav",
        )
        assert (tmp_path / "stub.wav").exists()
        assert payload["duration"] == payload["expected_duration"]


class TestBenchRtf:
    @pytest.fixture()
    def test_set(self, tmp_path):
        path = tmp_path / "sentences.txt"
        path.write_text("ni3 hao3\nzai4 jian4\n", "utf-8")
        return tmp_path

    def test_stub_rtf_matches_delay(self, test_set, capsys):
        payload = cli_json(capsys,
            "bench-rtf", "--workdir", str(test_set), "--test-set", "sentences.txt",
            "--stub-model", "--stub-delay", "0.05", "--runs", "3",
        )
        assert payload["rtf"] == pytest.approx(0.05, rel=0.10)
        assert payload["runs"] == 3

    def test_default_runs_is_ten_with_report_file(self, test_set, capsys):
        payload = cli_json(capsys,
            "bench-rtf", "--workdir", str(test_set), "--test-set", "sentences.txt",
            "--stub-model", "--stub-delay", "0.002", "--out", "rtf.json",
        )
        assert payload["runs"] == 10
        assert len(payload["per_run"]) == 10
        report = json.loads((test_set / "rtf.json").read_text("utf-8"))
        assert report["config"]["bench_runs"] == 10
        assert len(report["per_run"]) == 10

    def test_runs_override_honored(self, test_set, capsys):
        payload = cli_json(capsys,
            "bench-rtf", "--workdir", str(test_set), "--test-set", "sentences.txt",
            "--stub-model", "--stub-delay", "0.002", "--runs", "1",
        )
        assert payload["runs"] == 1

    def test_empty_test_set_rejected(self, tmp_path):
        (tmp_path / "empty.txt").write_text("", "utf-8")
        code = main([
            "bench-rtf", "--workdir", str(tmp_path), "--test-set", "empty.txt", "--stub-model",
        ])
        assert code == EXIT_DATA


class TestServe:
    def test_demo_serve_builds_plan_and_app(self, tmp_path, monkeypatch):
        captured = {}

        def fake_run(app, **kwargs):
            captured["app"] = app
            captured["kwargs"] = kwargs

        import uvicorn

        monkeypatch.setattr(uvicorn, "run", fake_run)
        run_cli(
            "serve", "--workdir", str(tmp_path), "--demo", "--data", "listen-data",
            "--port", "9", "--host", "127.0.0.9",
        )
        assert (tmp_path / "listen-demo" / "plan.json").exists()
        assert captured["kwargs"]["port"] == 9
        assert captured["kwargs"]["host"] == "127.0.0.9"
        # the captured app serves the demo plan
        from fastapi.testclient import TestClient

        client = TestClient(captured["app"])
        created = client.post("/api/sessions", json={"listener_id": "x", "seed": 1})
        assert created.json()["total"] == 20

    def test_serve_without_plan_or_demo_is_data_error(self, tmp_path):
        code = main(["serve", "--workdir", str(tmp_path), "--data", "d"])
        assert code == EXIT_DATA


class TestReport:
    def write_export(self, path, mos_values=(3, 4, 5), ab_counts=(103, 25, 32)):
        lines = []
        for i, value in enumerate(mos_values):
            lines.append(json.dumps({
                "session": "s1", "listener": "l1", "item": i, "kind": "mos",
                "value": value, "systems": ["system-a"],
            }))
        a, b, same = ab_counts
        votes = ["A"] * a + ["B"] * b + ["Same"] * same
        for i, vote in enumerate(votes):
            lines.append(json.dumps({
                "session": "s1", "listener": "l1", "item": 100 + i, "kind": "ab",
                "value": vote, "systems": ["system-a", "system-b"],
            }))
        path.write_text("\n".join(lines) + "\n", "utf-8")

    def test_tables_shaped_report(self, tmp_path, capsys):
        export = tmp_path / "export.jsonl"
        self.write_export(export)
        run_cli(
            "report", "--workdir", str(tmp_path), "--export", "export.jsonl",
            "--out", "report.json",
        )
        out = capsys.readouterr().out
        assert "4.00 ± 1.13" in out
        assert "64.375 / 15.625 / 20.000" in out
        payload = json.loads((tmp_path / "report.json").read_text("utf-8"))
        assert payload["mos"]["system-a"]["n"] == 3
        assert payload["ab"]["p_value"] < 0.01
        assert payload["ab"]["labels"] == ["system-a", "system-b"]

    def test_empty_mos_subset_omitted_with_notice(self, tmp_path, capsys):
        export = tmp_path / "export.jsonl"
        self.write_export(export, mos_values=())
        run_cli("report", "--workdir", str(tmp_path), "--export", "export.jsonl")
        assert "MOS section omitted" in capsys.readouterr().out

    def test_malformed_line_reports_number(self, tmp_path, capsys):
        export = tmp_path / "export.jsonl"
        export.write_text('{"session": "s"}\n', "utf-8")
        code = main(["report", "--workdir", str(tmp_path), "--export", "export.jsonl"])
        assert code == EXIT_DATA
        assert "line 1" in capsys.readouterr().err
