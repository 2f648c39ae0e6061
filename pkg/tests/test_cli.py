import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from tokendance import checkpoint, fsq
from tokendance.audiofeat import read_wav, write_wav
from tokendance.errors import TrainingDivergedError
from tokendance.metrics import MetricReport
from tokendance.motion import load_motion_json
from tokendance.pipeline import cli, stages
from tokendance.pipeline.artifacts import Manifest, sha256
from tokendance.pipeline.config import ExperimentConfig

from conftest import run_pipeline


def _main(*args):
    return cli.main([str(a) for a in args])


class TestArtifacts:
    def test_layout(self, tiny_run):
        for rel in ("synth/corpus.json", "features/clip_0000.tdft", "stage1/dance.tdck", "stage1/music.tdck",
                    "stage1/curves.csv", "stage2/generator.tdck", "generate/clip_0003.json", "eval/report.json",
                    "eval/report.csv"):
            assert (tiny_run / rel).is_file(), rel

    def test_token_streams(self, tiny_run):
        names = {p.name.split(".")[1] for p in (tiny_run / "stage1" / "tokens").glob("*.tdtk")}
        assert names == {"dance-upper", "dance-lower", "music-semantic", "music-acoustic"}
        ts = fsq.read_tokens(tiny_run / "stage1" / "tokens" / "clip_0000.dance-upper.tdtk")
        assert len(ts) == 64 // 8 and ts.levels.k == 1000

    def test_generated_motion(self, tiny_run):
        seq = load_motion_json(tiny_run / "generate" / "clip_0000.json")
        assert seq.frames.shape == (64, 147) and seq.fps == 30.0

    def test_report(self, tiny_run):
        rep = MetricReport.from_json((tiny_run / "eval" / "report.json").read_text())
        for k in MetricReport.FIELDS:
            assert np.isfinite(getattr(rep, k)), k

    def test_manifests(self, tiny_run):
        m = Manifest.read(tiny_run / "stage2")
        assert m.command == "train-stage2" and "stage1/dance.tdck" in m.inputs
        assert m.outputs["stage2/generator.tdck"] == sha256(tiny_run / "stage2" / "generator.tdck")

    def test_checkpoint_keys(self, tiny_run):
        gen = checkpoint.load(tiny_run / "stage2" / "generator.tdck")
        assert any(k.startswith("global_scan.0.") for k in gen)
        dance = checkpoint.load(tiny_run / "stage1" / "dance.tdck")
        assert "upper__mean" in dance and "lower__std" in dance


class TestExitCodes:
    def test_missing_checkpoint_names_file(self, tiny_config, tmp_path, capsys):
        assert _main("synth", "--config", tiny_config, "--out", tmp_path) == 0
        assert _main("train-stage2", "--config", tiny_config, "--out", tmp_path) == 2
        err = capsys.readouterr().err
        assert "dance.tdck" in err and "train-stage1" in err

    def test_missing_corpus(self, tiny_config, tmp_path, capsys):
        assert _main("train-stage1", "--config", tiny_config, "--out", tmp_path) == 2
        assert "corpus" in capsys.readouterr().err

    def test_generate_before_training(self, tiny_config, tmp_path, capsys):
        assert _main("generate", "--config", tiny_config, "--out", tmp_path) == 2
        assert "generator.tdck" in capsys.readouterr().err

    def test_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[generator]\nd_model = many\n")
        assert _main("synth", "--config", bad, "--out", tmp_path) == 2
        assert "d_model" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert _main("synth", "--config", tmp_path / "nope.ini", "--out", tmp_path) == 2

    def test_no_command(self, tmp_path):
        assert _main("--out", tmp_path) == 2

    def test_audio_needs_genre(self, tiny_run, tiny_config, tmp_path):
        assert _main("generate", "--config", tiny_config, "--out", tiny_run, "--audio", tmp_path / "x.wav") == 2

    def test_bad_thread_env(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("TOKENDANCE_THREADS", "lots")
        assert _main("synth", "--config", tiny_config, "--out", tmp_path) == 2

    def test_numerical_abort(self, tiny_config, tmp_path, monkeypatch, capsys):
        assert _main("synth", "--config", tiny_config, "--out", tmp_path) == 0

        def diverge(cfg, out):
            raise TrainingDivergedError(3)
        monkeypatch.setattr(stages, "run_stage1", diverge)
        assert _main("train-stage1", "--config", tiny_config, "--out", tmp_path) == 3
        assert "numerical abort" in capsys.readouterr().err

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            _main("dance-party")
        assert info.value.code == 2


class TestBehaviour:
    def test_print_effective_config(self, tiny_config, capsys):
        assert _main("--config", tiny_config, "--seed", 9, "--print-effective-config") == 0
        cfg = ExperimentConfig.from_ini(capsys.readouterr().out)
        assert cfg.experiment.seed == 9 and cfg.synth.n_clips == 4 and cfg.tokenizer.epochs == 2

    def test_skip_existing(self, tiny_run, tiny_config, tmp_path):
        out = tmp_path / "copy"
        shutil.copytree(tiny_run, out)
        ckpt = out / "stage1" / "dance.tdck"
        before = ckpt.stat().st_mtime_ns
        assert _main("train-stage1", "--config", tiny_config, "--out", out, "--skip-existing") == 0
        assert ckpt.stat().st_mtime_ns == before
        assert _main("train-stage1", "--config", tiny_config, "--out", out, "--skip-existing", "--seed", 4) == 0
        assert ckpt.stat().st_mtime_ns != before

    def test_skip_existing_reruns_when_output_changed(self, tiny_run, tiny_config, tmp_path):
        out = tmp_path / "copy"
        shutil.copytree(tiny_run, out)
        report = out / "eval" / "report.json"
        report.write_text("{}")
        assert _main("eval", "--config", tiny_config, "--out", out, "--skip-existing") == 0
        assert MetricReport.from_json(report.read_text()).FID_g >= 0

    def test_generate_from_audio(self, tiny_run, tiny_config, tmp_path):
        out = tmp_path / "copy"
        shutil.copytree(tiny_run, out)
        wav = tmp_path / "song.wav"
        write_wav(wav, read_wav(out / "synth" / "clip_0001.wav"))
        assert _main("generate", "--config", tiny_config, "--out", out, "--audio", wav, "--genre", "wave") == 0
        assert load_motion_json(out / "generate" / "song.json").frames.shape == (64, 147)
        assert _main("generate", "--config", tiny_config, "--out", out, "--audio", wav, "--genre", "polka") == 2

    def test_bench(self, tiny_run, tiny_config, tmp_path):
        out = tmp_path / "copy"
        shutil.copytree(tiny_run, out)
        assert _main("bench", "--config", tiny_config, "--out", out) == 0
        doc = json.loads((out / "bench" / "latency.json").read_text())
        assert set(doc["median_seconds"]) == {"64", "128"} and doc["ratio"] > 0
        assert all(v["max_abs_diff"] < 1e-5 for v in doc["scan"].values())
        assert "threadpools" in doc["environment"]

    def test_deterministic_across_runs(self, tiny_config, tiny_run, tmp_path):
        out = tmp_path / "again"
        run_pipeline(tiny_config, out)
        for rel in ("stage1/dance.tdck", "stage1/music.tdck", "stage2/generator.tdck", "generate/clip_0002.json",
                    "eval/report.json"):
            assert sha256(out / rel) == sha256(tiny_run / rel), rel

    def test_console_script_entry_point(self, tiny_config):
        proc = subprocess.run([sys.executable, "-m", "tokendance.pipeline.cli", "--config", str(tiny_config),
                               "--print-effective-config"], capture_output=True, text=True, check=False)
        assert proc.returncode == 0 and "[generator]" in proc.stdout
