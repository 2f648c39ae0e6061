from pathlib import Path

import pytest

from tokendance.pipeline import cli

from helpers import acceptance_lines

TINY_INI = """\
[experiment]
seed = 3
clip_frames = 64

[synth]
n_clips = 4

[tokenizer]
conv_channels = 8
mlp_hidden = 8
epochs = 2
batch_size = 2
lr = 0.001

[generator]
d_model = 8
d_state = 4
music_depth = 1
global_depth = 1
dance_depth = 1
epochs = 2
batch_size = 2
lr = 0.003

[bench]
frame_lengths = 64, 128
repeats = 5
warmup = 0
"""

PIPELINE = ("synth", "train-stage1", "train-stage2", "generate", "eval")


@pytest.fixture(scope="session")
def tiny_config(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI, encoding="utf-8")
    return path


def run_pipeline(config: Path, out: Path, commands=PIPELINE) -> None:
    for cmd in commands:
        code = cli.main([cmd, "--config", str(config), "--out", str(out)])
        assert code == 0, f"{cmd} exited with {code}"


@pytest.fixture(scope="session")
def tiny_run(tiny_config, tmp_path_factory) -> Path:
    """Output root of one complete tiny pipeline run, shared read-only by tests."""
    out = tmp_path_factory.mktemp("run")
    run_pipeline(tiny_config, out)
    return out


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
