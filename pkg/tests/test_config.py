from pathlib import Path

import pytest

from tokendance.errors import ConfigError
from tokendance.pipeline.config import ExperimentConfig, module_seed

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.ini"


class TestDefaults:
    def test_defaults_validate(self):
        cfg = ExperimentConfig.load(None)
        assert cfg.tokenizer.levels == (8, 5, 5, 5) and cfg.generator.d_model == 512
        assert cfg.generator_config().vocab == 1000 and cfg.generator_config().music_widths == (20, 15)

    def test_desk_config(self):
        cfg = ExperimentConfig.load(DESK)
        assert cfg.synth.n_clips == 16 and cfg.generator.d_model == 32

    def test_seed_override(self):
        assert ExperimentConfig.load(DESK, seed=42).experiment.seed == 42


class TestRoundTrip:
    def test_ini_round_trip(self):
        cfg = ExperimentConfig.load(DESK).with_overrides(ablation={"backbone": "mamba", "music_tokenization": False})
        back = ExperimentConfig.from_ini(cfg.to_ini())
        assert back == cfg and back.digest() == cfg.digest()

    def test_digest_tracks_values(self):
        cfg = ExperimentConfig()
        assert cfg.digest() != cfg.with_overrides(generate={"temperature": 0.5}).digest()

    def test_bool_spellings(self):
        for raw, val in (("off", False), ("no", False), ("true", True), ("1", True)):
            cfg = ExperimentConfig.from_ini(f"[ablation]\nmusic_decomposition = {raw}\n")
            assert cfg.ablation.music_decomposition is val

    def test_derived_ablation_configs(self):
        cfg = ExperimentConfig().with_overrides(ablation={"music_decomposition": False, "music_tokenization": False})
        g = cfg.generator_config()
        assert g.music_widths == (35,) and g.music_input == "features"


class TestErrors:
    @pytest.mark.parametrize("text,match", [
        ("[nonsense]\na = 1\n", "sections"),
        ("[generator]\nwidth = 3\n", "unknown key"),
        ("[generator]\nd_model = big\n", "cannot parse"),
        ("[ablation]\nbackbone = transformer\n", "backbone"),
        ("[generate]\nmode = beam\n", "mode"),
        ("[experiment]\nclip_frames = 100\n", "multiple"),
        ("[experiment]\ngenres = bounce, polka\n", "unknown genres"),
        ("[tokenizer]\nlevels = 8, 1\n", "level"),
        ("[synth]\nn_clips = 10\n", "twice the batch"),
        ("[bench]\nrepeats = 2\n", "repeats"),
        ("[tokenizer]\nlr = -1\n", "positive"),
        ("not an ini", "malformed"),
    ])
    def test_invalid(self, text, match):
        with pytest.raises(ConfigError, match=match):
            ExperimentConfig.from_ini(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            ExperimentConfig.load(tmp_path / "absent.ini")

    def test_config_error_is_value_error(self):
        assert issubclass(ConfigError, ValueError)


class TestSeeds:
    def test_stable_and_distinct(self):
        assert module_seed(0, "stage1") == module_seed(0, "stage1")
        seeds = {module_seed(s, name) for s in (0, 1) for name in ("synth", "stage1", "stage2", "generate")}
        assert len(seeds) == 8
