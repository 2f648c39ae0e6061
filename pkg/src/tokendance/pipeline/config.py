"""Experiment configuration: INI sections per module, typed and validated.

Defaults are the full-scale hyperparameters. ``configs/desk.ini`` shrinks the
models so the whole pipeline runs in minutes on one CPU core.
"""

from __future__ import annotations

import configparser
import hashlib
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..generator import GeneratorConfig
from ..tokenizer import TokenizerConfig
from .synth import SyntheticDatasetSpec, default_genres


@dataclass(frozen=True)
class ExperimentSection:
    seed: int = 0
    fps: float = 30.0
    clip_frames: int = 240
    genres: tuple[str, ...] = tuple(g.name for g in default_genres())


@dataclass(frozen=True)
class SynthSection:
    n_clips: int = 128
    tempo_min_hz: float = 1.5
    tempo_max_hz: float = 2.5
    sample_rate: int = 22050


@dataclass(frozen=True)
class TokenizerSection:
    conv_channels: int = 256
    mlp_hidden: int = 256
    levels: tuple[int, ...] = (8, 5, 5, 5)
    epochs: int = 200
    batch_size: int = 32
    lr: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.99
    clip_norm: float = 1.0
    derivative_scale: float = 1.0
    target_mse: float = 0.0


@dataclass(frozen=True)
class GeneratorSection:
    d_model: int = 512
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    music_depth: int = 2
    global_depth: int = 4
    dance_depth: int = 2
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    clip_norm: float = 1.0
    target_accuracy: float = 0.0


@dataclass(frozen=True)
class AblationSection:
    music_decomposition: bool = True
    music_tokenization: bool = True
    backbone: str = "bimamba"


@dataclass(frozen=True)
class GenerateSection:
    mode: str = "argmax"
    temperature: float = 1.0


@dataclass(frozen=True)
class MetricsSection:
    bas_sigma: float = 3.0


@dataclass(frozen=True)
class BenchSection:
    frame_lengths: tuple[int, ...] = (1024, 4096)
    repeats: int = 5
    warmup: int = 1


SECTIONS = {
    "experiment": ExperimentSection,
    "synth": SynthSection,
    "tokenizer": TokenizerSection,
    "generator": GeneratorSection,
    "ablation": AblationSection,
    "generate": GenerateSection,
    "metrics": MetricsSection,
    "bench": BenchSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    synth: SynthSection = field(default_factory=SynthSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    generate: GenerateSection = field(default_factory=GenerateSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    bench: BenchSection = field(default_factory=BenchSection)

    # -- derived configs -------------------------------------------------

    def tokenizer_config(self) -> TokenizerConfig:
        t = self.tokenizer
        return TokenizerConfig(conv_channels=t.conv_channels, mlp_hidden=t.mlp_hidden, levels=t.levels)

    def generator_config(self) -> GeneratorConfig:
        g, a = self.generator, self.ablation
        widths = (20, 15) if a.music_decomposition else (35,)
        return GeneratorConfig(d_model=g.d_model, d_state=g.d_state, d_conv=g.d_conv, expand=g.expand,
                               music_depth=g.music_depth, global_depth=g.global_depth, dance_depth=g.dance_depth,
                               vocab=self.tokenizer_config().fsq.k, n_genres=len(self.experiment.genres),
                               backbone=a.backbone,
                               music_input="tokens" if a.music_tokenization else "features",
                               music_widths=widths)

    def dataset_spec(self) -> SyntheticDatasetSpec:
        by_name = {g.name: g for g in default_genres()}
        genres = tuple(by_name[n] for n in self.experiment.genres)
        s = self.synth
        return SyntheticDatasetSpec(n_clips=s.n_clips, tempo_min_hz=s.tempo_min_hz, tempo_max_hz=s.tempo_max_hz,
                                    clip_frames=self.experiment.clip_frames, fps=self.experiment.fps,
                                    sample_rate=s.sample_rate, genres=genres)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """``cfg.with_overrides(ablation={"backbone": "mamba"})``."""
        new = self
        for name, values in sections.items():
            new = replace(new, **{name: replace(getattr(new, name), **values)})
        new.validate()
        return new

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        e, a = self.experiment, self.ablation
        if e.fps <= 0 or e.clip_frames <= 0:
            raise ConfigError("fps and clip_frames must be positive")
        if e.clip_frames % 8:
            raise ConfigError("clip_frames must be a multiple of the token stride 8")
        known = {g.name for g in default_genres()}
        unknown = [n for n in e.genres if n not in known]
        if unknown or not e.genres:
            raise ConfigError(f"unknown genres {unknown}; available: {sorted(known)}")
        if a.backbone not in ("bimamba", "mamba"):
            raise ConfigError(f"backbone must be bimamba or mamba, got {a.backbone!r}")
        if self.generate.mode not in ("argmax", "sample"):
            raise ConfigError(f"generate mode must be argmax or sample, got {self.generate.mode!r}")
        if self.generate.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not self.bench.frame_lengths or self.bench.repeats < 5:
            raise ConfigError("bench needs frame lengths and at least 5 repeats")
        if any(n % 8 for n in self.bench.frame_lengths):
            raise ConfigError("bench frame lengths must be multiples of 8")
        if self.metrics.bas_sigma <= 0:
            raise ConfigError("bas_sigma must be positive")
        for sec in (self.tokenizer, self.generator):
            if sec.epochs < 1 or sec.batch_size < 1 or sec.lr <= 0:
                raise ConfigError("epochs, batch_size and lr must be positive")
        batch = max(self.tokenizer.batch_size, self.generator.batch_size)
        try:
            self.dataset_spec().validate(batch_size=batch)
            self.tokenizer_config().fsq
            self.generator_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- serialisation -----------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for name in SECTIONS:
            sec = getattr(self, name)
            parser[name] = {f.name: _format(getattr(sec, f.name)) for f in fields(sec)}
        lines = []
        for name in parser.sections():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in parser[name].items()]
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    @classmethod
    def from_ini(cls, text: str, seed: int | None = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        extra = set(parser.sections()) - set(SECTIONS)
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        kwargs = {}
        for name, klass in SECTIONS.items():
            default = klass()
            values = {}
            types = {f.name: f for f in fields(klass)}
            if parser.has_section(name):
                for key, raw in parser[name].items():
                    if key not in types:
                        raise ConfigError(f"unknown key [{name}] {key}")
                    values[key] = _parse(raw, getattr(default, key), f"[{name}] {key}")
            kwargs[name] = replace(default, **values)
        cfg = cls(**kwargs)
        if seed is not None:
            cfg = replace(cfg, experiment=replace(cfg.experiment, seed=int(seed)))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, seed: int | None = None) -> "ExperimentConfig":
        if path is None:
            return cls.from_ini("", seed)
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_ini(p.read_text(encoding="utf-8"), seed)


def _format(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(p) for p in parts)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from exc


def module_seed(master: int, name: str) -> int:
    """Independent per-module seed from the master seed (counter-based fan-out)."""
    ss = np.random.SeedSequence(master, spawn_key=(zlib.crc32(name.encode("utf-8")),))
    bits = np.random.Generator(np.random.Philox(ss)).integers(0, 2**31 - 1)
    return int(bits)
