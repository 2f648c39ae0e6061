"""Stage implementations behind the CLI subcommands.

Directory layout under the output root::

    synth/      corpus.json, clip_NNNN.wav, clip_NNNN.json
    features/   clip_NNNN.tdft (feature caches)
    stage1/     dance.tdck, music.tdck, curves.csv, tokens/*.tdtk
    stage2/     generator.tdck, curves.csv
    generate/   clip_NNNN.json (generated motion), tokens/*.tdtk
    eval/       report.json, report.csv
    bench/      latency.json
    ablate/     ablation.json, ablation.csv

Each stage directory also holds a manifest.json describing its inputs and
outputs by content hash.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import fsq
from ..audiofeat import (MusicFeatureSequence, detect_beats, extract_features, read_feature_cache, read_wav,
                         write_feature_cache)
from ..errors import MissingArtifactError
from ..generator import LGLGenerator, Stage2Data, generate, train_stage2
from ..metrics import MetricReport, evaluate_motions, mae_report
from ..motion import MotionSequence, load_motion_json, save_motion_json
from ..tokenizer import DOWNSAMPLE, DanceTokenizer, MusicTokenizer, train_stage1
from . import artifacts as art
from .config import ExperimentConfig, module_seed
from .synth import synth_dataset, write_corpus

log = logging.getLogger(__name__)


@dataclass
class Corpus:
    root: Path
    stems: list[str]
    genres: np.ndarray
    motions: np.ndarray  # (N, T, 147)
    features: np.ndarray  # (N, T, 35)
    fps: float

    def __len__(self):
        return len(self.stems)


# ---------------------------------------------------------------------------
# synth


def run_synth(cfg: ExperimentConfig, out: Path) -> list[Path]:
    spec = cfg.dataset_spec()
    clips = synth_dataset(spec, module_seed(cfg.experiment.seed, "synth"))
    return write_corpus(clips, spec, out / "synth")


def corpus_index(out: Path) -> dict:
    p = art.require(out / "synth" / "corpus.json", "synthetic corpus index (run `synth` first)")
    return json.loads(p.read_text(encoding="utf-8"))


def corpus_inputs(out: Path) -> list[Path]:
    idx = corpus_index(out)
    paths = [out / "synth" / "corpus.json"]
    for c in idx["clips"]:
        paths += [out / "synth" / f"{c['stem']}.wav", out / "synth" / f"{c['stem']}.json"]
    return paths


def features_for(wav: Path, cache: Path, fps: float) -> MusicFeatureSequence:
    if cache.is_file():
        return read_feature_cache(cache)
    feats = extract_features(read_wav(art.require(wav, "clip audio")), fps)
    cache.parent.mkdir(parents=True, exist_ok=True)
    write_feature_cache(cache, feats)
    return feats


def load_corpus(out: Path) -> Corpus:
    idx = corpus_index(out)
    fps = float(idx["fps"])
    stems, genres, motions, feats = [], [], [], []
    for c in idx["clips"]:
        stem = c["stem"]
        m = load_motion_json(art.require(out / "synth" / f"{stem}.json", "clip motion"))
        f = features_for(out / "synth" / f"{stem}.wav", out / "features" / f"{stem}.tdft", fps)
        n = min(len(m), len(f))
        stems.append(stem)
        genres.append(int(c["genre"]))
        motions.append(m.frames[:n])
        feats.append(f.frames[:n])
    return Corpus(out, stems, np.asarray(genres, np.int64), np.stack(motions), np.stack(feats), fps)


# ---------------------------------------------------------------------------
# stage 1


def build_dance(cfg: ExperimentConfig) -> DanceTokenizer:
    return DanceTokenizer(np.random.default_rng(0), cfg.tokenizer_config(), fps=cfg.experiment.fps)


def build_music(cfg: ExperimentConfig) -> MusicTokenizer:
    return MusicTokenizer(np.random.default_rng(0), cfg.tokenizer_config(),
                          decomposed=cfg.ablation.music_decomposition)


def train_tokenizers(cfg: ExperimentConfig, corpus: Corpus, dance: bool = True, music: bool = True):
    t = cfg.tokenizer
    return train_stage1(corpus.motions if dance else None, corpus.features if music else None,
                        cfg.tokenizer_config(), epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
                        betas=(t.beta1, t.beta2), clip_norm=t.clip_norm,
                        seed=module_seed(cfg.experiment.seed, "stage1"), fps=corpus.fps,
                        decomposed=cfg.ablation.music_decomposition, deriv_scale=t.derivative_scale,
                        target_mse=t.target_mse or None)


def write_tokens(out_dir: Path, corpus: Corpus, dance: DanceTokenizer, music: MusicTokenizer) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    up, lo, dpad = dance.encode(corpus.motions)
    mtoks, mpad = music.encode(corpus.features)
    written = []
    for i, stem in enumerate(corpus.stems):
        streams = [("dance-upper", up[i], dpad), ("dance-lower", lo[i], dpad)]
        streams += [(name, t[i], mpad) for name, t in zip(music.stream_names, mtoks)]
        for name, toks, pad in streams:
            p = out_dir / f"{stem}.{name}.tdtk"
            fsq.write_tokens(p, fsq.TokenStream(name, toks, dance.cfg.fsq, pad))
            written.append(p)
    return written


def run_stage1(cfg: ExperimentConfig, out: Path) -> list[Path]:
    corpus = load_corpus(out)
    res = train_tokenizers(cfg, corpus)
    d = out / "stage1"
    d.mkdir(parents=True, exist_ok=True)
    art.save_dance(d / "dance.tdck", res.dance)
    art.save_music(d / "music.tdck", res.music)
    art.write_curves(d / "curves.csv", res.curves)
    toks = write_tokens(d / "tokens", corpus, res.dance, res.music)
    caches = [out / "features" / f"{s}.tdft" for s in corpus.stems]
    return [d / "dance.tdck", d / "music.tdck", d / "curves.csv"] + toks + caches


def load_tokenizers(cfg: ExperimentConfig, out: Path) -> tuple[DanceTokenizer, MusicTokenizer]:
    d = out / "stage1"
    dance = art.load_dance(d / "dance.tdck", build_dance(cfg))
    music = art.load_music(d / "music.tdck", build_music(cfg))
    return dance, music


# ---------------------------------------------------------------------------
# stage 2


def bypass_stats(features: np.ndarray) -> dict[str, np.ndarray]:
    flat = features.reshape(-1, features.shape[-1]).astype(np.float64)
    return {"bypass__mean": flat.mean(0).astype(np.float32),
            "bypass__std": np.maximum(flat.std(0), 1e-2).astype(np.float32)}


def bypass_inputs(features: np.ndarray, stats: dict[str, np.ndarray], decomposed: bool) -> list[np.ndarray]:
    """Continuous music inputs at token rate: z-scored features averaged over 8-frame windows."""
    x = (features - stats["bypass__mean"]) / stats["bypass__std"]
    n, t, w = x.shape
    pad = (-t) % DOWNSAMPLE
    if pad:
        x = np.concatenate([x, np.repeat(x[:, -1:], pad, axis=1)], axis=1)
    pooled = x.reshape(n, -1, DOWNSAMPLE, w).mean(axis=2).astype(np.float32)
    return [pooled[..., :20], pooled[..., 20:]] if decomposed else [pooled]


def music_inputs(cfg: ExperimentConfig, features: np.ndarray, music: MusicTokenizer | None,
                 stats: dict[str, np.ndarray] | None) -> list[np.ndarray]:
    if cfg.ablation.music_tokenization:
        toks, _ = music.encode(features)
        return toks
    return bypass_inputs(features, stats, cfg.ablation.music_decomposition)


def train_generator(cfg: ExperimentConfig, corpus: Corpus, dance: DanceTokenizer, music: MusicTokenizer | None):
    stats = None if cfg.ablation.music_tokenization else bypass_stats(corpus.features)
    up, lo, _ = dance.encode(corpus.motions)
    data = Stage2Data(music_inputs(cfg, corpus.features, music, stats), corpus.genres, up, lo)
    g = cfg.generator
    res = train_stage2(data, cfg.generator_config(), epochs=g.epochs, batch_size=g.batch_size, lr=g.lr,
                       betas=(g.beta1, g.beta2), clip_norm=g.clip_norm,
                       seed=module_seed(cfg.experiment.seed, "stage2"),
                       target_accuracy=g.target_accuracy or None)
    return res, stats or {}


def run_stage2(cfg: ExperimentConfig, out: Path) -> list[Path]:
    corpus = load_corpus(out)
    dance, music = load_tokenizers(cfg, out)
    res, extra = train_generator(cfg, corpus, dance, music)
    d = out / "stage2"
    d.mkdir(parents=True, exist_ok=True)
    art.save_generator(d / "generator.tdck", res.model, extra)
    rows = [(i + 1, "stage2/ce", v) for i, v in enumerate(res.losses)]
    rows += [(len(res.losses), "stage2/accuracy", res.accuracy[-1])] if res.accuracy else []
    art.write_curves(d / "curves.csv", rows)
    return [d / "generator.tdck", d / "curves.csv"]


def load_generator(cfg: ExperimentConfig, out: Path) -> tuple[LGLGenerator, dict]:
    model = LGLGenerator(np.random.default_rng(0), cfg.generator_config())
    return art.load_generator(out / "stage2" / "generator.tdck", model)


# ---------------------------------------------------------------------------
# inference


@dataclass
class Models:
    dance: DanceTokenizer
    music: MusicTokenizer | None
    generator: LGLGenerator
    stats: dict


def load_models(cfg: ExperimentConfig, out: Path) -> Models:
    ckpt = out / "stage2" / "generator.tdck"
    if not ckpt.is_file():
        raise MissingArtifactError(f"missing generator checkpoint: {ckpt} (run `train-stage2` first)")
    dance, music = load_tokenizers(cfg, out)
    gen, extra = load_generator(cfg, out)
    return Models(dance, music, gen, extra)


def infer(cfg: ExperimentConfig, models: Models, features: np.ndarray, genres: np.ndarray,
          seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """encode music -> one-pass generation -> decode dance. Returns (motions, upper, lower)."""
    feats = np.asarray(features, np.float32)
    inputs = music_inputs(cfg, feats, models.music, models.stats)
    up, lo = generate(models.generator, inputs, genres, mode=cfg.generate.mode,
                      temperature=cfg.generate.temperature, seed=seed)
    motions = models.dance.decode(up, lo)[:, : feats.shape[1]]
    return motions, up, lo


def run_generate(cfg: ExperimentConfig, out: Path, audio: Path | None = None, genre: str | None = None) -> list[Path]:
    models = load_models(cfg, out)
    d = out / "generate"
    (d / "tokens").mkdir(parents=True, exist_ok=True)
    seed = module_seed(cfg.experiment.seed, "generate")
    if audio is not None:
        if genre not in cfg.experiment.genres:
            raise ValueError(f"--genre must be one of {list(cfg.experiment.genres)}")
        feats = extract_features(read_wav(art.require(audio, "input audio")), cfg.experiment.fps).frames
        stems, genres, features = [Path(audio).stem], np.array([cfg.experiment.genres.index(genre)]), feats[None]
    else:
        corpus = load_corpus(out)
        stems, genres, features = corpus.stems, corpus.genres, corpus.features
    motions, up, lo = infer(cfg, models, features, genres, seed)
    written = []
    for i, stem in enumerate(stems):
        save_motion_json(d / f"{stem}.json", MotionSequence(cfg.experiment.fps, motions[i]))
        written.append(d / f"{stem}.json")
        for name, toks in (("dance-upper", up[i]), ("dance-lower", lo[i])):
            p = d / "tokens" / f"{stem}.{name}.tdtk"
            fsq.write_tokens(p, fsq.TokenStream(name, toks, models.dance.cfg.fsq))
            written.append(p)
    return written


# ---------------------------------------------------------------------------
# evaluation


def evaluate(cfg: ExperimentConfig, corpus: Corpus, generated: np.ndarray,
             music: MusicTokenizer | None) -> MetricReport:
    beats = [detect_beats(f) for f in corpus.features]
    report = evaluate_motions(list(generated), list(corpus.motions), beats, corpus.fps, cfg.metrics.bas_sigma)
    if music is not None:
        rec = music.reconstruct_normalized(corpus.features)
        ref = music.normalize(corpus.features)
        report.MAE_S, report.MAE_A, report.MAE_F = mae_report(rec, ref)
    return report


def run_eval(cfg: ExperimentConfig, out: Path) -> list[Path]:
    corpus = load_corpus(out)
    gen_dir = out / "generate"
    generated = np.stack([load_motion_json(art.require(gen_dir / f"{s}.json", "generated motion")).frames
                          for s in corpus.stems])
    music = None
    if (out / "stage1" / "music.tdck").is_file():
        music = art.load_music(out / "stage1" / "music.tdck", build_music(cfg))
    report = evaluate(cfg, corpus, generated, music)
    d = out / "eval"
    d.mkdir(parents=True, exist_ok=True)
    report.write(d / "report.json", d / "report.csv")
    return [d / "report.json", d / "report.csv"]


def generated_inputs(out: Path) -> list[Path]:
    idx = corpus_index(out)
    return [out / "generate" / f"{c['stem']}.json" for c in idx["clips"]]
