"""Latency benchmark and the ablation matrix."""

from __future__ import annotations

import json
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info

from .. import autodiff as ad
from ..metrics import MetricReport
from ..ssm import scan_parallel, scan_sequential
from ..tokenizer import DOWNSAMPLE
from .config import ExperimentConfig, module_seed
from .stages import Corpus, Models, evaluate, infer, train_generator, train_tokenizers


@dataclass
class LatencyReport:
    frame_lengths: list[int]
    median_seconds: dict[str, float]
    runs: dict[str, list[float]]
    ratio: float
    scan: dict[str, dict[str, float]] = field(default_factory=dict)
    environment: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @property
    def monotone(self) -> bool:
        vals = [self.median_seconds[str(n)] for n in sorted(self.frame_lengths)]
        return all(a <= b for a, b in zip(vals, vals[1:]))


def environment() -> dict:
    blas = [{k: i.get(k) for k in ("internal_api", "num_threads", "version")} for i in threadpool_info()]
    return {"python": platform.python_version(), "numpy": np.__version__, "machine": platform.machine(),
            "processor": platform.processor(), "system": platform.system(), "cpu_count": os.cpu_count(),
            "threadpools": blas, "protocol": "median of repeats after warmup; features in, motion out"}


def _tile(features: np.ndarray, n: int) -> np.ndarray:
    reps = -(-n // features.shape[0])
    return np.concatenate([features] * reps, axis=0)[:n]


def _timed(fn, repeats: int, warmup: int) -> tuple[list[float], object]:
    out = None
    for _ in range(warmup):
        out = fn()
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        runs.append(time.perf_counter() - t0)
    return runs, out


def bench_latency(cfg: ExperimentConfig, models: Models, features: np.ndarray, genre: int = 0) -> LatencyReport:
    b = cfg.bench
    runs, medians, scan = {}, {}, {}
    rng = np.random.default_rng(module_seed(cfg.experiment.seed, "bench"))
    mc = cfg.generator_config().mamba
    for n in b.frame_lengths:
        feats = _tile(np.asarray(features, np.float32), n)[None]
        r, _ = _timed(lambda: infer(cfg, models, feats, np.array([genre])), b.repeats, b.warmup)
        runs[str(n)] = r
        medians[str(n)] = statistics.median(r)

        t = n // DOWNSAMPLE
        x = rng.standard_normal((1, t, mc.d_inner)).astype(np.float32)
        a_bar = np.exp(-rng.uniform(1e-3, 1.0, (1, t, mc.d_inner, mc.d_state))).astype(np.float32)
        b_bar = (rng.standard_normal((1, t, mc.d_inner, mc.d_state)) * 0.1).astype(np.float32)
        c = rng.standard_normal((1, t, mc.d_state)).astype(np.float32)
        with ad.no_grad():
            rp, yp = _timed(lambda: scan_parallel(x, a_bar, b_bar, c).data, b.repeats, 0)
            rs, ys = _timed(lambda: scan_sequential(x, a_bar, b_bar, c).data, b.repeats, 0)
        scan[str(n)] = {"parallel_s": statistics.median(rp), "sequential_s": statistics.median(rs),
                        "max_abs_diff": float(np.abs(yp - ys).max())}
    lengths = sorted(b.frame_lengths)
    ratio = medians[str(lengths[-1])] / medians[str(lengths[0])]
    return LatencyReport(list(b.frame_lengths), medians, runs, ratio, scan, environment())


# ---------------------------------------------------------------------------
# ablations

ABLATION_ROWS = {
    "full": {},
    "no_music_decomposition": {"music_decomposition": False},
    "no_music_tokenization": {"music_tokenization": False},
    "mamba_backbone": {"backbone": "mamba"},
}


@dataclass
class AblationResult:
    reports: dict[str, MetricReport]
    orderings: dict[str, bool]

    def to_json(self) -> str:
        doc = {"rows": {k: asdict(v) for k, v in self.reports.items()}, "orderings": self.orderings}
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["row," + ",".join(MetricReport.FIELDS)]
        lines += [f"{k}," + ",".join(v.csv_row()) for k, v in self.reports.items()]
        return "\n".join(lines) + "\n"


def run_ablation(cfg: ExperimentConfig, corpus: Corpus, rows: dict | None = None) -> AblationResult:
    """Train and evaluate each row of the flag matrix on one corpus.

    The dance tokenizer is shared by every row; music tokenizers are trained
    once per decomposition setting.
    """
    rows = ABLATION_ROWS if rows is None else rows
    base = cfg.with_overrides(ablation={"music_decomposition": True, "music_tokenization": True,
                                        "backbone": cfg.ablation.backbone})
    dance = train_tokenizers(base, corpus, dance=True, music=False).dance
    music_by_flag = {}
    reports = {}
    seed = module_seed(cfg.experiment.seed, "generate")
    for name, flags in rows.items():
        row_cfg = base.with_overrides(ablation={"backbone": "bimamba", **flags})
        decomposed = row_cfg.ablation.music_decomposition
        if decomposed not in music_by_flag:
            music_by_flag[decomposed] = train_tokenizers(row_cfg, corpus, dance=False, music=True).music
        music = music_by_flag[decomposed]
        res, stats = train_generator(row_cfg, corpus, dance, music)
        models = Models(dance, music, res.model, stats)
        motions, _, _ = infer(row_cfg, models, corpus.features, corpus.genres, seed)
        report = evaluate(row_cfg, corpus, motions, music)
        report.notes["train_accuracy"] = res.accuracy[-1] if res.accuracy else None
        reports[name] = report
    orderings = {}
    if "full" in reports and "no_music_decomposition" in reports:
        orderings["MAE_F decomposed < undecomposed"] = reports["full"].MAE_F < reports["no_music_decomposition"].MAE_F
    if "full" in reports and "mamba_backbone" in reports:
        orderings["FID_g bimamba <= mamba"] = reports["full"].FID_g <= reports["mamba_backbone"].FID_g
    return AblationResult(reports, orderings)


def write_ablation(result: AblationResult, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(result.to_json(), encoding="utf-8")
    (out_dir / "ablation.csv").write_text(result.to_csv(), encoding="utf-8")
    return [out_dir / "ablation.json", out_dir / "ablation.csv"]
