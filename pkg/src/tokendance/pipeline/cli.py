"""``tokendance`` command line.

Exit status: 0 on success, 2 on configuration errors or missing
prerequisite artifacts, 3 on numerical aborts (non-finite loss or state).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from ..errors import ConfigError, MissingArtifactError
from . import artifacts as art
from . import stages
from .config import ExperimentConfig
from .experiments import bench_latency, run_ablation, write_ablation

log = logging.getLogger("tokendance")

COMMANDS = ("synth", "train-stage1", "train-stage2", "generate", "eval", "bench", "ablate")
STAGE_DIRS = {"synth": "synth", "train-stage1": "stage1", "train-stage2": "stage2", "generate": "generate",
              "eval": "eval", "bench": "bench", "ablate": "ablate"}
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _stage1_ckpts(out: Path) -> list[Path]:
    return [art.require(out / "stage1" / "dance.tdck", "stage-1 dance checkpoint (run `train-stage1` first)"),
            art.require(out / "stage1" / "music.tdck", "stage-1 music checkpoint (run `train-stage1` first)")]


def _stage2_ckpt(out: Path) -> list[Path]:
    return [art.require(out / "stage2" / "generator.tdck", "generator checkpoint (run `train-stage2` first)")]


def _inputs(command: str, out: Path, audio: Path | None) -> list[Path]:
    if command == "synth":
        return []
    if command in ("train-stage1", "ablate"):
        return stages.corpus_inputs(out)
    if command == "train-stage2":
        return _stage1_ckpts(out) + stages.corpus_inputs(out)
    if command == "generate":
        ckpts = _stage2_ckpt(out) + _stage1_ckpts(out)
        return ckpts + ([art.require(audio, "input audio")] if audio else stages.corpus_inputs(out))
    if command == "eval":
        gen = [art.require(p, "generated motion (run `generate` first)") for p in stages.generated_inputs(out)]
        return gen + stages.corpus_inputs(out)
    if command == "bench":
        return _stage2_ckpt(out) + _stage1_ckpts(out) + stages.corpus_inputs(out)
    raise ConfigError(f"unknown command {command!r}")


def _execute(command: str, cfg: ExperimentConfig, out: Path, audio: Path | None, genre: str | None) -> list[Path]:
    if command == "synth":
        return stages.run_synth(cfg, out)
    if command == "train-stage1":
        return stages.run_stage1(cfg, out)
    if command == "train-stage2":
        return stages.run_stage2(cfg, out)
    if command == "generate":
        return stages.run_generate(cfg, out, audio, genre)
    if command == "eval":
        return stages.run_eval(cfg, out)
    if command == "bench":
        corpus = stages.load_corpus(out)
        report = bench_latency(cfg, stages.load_models(cfg, out), corpus.features[0], int(corpus.genres[0]))
        d = out / "bench"
        d.mkdir(parents=True, exist_ok=True)
        (d / "latency.json").write_text(report.to_json(), encoding="utf-8")
        log.info("latency %s ratio %.3f", report.median_seconds, report.ratio)
        return [d / "latency.json"]
    if command == "ablate":
        result = run_ablation(cfg, stages.load_corpus(out))
        for k, ok in result.orderings.items():
            log.info("ordering %s: %s", k, "holds" if ok else "violated")
        return write_ablation(result, out / "ablate")
    raise ConfigError(f"unknown command {command!r}")


def run(command: str, cfg: ExperimentConfig, out: str | Path, skip_existing: bool = False,
        audio: str | Path | None = None, genre: str | None = None) -> list[Path]:
    """Run one subcommand and write its manifest; returns the written artifact paths."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    audio = Path(audio) if audio else None
    stage_dir = out / STAGE_DIRS[command]
    inputs = _inputs(command, out, audio)
    if skip_existing and art.up_to_date(stage_dir, out, command, cfg.digest(), inputs):
        log.info("%s: outputs up to date, skipping", command)
        m = art.Manifest.read(stage_dir)
        return [out / p for p in m.outputs]
    outputs = _execute(command, cfg, out, audio, genre)
    stage_dir.mkdir(parents=True, exist_ok=True)
    art.Manifest.build(command, cfg.digest(), out, inputs, outputs).write(stage_dir)
    return outputs


def _threads() -> int | None:
    raw = os.environ.get("TOKENDANCE_THREADS")
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"TOKENDANCE_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("TOKENDANCE_THREADS must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokendance", description="Two-stage music-to-dance pipeline.")
    p.add_argument("command", nargs="?", choices=COMMANDS)
    p.add_argument("--config", type=Path, default=None, help="INI config file (defaults when omitted)")
    p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
    p.add_argument("--out", type=Path, default=Path("runs/default"), help="artifact root directory")
    p.add_argument("--skip-existing", action="store_true", help="skip a stage whose manifest is current")
    p.add_argument("--print-effective-config", action="store_true", help="print resolved config and exit")
    p.add_argument("--audio", type=Path, default=None, help="generate: dance for this WAV instead of the corpus")
    p.add_argument("--genre", default=None, help="generate: genre name for --audio")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.seed)
        if args.print_effective_config:
            sys.stdout.write(cfg.to_ini())
            return EXIT_OK
        if args.command is None:
            raise ConfigError("a subcommand is required")
        if args.command == "generate" and args.audio is not None and args.genre is None:
            raise ConfigError("--audio needs --genre")
        with threadpool_limits(limits=_threads()):
            outputs = run(args.command, cfg, args.out, args.skip_existing, args.audio, args.genre)
        for p in outputs:
            log.info("wrote %s", p)
        return EXIT_OK
    except (ConfigError, MissingArtifactError) as exc:
        print(f"tokendance: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"tokendance: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"tokendance: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
