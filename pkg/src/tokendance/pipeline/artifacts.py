"""Artifact layout, manifests and checkpoint round trips for the CLI stages."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..errors import MissingArtifactError
from ..generator import LGLGenerator
from ..tokenizer import DanceTokenizer, MusicTokenizer

MANIFEST = "manifest.json"


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifactError(f"missing {what}: {path}")
    return Path(path)


def _rel(path: Path, root: Path) -> str:
    """Path relative to the artifact root; files outside it (``--audio``) stay absolute."""
    p, r = Path(path).resolve(), root.resolve()
    return str(p.relative_to(r)) if p.is_relative_to(r) else str(p)


@dataclass
class Manifest:
    command: str
    config_digest: str
    inputs: dict[str, str]
    outputs: dict[str, str]

    @classmethod
    def build(cls, command: str, config_digest: str, root: Path, inputs: list[Path], outputs: list[Path]):
        return cls(command, config_digest, {_rel(p, root): sha256(p) for p in sorted(inputs)},
                   {_rel(p, root): sha256(p) for p in sorted(outputs)})

    def write(self, stage_dir: Path) -> None:
        doc = {"command": self.command, "config_digest": self.config_digest,
               "inputs": self.inputs, "outputs": self.outputs}
        (stage_dir / MANIFEST).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")

    @classmethod
    def read(cls, stage_dir: Path) -> "Manifest | None":
        p = stage_dir / MANIFEST
        if not p.is_file():
            return None
        doc = json.loads(p.read_text(encoding="utf-8"))
        return cls(doc["command"], doc["config_digest"], doc["inputs"], doc["outputs"])


def up_to_date(stage_dir: Path, root: Path, command: str, config_digest: str, inputs: list[Path]) -> bool:
    """True when the stage manifest matches the config, current inputs and on-disk outputs."""
    m = Manifest.read(stage_dir)
    if m is None or m.command != command or m.config_digest != config_digest:
        return False
    current = Manifest.build(command, config_digest, root, inputs, [])
    if current.inputs != m.inputs:
        return False
    for rel, digest in m.outputs.items():
        p = root / rel
        if not p.is_file() or sha256(p) != digest:
            return False
    return True


# ---------------------------------------------------------------------------
# checkpoints


def save_dance(path: Path, model: DanceTokenizer) -> None:
    checkpoint.save(path, {**model.state_dict(), **model.extra_state()})


def load_dance(path: Path, model: DanceTokenizer) -> DanceTokenizer:
    state = checkpoint.load(require(path, "dance tokenizer checkpoint"))
    model.load_state_dict(state)
    model.load_extra_state(state)
    return model


def save_music(path: Path, model: MusicTokenizer) -> None:
    checkpoint.save(path, {**model.state_dict(), **model.extra_state()})


def load_music(path: Path, model: MusicTokenizer) -> MusicTokenizer:
    state = checkpoint.load(require(path, "music tokenizer checkpoint"))
    model.load_state_dict(state)
    model.load_extra_state(state)
    return model


def save_generator(path: Path, model: LGLGenerator, extra: dict[str, np.ndarray] | None = None) -> None:
    checkpoint.save(path, {**model.state_dict(), **(extra or {})})


def load_generator(path: Path, model: LGLGenerator) -> tuple[LGLGenerator, dict[str, np.ndarray]]:
    state = checkpoint.load(require(path, "generator checkpoint"))
    model.load_state_dict(state)
    model.trained = True
    own = set(dict(model.named_parameters()))
    return model, {k: v for k, v in state.items() if k not in own}


def write_curves(path: Path, rows: list[tuple[int, str, float]]) -> None:
    lines = ["epoch,term,value"] + [f"{e},{t},{v:.9g}" for e, t, v in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
