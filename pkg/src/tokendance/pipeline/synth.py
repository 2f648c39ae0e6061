"""Procedural paired corpus: click-plus-harmonics audio and beat-locked dance.

Every beat falls on an integer frame. Each motion channel is a sum of
cos(k * pi * (t - t0) / P) terms with integer k, so every joint and the root
have zero velocity exactly on the beat frames. Audio clicks sit at the
matching sample offsets, which makes motion beats coincide with audio beats
by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audiofeat import AudioClip, write_wav
from ..motion import N_JOINTS, MotionSequence, axis_angle_to_matrix, matrix_to_rot6d, save_motion_json

# joint groups on the SMPL tree
GROUPS = {
    "spine": (3, 6, 9),
    "head": (12, 15),
    "left_arm": (13, 16, 18, 20),
    "right_arm": (14, 17, 19, 21),
    "left_leg": (1, 4, 7, 10),
    "right_leg": (2, 5, 8, 11),
}
_PELVIS_HEIGHT = 0.93
_CLICK_SECONDS = 0.006


@dataclass(frozen=True)
class GenreMotif:
    """Per-genre motion motif and timbre.

    ``ratios`` are integer oscillation multipliers per joint group (1 means
    one half-cycle per beat), ``amplitudes`` are peak joint angles in radians.
    """

    name: str
    ratios: dict = field(default_factory=dict)
    amplitudes: dict = field(default_factory=dict)
    axes: dict = field(default_factory=dict)
    bounce: float = 0.03
    sway: float = 0.05
    yaw: float = 0.1
    root_hz: float = 110.0
    rolloff: float = 0.5


def default_genres() -> tuple[GenreMotif, ...]:
    x, y, z = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)
    return (
        GenreMotif("bounce", {"spine": 1, "head": 2, "left_arm": 1, "right_arm": 1, "left_leg": 2, "right_leg": 2},
                   {"spine": 0.2, "head": 0.3, "left_arm": 1.2, "right_arm": 1.2, "left_leg": 0.6, "right_leg": 0.6},
                   {"left_arm": z, "right_arm": z, "left_leg": x, "right_leg": x},
                   bounce=0.12, sway=0.15, yaw=0.3, root_hz=110.0, rolloff=0.4),
        GenreMotif("wave", {"spine": 1, "head": 1, "left_arm": 2, "right_arm": 2, "left_leg": 1, "right_leg": 1},
                   {"spine": 0.5, "head": 0.4, "left_arm": 1.4, "right_arm": 1.4, "left_leg": 0.3, "right_leg": 0.3},
                   {"spine": z, "left_arm": y, "right_arm": y},
                   bounce=0.04, sway=0.3, yaw=0.6, root_hz=146.83, rolloff=0.7),
        GenreMotif("stomp", {"spine": 1, "head": 1, "left_arm": 1, "right_arm": 1, "left_leg": 1, "right_leg": 1},
                   {"spine": 0.3, "head": 0.2, "left_arm": 0.7, "right_arm": 0.7, "left_leg": 1.2, "right_leg": 1.2},
                   {"left_leg": x, "right_leg": x, "left_arm": x, "right_arm": x},
                   bounce=0.15, sway=0.2, yaw=0.3, root_hz=82.41, rolloff=0.3),
        GenreMotif("sway", {"spine": 1, "head": 1, "left_arm": 1, "right_arm": 3, "left_leg": 1, "right_leg": 1},
                   {"spine": 0.6, "head": 0.5, "left_arm": 0.9, "right_arm": 0.9, "left_leg": 0.4, "right_leg": 0.4},
                   {"spine": z, "head": z, "left_arm": y, "right_arm": z},
                   bounce=0.05, sway=0.4, yaw=0.9, root_hz=196.0, rolloff=0.55),
    )


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_clips: int = 16
    tempo_min_hz: float = 1.5
    tempo_max_hz: float = 2.5
    clip_frames: int = 240
    fps: float = 30.0
    sample_rate: int = 22050
    genres: tuple[GenreMotif, ...] = field(default_factory=default_genres)

    def validate(self, batch_size: int | None = None) -> None:
        if self.tempo_min_hz <= 0 or self.tempo_max_hz <= 0:
            raise ValueError("tempo must be positive")
        if self.tempo_min_hz > self.tempo_max_hz:
            raise ValueError("tempo range is empty")
        if self.n_clips < 1 or not self.genres:
            raise ValueError("need at least one clip and one genre")
        if batch_size is not None and self.n_clips < 2 * batch_size:
            raise ValueError(f"clip count {self.n_clips} below twice the batch size {batch_size}")
        if (self.sample_rate / self.fps) != int(self.sample_rate / self.fps):
            raise ValueError("sample rate must be a whole multiple of fps so beats land on samples")
        lo, hi = self.periods()
        if lo > hi:
            raise ValueError("no whole-frame beat period inside the tempo range")
        if lo < 8:
            raise ValueError("beat period under 8 frames cannot be separated by the beat tracker")
        if self.clip_frames < 2 * hi + 8:
            raise ValueError("clip too short for two beats at the slowest tempo")

    def periods(self) -> tuple[int, int]:
        """Whole-frame beat periods allowed by the tempo range."""
        return math.ceil(self.fps / self.tempo_max_hz - 1e-9), math.floor(self.fps / self.tempo_min_hz + 1e-9)

    @property
    def duration(self) -> float:
        return self.clip_frames / self.fps


@dataclass
class SyntheticClip:
    index: int
    genre: int
    period: int  # frames per beat
    first_beat: int
    audio: AudioClip
    motion: MotionSequence

    @property
    def beats(self) -> list[int]:
        return list(range(self.first_beat, len(self.motion), self.period))

    @property
    def tempo_hz(self) -> float:
        return self.motion.fps / self.period


def _motion(spec: SyntheticDatasetSpec, motif: GenreMotif, period: int, t0: int, rng: np.random.Generator):
    t = np.arange(spec.clip_frames, dtype=np.float64)
    phi = math.pi * (t - t0) / period
    axes = np.tile([1.0, 0.0, 0.0], (N_JOINTS, 1))
    angles = np.zeros((spec.clip_frames, N_JOINTS))
    for group, joints in GROUPS.items():
        k = int(motif.ratios.get(group, 1))
        amp = motif.amplitudes.get(group, 0.0) * rng.uniform(0.8, 1.2)
        axis = np.asarray(motif.axes.get(group, (1.0, 0.0, 0.0)), dtype=np.float64)
        sign = -1.0 if group.startswith("right") else 1.0
        for depth, j in enumerate(joints):
            axes[j] = axis
            angles[:, j] = sign * amp * (0.75 ** depth) * np.cos(k * phi)
    # constant bends (elbows, knees) give a non-degenerate rest pose
    angles[:, [18, 19]] += [0.4, -0.4]
    angles[:, [4, 5]] += 0.1
    rots = axis_angle_to_matrix(np.broadcast_to(axes, angles.shape + (3,)), angles)
    yaw = motif.yaw * rng.uniform(0.8, 1.2) * np.cos(phi)
    rots[:, 0] = axis_angle_to_matrix(np.array([0.0, 1.0, 0.0]), yaw)
    root = np.stack([motif.sway * np.cos(phi),
                     _PELVIS_HEIGHT + motif.bounce * np.cos(2 * phi),
                     0.5 * motif.sway * np.cos(phi)], axis=1)
    frames = np.concatenate([root, matrix_to_rot6d(rots).reshape(spec.clip_frames, -1)], axis=1)
    return MotionSequence(spec.fps, frames.astype(np.float32))


def _audio(spec: SyntheticDatasetSpec, motif: GenreMotif, period: int, t0: int, rng: np.random.Generator):
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    hop = int(sr / spec.fps)
    ts = np.arange(n) / sr
    f0 = motif.root_hz * 2.0 ** (int(rng.integers(0, 5)) / 12.0)
    tone = np.zeros(n)
    for h in range(1, 7):
        if f0 * h < sr / 2:
            tone += motif.rolloff ** (h - 1) * np.sin(2 * math.pi * f0 * h * ts + rng.uniform(0, 2 * math.pi))
    tone *= 0.15 / max(np.abs(tone).max(), 1e-9)
    click_len = int(_CLICK_SECONDS * sr)
    env = np.exp(-np.arange(click_len) / (click_len / 5.0))
    out = tone
    for beat in range(t0, spec.clip_frames, period):
        start = beat * hop
        seg = slice(start, min(n, start + click_len))
        burst = rng.uniform(-1.0, 1.0, click_len) * env
        out[seg] += 0.6 * burst[: seg.stop - seg.start]
    return AudioClip(sr, np.clip(out, -1.0, 1.0))


def synth_dataset(spec: SyntheticDatasetSpec, seed: int) -> list[SyntheticClip]:
    """Deterministic corpus; genres cycle so every genre is represented."""
    spec.validate()
    root = np.random.SeedSequence(seed)
    lo, hi = spec.periods()
    clips = []
    for i, child in enumerate(root.spawn(spec.n_clips)):
        rng = np.random.Generator(np.random.Philox(child))
        genre = i % len(spec.genres)
        period = int(rng.integers(lo, hi + 1))
        t0 = int(rng.integers(4, 4 + period))
        motif = spec.genres[genre]
        clips.append(SyntheticClip(i, genre, period, t0, _audio(spec, motif, period, t0, rng),
                                   _motion(spec, motif, period, t0, rng)))
    return clips


def clip_stem(index: int) -> str:
    return f"clip_{index:04d}"


def write_corpus(clips: list[SyntheticClip], spec: SyntheticDatasetSpec, out_dir: str | Path) -> list[Path]:
    """Write WAV + motion JSON per clip and a corpus index; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    index = {"fps": spec.fps, "sample_rate": spec.sample_rate, "clip_frames": spec.clip_frames,
             "genres": [g.name for g in spec.genres], "clips": []}
    for c in clips:
        stem = clip_stem(c.index)
        write_wav(out / f"{stem}.wav", c.audio)
        save_motion_json(out / f"{stem}.json", c.motion)
        written += [out / f"{stem}.wav", out / f"{stem}.json"]
        index["clips"].append({"stem": stem, "genre": c.genre, "tempo_hz": c.tempo_hz, "period_frames": c.period,
                               "beats": c.beats})
    (out / "corpus.json").write_text(json.dumps(index, indent=1), encoding="utf-8")
    written.append(out / "corpus.json")
    return written
