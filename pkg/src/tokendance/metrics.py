"""Motion-quality metrics: FID on kinetic/geometric features, diversity, BAS, music MAE."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .audiofeat import ACOUSTIC, N_FEATURES, SEMANTIC
from .motion import fk_numpy

SHRINKAGE = 1e-4
EIG_TOL = 1e-6


class MetricError(ValueError):
    pass


@lru_cache(maxsize=1)
def feature_layout() -> dict:
    return json.loads(resources.files("tokendance.data").joinpath("motion_features.json").read_text("utf-8"))


def _positions(motion, fps: float | None) -> tuple[np.ndarray, float]:
    frames = getattr(motion, "frames", motion)
    fps = getattr(motion, "fps", fps) or 30.0
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise MetricError("motion features need at least 2 frames")
    return fk_numpy(frames).astype(np.float64), float(fps)


def kinetic_features(motion, fps: float | None = None) -> np.ndarray:
    """Mean squared joint velocity per joint and axis over FK positions (72)."""
    pos, fps = _positions(motion, fps)
    vel = np.diff(pos, axis=0) * fps
    return (vel ** 2).mean(axis=0).reshape(-1)


def geometric_features(motion, fps: float | None = None) -> np.ndarray:
    """Mean and std of the declared joint distances and heights (32)."""
    pos, _ = _positions(motion, fps)
    lay = feature_layout()
    pairs = np.asarray(lay["distance_pairs"])
    dist = np.linalg.norm(pos[:, pairs[:, 0]] - pos[:, pairs[:, 1]], axis=-1)
    heights = pos[:, lay["height_joints"], lay["up_axis"]]
    q = np.concatenate([dist, heights], axis=1)
    return np.concatenate([q.mean(0), q.std(0)])


def motion_features(motion, variant: str, fps: float | None = None) -> np.ndarray:
    if variant == "kinetic":
        return kinetic_features(motion, fps)
    if variant == "geometric":
        return geometric_features(motion, fps)
    raise MetricError(f"unknown feature variant {variant!r}")


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    w = _clamp_eigs(w)
    return (v * np.sqrt(w)) @ v.T


def _clamp_eigs(w: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if np.any(w < -EIG_TOL * scale):
        raise MetricError(f"covariance product has negative eigenvalue {w.min():.3e}")
    return np.maximum(w, 0.0)


def frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    if not (np.all(np.isfinite(cov_a)) and np.all(np.isfinite(cov_b))):
        raise MetricError("non-finite covariance")
    root_a = _sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    eig = _clamp_eigs(np.linalg.eigvalsh((inner + inner.T) / 2))
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(eig).sum())
    return max(val, 0.0)


def fid(features_a, features_b, return_info: bool = False):
    """Frechet distance between Gaussian fits of two feature sets (N, D)."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"feature width mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise MetricError("each feature set needs at least 2 vectors")
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    shrunk = min(a.shape[0], b.shape[0]) < a.shape[1]
    if shrunk:
        eye = SHRINKAGE * np.eye(a.shape[1])
        cov_a, cov_b = cov_a + eye, cov_b + eye
    val = frechet_distance(a.mean(0), cov_a, b.mean(0), cov_b)
    return (val, {"shrinkage": shrunk}) if return_info else val


def diversity(features) -> float:
    """Mean Euclidean distance over all unordered pairs."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise MetricError("diversity needs at least 2 vectors")
    sq = (x * x).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    iu = np.triu_indices(x.shape[0], 1)
    return float(np.sqrt(d2[iu]).mean())


def joint_speed(motion, fps: float | None = None) -> np.ndarray:
    """Mean joint speed per frame (central differences, one-sided at the ends)."""
    pos, fps = _positions(motion, fps)
    vel = np.gradient(pos, axis=0) * fps
    return np.linalg.norm(vel, axis=-1).mean(axis=1)


def motion_beats(motion, fps: float | None = None, window: int | None = None) -> np.ndarray:
    """Frames whose mean joint speed is the minimum of their +-window neighbourhood."""
    window = window if window is not None else feature_layout()["speed_minimum_window"]
    speed = joint_speed(motion, fps)
    n = speed.size
    keep = []
    for t in range(n):
        lo, hi = max(0, t - window), min(n, t + window + 1)
        if lo + int(np.argmin(speed[lo:hi])) == t:
            keep.append(t)
    return np.asarray(keep, dtype=np.int64)


def bas(motion_beat_frames, music_beat_frames, sigma: float = 3.0) -> float:
    """Mean over music beats of exp(-d^2 / (2 sigma^2)), d = distance to nearest motion beat."""
    mb = np.asarray(music_beat_frames, dtype=np.float64).reshape(-1)
    db = np.asarray(motion_beat_frames, dtype=np.float64).reshape(-1)
    if mb.size == 0:
        raise MetricError("BAS needs at least one music beat")
    if db.size == 0:
        return 0.0
    d = np.abs(mb[:, None] - db[None, :]).min(axis=1)
    return float(np.exp(-(d ** 2) / (2.0 * sigma ** 2)).mean())


def mae_report(reconstructed, reference) -> tuple[float, float, float]:
    """(MAE@S, MAE@A, MAE@F) over semantic, acoustic and all 35 dims."""
    r = np.asarray(reconstructed, dtype=np.float64)
    g = np.asarray(reference, dtype=np.float64)
    if r.shape != g.shape or r.shape[-1] != N_FEATURES:
        raise MetricError(f"shape mismatch: {r.shape} vs {g.shape}")
    err = np.abs(r - g)
    return float(err[..., SEMANTIC].mean()), float(err[..., ACOUSTIC].mean()), float(err.mean())


@dataclass
class MetricReport:
    FID_k: float = float("nan")
    FID_g: float = float("nan")
    DIV_k: float = float("nan")
    DIV_g: float = float("nan")
    BAS: float = float("nan")
    MAE_S: float = float("nan")
    MAE_A: float = float("nan")
    MAE_F: float = float("nan")
    notes: dict = field(default_factory=dict)

    FIELDS = ("FID_k", "FID_g", "DIV_k", "DIV_g", "BAS", "MAE_S", "MAE_A", "MAE_F")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def csv_row(self) -> list[str]:
        return [f"{getattr(self, k):.6f}" for k in self.FIELDS]

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(self.to_json(), encoding="utf-8")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(self.FIELDS)
                w.writerow(self.csv_row())

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def evaluate_motions(generated: list, reference: list, music_beats: list, fps: float = 30.0,
                     sigma: float | None = None) -> MetricReport:
    """FID/DIV against reference motions plus mean BAS of generated motions."""
    sigma = sigma if sigma is not None else feature_layout()["bas_sigma_frames"]
    gk = np.stack([kinetic_features(m, fps) for m in generated])
    gg = np.stack([geometric_features(m, fps) for m in generated])
    rk = np.stack([kinetic_features(m, fps) for m in reference])
    rg = np.stack([geometric_features(m, fps) for m in reference])
    fk, info_k = fid(gk, rk, return_info=True)
    fg, info_g = fid(gg, rg, return_info=True)
    scores = [bas(motion_beats(m, fps), b, sigma) for m, b in zip(generated, music_beats) if len(b)]
    return MetricReport(FID_k=fk, FID_g=fg, DIV_k=diversity(gk), DIV_g=diversity(gg),
                        BAS=float(np.mean(scores)) if scores else float("nan"),
                        notes={"shrinkage_k": info_k["shrinkage"], "shrinkage_g": info_g["shrinkage"],
                               "n_generated": len(generated), "n_reference": len(reference)})
