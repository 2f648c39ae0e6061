"""Skeleton, 6D rotations, forward kinematics and the dance reconstruction loss.

A pose frame is 147 reals: root translation (3, metres) followed by 24 joint
rotations in the 6D representation (the first two columns of each rotation
matrix, column-major: r[0:3] is column 1, r[3:6] is column 2).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

N_JOINTS = 24
POSE_DIM = 3 + 6 * N_JOINTS
DEGENERATE_TOL = 1e-6


class DegenerateRotationError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonDef:
    parents: tuple[int, ...]
    offsets: np.ndarray = field(repr=False)
    names: tuple[str, ...] = ()

    def __post_init__(self):
        roots = [j for j, p in enumerate(self.parents) if p == -1]
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("skeleton needs exactly one root at index 0")
        if any(p >= j for j, p in enumerate(self.parents) if p != -1):
            raise ValueError("parent index must precede child index")
        if np.shape(self.offsets) != (len(self.parents), 3):
            raise ValueError("offsets must be (J, 3)")

    @property
    def n_joints(self) -> int:
        return len(self.parents)


@dataclass(frozen=True)
class BodySplit:
    upper: tuple[int, ...]
    lower: tuple[int, ...]

    def __post_init__(self):
        up, lo = set(self.upper), set(self.lower)
        if up & lo:
            raise ValueError(f"body split halves overlap on joints {sorted(up & lo)}")
        if up | lo != set(range(N_JOINTS)):
            raise ValueError("body split must cover all 24 joints")

    @property
    def upper_dim(self) -> int:
        return 6 * len(self.upper)

    @property
    def lower_dim(self) -> int:
        return 3 + 6 * len(self.lower)

    @property
    def order(self) -> np.ndarray:
        """Pose-vector columns in [upper | lower] layout."""
        up = [3 + 6 * j + c for j in self.upper for c in range(6)]
        lo = [0, 1, 2] + [3 + 6 * j + c for j in self.lower for c in range(6)]
        return np.asarray(up + lo, dtype=np.int64)


@lru_cache(maxsize=1)
def _skeleton_file() -> dict:
    text = resources.files("tokendance.data").joinpath("smpl_skeleton.json").read_text("utf-8")
    return json.loads(text)


def smpl_skeleton() -> SkeletonDef:
    d = _skeleton_file()
    return SkeletonDef(tuple(d["parents"]), np.asarray(d["offsets"], dtype=np.float32), tuple(d["names"]))


def default_split() -> BodySplit:
    d = _skeleton_file()
    return BodySplit(tuple(d["upper"]), tuple(d["lower"]))


@dataclass
class MotionSequence:
    fps: float
    frames: np.ndarray  # (T, 147)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frames.ndim != 2 or self.frames.shape[1] != POSE_DIM:
            raise ValueError(f"motion frames must be (T, {POSE_DIM}), got {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# rotations


def _check_6d(r: np.ndarray) -> None:
    a1, a2 = r[..., 0:3].astype(np.float64), r[..., 3:6].astype(np.float64)
    n1 = np.linalg.norm(a1, axis=-1)
    n2 = np.linalg.norm(a2, axis=-1)
    cross = np.linalg.norm(np.cross(a1, a2), axis=-1)
    bad = (n1 < DEGENERATE_TOL) | (n2 < DEGENERATE_TOL) | (cross < DEGENERATE_TOL * np.maximum(n1 * n2, 1e-300))
    if np.any(bad):
        raise DegenerateRotationError(f"{int(bad.sum())} degenerate 6D rotation(s): zero or parallel columns")


def _normalize(v: Tensor) -> Tensor:
    return v * (ad.tsum(v * v, axis=-1, keepdims=True) ** -0.5)


def _cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = a[..., 0:1], a[..., 1:2], a[..., 2:3]
    bx, by, bz = b[..., 0:1], b[..., 1:2], b[..., 2:3]
    return ad.concat([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def rot6d_to_matrix(r) -> Tensor:
    """(..., 6) -> (..., 3, 3) by Gram-Schmidt plus a cross product."""
    r = ad.as_tensor(r)
    if r.shape[-1] != 6:
        raise ValueError(f"6D rotation needs trailing dim 6, got {r.shape}")
    _check_6d(r.data)
    b1 = _normalize(r[..., 0:3])
    a2 = r[..., 3:6]
    b2 = _normalize(a2 - b1 * ad.tsum(b1 * a2, axis=-1, keepdims=True))
    b3 = _cross(b1, b2)
    return ad.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def axis_angle_to_matrix(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; ``axis`` (..., 3) unit vectors, ``angle`` (...)."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)[..., None, None]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    k = np.stack([np.stack([zero, -z, y], -1), np.stack([z, zero, -x], -1), np.stack([-y, x, zero], -1)], -2)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


# ---------------------------------------------------------------------------
# forward kinematics


def forward_kinematics(pose, skel: SkeletonDef | None = None) -> Tensor:
    """Pose vectors (..., 147) -> joint positions (..., 24, 3) in metres."""
    skel = skel or smpl_skeleton()
    pose = ad.as_tensor(pose)
    if pose.shape[-1] != 3 + 6 * skel.n_joints:
        raise ValueError(f"pose width {pose.shape[-1]} does not match skeleton")
    lead = pose.shape[:-1]
    root = pose[..., 0:3]
    rot6 = ad.reshape(pose[..., 3:], lead + (skel.n_joints, 6))
    local = rot6d_to_matrix(rot6)  # (..., J, 3, 3)
    offsets = skel.offsets.astype(pose.data.dtype)
    rots: list[Tensor] = []
    pos: list[Tensor] = []
    for j, parent in enumerate(skel.parents):
        r_local = local[..., j, :, :]
        if parent < 0:
            rots.append(r_local)
            pos.append(root)
            continue
        g_parent = rots[parent]
        step = ad.matmul(g_parent, offsets[j].reshape(3, 1))
        pos.append(pos[parent] + ad.reshape(step, lead + (3,)))
        rots.append(ad.matmul(g_parent, r_local))
    return ad.stack(pos, axis=-2)


def fk_numpy(frames: np.ndarray, skel: SkeletonDef | None = None) -> np.ndarray:
    with ad.no_grad():
        return forward_kinematics(np.asarray(frames, dtype=np.float32), skel).data


# ---------------------------------------------------------------------------
# temporal derivatives and loss


def temporal_derivative(x, fps: float, order: int = 1, axis: int = -2):
    """Forward differences along the time axis, scaled by ``fps`` per order.

    Works on numpy arrays and tensors; the output is ``order`` frames shorter.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    is_tensor = isinstance(x, Tensor)
    n = x.shape[axis]
    if n <= order:
        raise ValueError(f"sequence of length {n} too short for derivative order {order}")
    out = x
    for _ in range(order):
        head = _take(out, slice(1, None), axis)
        tail = _take(out, slice(None, -1), axis)
        out = (head - tail) * float(fps)
    if not is_tensor:
        out = np.asarray(out)
    return out


def _take(x, sl: slice, axis: int):
    index = [slice(None)] * x.ndim
    index[axis] = sl
    return x[tuple(index)]


LOSS_TERMS = ("rec", "rec_fk", "vel", "vel_fk", "acc", "acc_fk")


def dance_loss(pred, target, fps: float = 30.0, skel: SkeletonDef | None = None,
               deriv_scale: float | None = None) -> tuple[Tensor, dict[str, float]]:
    """Six-term reconstruction loss over pose parameters and FK joint positions.

    ``pred`` and ``target`` are (..., T, 147). Every term is a mean-squared
    error and all terms carry unit weight. Derivatives are scaled by ``fps``
    unless ``deriv_scale`` overrides the per-order scale factor.
    """
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"dance_loss shape mismatch: {pred.shape} vs {target.shape}")
    scale = fps if deriv_scale is None else deriv_scale
    fk_pred = forward_kinematics(pred, skel)
    with ad.no_grad():
        fk_tgt = forward_kinematics(ad.Tensor(target.data), skel)
    time_axis = pred.ndim - 2
    fk_axis = fk_pred.ndim - 3
    terms = {
        "rec": ad.mse_loss(pred, target),
        "rec_fk": ad.mse_loss(fk_pred, fk_tgt),
        "vel": ad.mse_loss(temporal_derivative(pred, scale, 1, time_axis),
                           temporal_derivative(target, scale, 1, time_axis)),
        "vel_fk": ad.mse_loss(temporal_derivative(fk_pred, scale, 1, fk_axis),
                              temporal_derivative(fk_tgt, scale, 1, fk_axis)),
        "acc": ad.mse_loss(temporal_derivative(pred, scale, 2, time_axis),
                           temporal_derivative(target, scale, 2, time_axis)),
        "acc_fk": ad.mse_loss(temporal_derivative(fk_pred, scale, 2, fk_axis),
                              temporal_derivative(fk_tgt, scale, 2, fk_axis)),
    }
    total = terms["rec"]
    for name in LOSS_TERMS[1:]:
        total = total + terms[name]
    return total, {k: float(v.data) for k, v in terms.items()}


# ---------------------------------------------------------------------------
# body split


def split_body(frames, split: BodySplit | None = None):
    """(..., 147) -> (upper (..., 6|U|), lower (..., 3 + 6|L|))."""
    split = split or default_split()
    order = split.order
    u = split.upper_dim
    if isinstance(frames, Tensor):
        perm = ad.permute_last(frames, order)
        return perm[..., :u], perm[..., u:]
    x = np.asarray(frames)
    if x.shape[-1] != POSE_DIM:
        raise ValueError(f"frame width {x.shape[-1]} != {POSE_DIM}")
    perm = x[..., order]
    return perm[..., :u].copy(), perm[..., u:].copy()


def join_body(upper, lower, split: BodySplit | None = None):
    split = split or default_split()
    inv = np.argsort(split.order)
    if isinstance(upper, Tensor) or isinstance(lower, Tensor):
        return ad.permute_last(ad.concat([ad.as_tensor(upper), ad.as_tensor(lower)], axis=-1), inv)
    both = np.concatenate([np.asarray(upper), np.asarray(lower)], axis=-1)
    if both.shape[-1] != POSE_DIM:
        raise ValueError(f"joined width {both.shape[-1]} != {POSE_DIM}")
    return both[..., inv]


# ---------------------------------------------------------------------------
# files


def save_motion_json(path: str | Path, seq: MotionSequence) -> None:
    doc = {"fps": seq.fps, "joints": N_JOINTS, "frames": np.round(seq.frames.astype(np.float64), 6).tolist()}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_motion_json(path: str | Path) -> MotionSequence:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if int(doc.get("joints", N_JOINTS)) != N_JOINTS:
        raise ValueError(f"{path}: expected {N_JOINTS} joints")
    return MotionSequence(float(doc["fps"]), np.asarray(doc["frames"], dtype=np.float32))


def export_motion_csv(path: str | Path, seq: MotionSequence) -> None:
    header = ["tx", "ty", "tz"] + [f"j{j}_r{c}" for j in range(N_JOINTS) for c in range(6)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + header)
        for i, row in enumerate(seq.frames):
            w.writerow([i] + [f"{v:.6f}" for v in row])
