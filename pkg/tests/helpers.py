"""Shared builders for test inputs."""

from __future__ import annotations

import numpy as np

from tokendance.motion import N_JOINTS, axis_angle_to_matrix, matrix_to_rot6d


def random_rotations(rng: np.random.Generator, shape, max_angle: float = np.pi) -> np.ndarray:
    axes = rng.standard_normal(tuple(shape) + (3,))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    return axis_angle_to_matrix(axes, rng.uniform(-max_angle, max_angle, shape))


def random_poses(rng: np.random.Generator, n: int, max_angle: float = 0.8) -> np.ndarray:
    """(n, 147) pose frames with bounded joint angles and small root offsets."""
    rot = random_rotations(rng, (n, N_JOINTS), max_angle)
    root = rng.uniform(-0.3, 0.3, (n, 3))
    return np.concatenate([root, matrix_to_rot6d(rot).reshape(n, -1)], axis=-1)


# criterion id -> list of (ok, detail); filled by the acceptance suite and
# printed as one line per criterion at the end of the session
ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} [{criterion}] {detail}")


def acceptance_lines() -> list[str]:
    lines = []
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0])):
        parts = ACCEPTANCE[crit]
        ok = all(p for p, _ in parts)
        lines.append(f"{'PASS' if ok else 'FAIL'} [{crit}] " + "; ".join(d for _, d in parts))
    return lines
