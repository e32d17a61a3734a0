"""Pinhole cameras, pixel rays, Plücker ray maps and trajectory utilities.

Conventions used everywhere in the package: right-handed world frame with
``+y`` up; camera frame is OpenCV-like (``+x`` right, ``+y`` down, ``+z``
forward). ``CameraPose.rotation`` maps camera-frame vectors to world frame and
``CameraPose.position`` is the camera centre in world coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from ._validation import (
    DegenerateScaleError,
    ParameterError,
    check_int,
    check_rotation,
)

__all__ = [
    "CameraPose",
    "Ray",
    "align_trajectory",
    "camera_errors",
    "cycle_trajectory",
    "default_intrinsics",
    "interpolate_trajectory",
    "load_trajectory",
    "look_at",
    "pixel_ray",
    "plucker_map",
    "rotation_error",
    "save_trajectory",
    "trajectory_from_json",
    "trajectory_to_json",
    "translation_error",
]


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world rigid transform plus pinhole intrinsics."""

    rotation: np.ndarray
    position: np.ndarray
    intrinsics: tuple[float, float, float, float]
    width: int
    height: int

    def __post_init__(self):
        rot = check_rotation(self.rotation, "CameraPose.rotation")
        pos = np.asarray(self.position, dtype=np.float64).reshape(-1)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ParameterError("CameraPose.position must be a finite 3-vector")
        width = check_int(self.width, "width", minimum=1)
        height = check_int(self.height, "height", minimum=1)
        fx, fy, cx, cy = (float(v) for v in self.intrinsics)
        if fx <= 0 or fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if not (0 <= cx < width and 0 <= cy < height):
            raise ParameterError("principal point must lie inside the image")
        rot = rot.copy()
        pos = pos.copy()
        rot.flags.writeable = False
        pos.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "intrinsics", (fx, fy, cx, cy))
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def same_as(self, other: "CameraPose", atol: float = 0.0) -> bool:
        """Pose equality; ``atol=0`` demands bit-identical extrinsics."""
        if (self.width, self.height, self.intrinsics) != (other.width, other.height, other.intrinsics):
            return False
        if atol == 0.0:
            return bool(
                np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.position, other.position)
            )
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.position, other.position, atol=atol, rtol=0)
        )

    def with_extrinsics(self, rotation, position) -> "CameraPose":
        return CameraPose(rotation, position, self.intrinsics, self.width, self.height)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Express world points ``(..., 3)`` in the camera frame."""
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Continuous pixel coordinates ``(x, y)`` and camera depth ``z``.

        Pixel ``u`` spans ``[u, u + 1)`` so ``floor(x)`` is the containing pixel.
        Points with ``z <= 0`` get NaN coordinates.
        """
        cam = self.world_to_camera(points)
        fx, fy, cx, cy = self.intrinsics
        z = cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(z > 0, z, np.nan)
            x = fx * cam[..., 0] / safe + cx
            y = fy * cam[..., 1] / safe + cy
        return x, y, z

    def camera_directions(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Unit world-frame directions through the centre ``(u + 0.5, v + 0.5)`` of pixel ``(u, v)``."""
        fx, fy, cx, cy = self.intrinsics
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        cam = np.stack([(u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, np.ones_like(u)], axis=-1)
        world = cam @ self.rotation.T
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def pixel_directions(self, stride: int = 1) -> np.ndarray:
        """Directions through every ``stride``-th pixel centre, shape ``(h, w, 3)``."""
        v, u = np.mgrid[0 : self.height : stride, 0 : self.width : stride]
        return self.camera_directions(u, v)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "position": [float(x) for x in self.position],
            "intrinsics": [float(x) for x in self.intrinsics],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        try:
            rot = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
            return cls(rot, d["position"], tuple(d["intrinsics"]), d["width"], d["height"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"malformed pose record: {exc}") from exc


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if not np.isfinite(n) or n == 0:
            raise ParameterError("ray direction must be non-zero")
        if abs(n - 1.0) > 1e-9:
            d = d / n
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def default_intrinsics(width: int, height: int, fov_deg: float = 70.0) -> tuple[float, float, float, float]:
    """Square-pixel intrinsics with horizontal field of view ``fov_deg``."""
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    return (float(f), float(f), width / 2.0, height / 2.0)


def look_at(
    eye,
    target,
    *,
    width: int = 64,
    height: int = 64,
    fov_deg: float = 70.0,
    intrinsics=None,
    up=(0.0, 1.0, 0.0),
) -> CameraPose:
    """Camera at ``eye`` looking towards ``target`` with world ``up`` kept upright."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise ParameterError("eye and target coincide")
    fwd = fwd / norm
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-12:
        raise ParameterError("viewing direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)
    if intrinsics is None:
        intrinsics = default_intrinsics(width, height, fov_deg)
    return CameraPose(rot, eye, tuple(intrinsics), width, height)


def pixel_ray(pose: CameraPose, u: float, v: float) -> Ray:
    if not (0 <= u < pose.width and 0 <= v < pose.height):
        raise ParameterError(f"pixel ({u}, {v}) outside {pose.width}x{pose.height} image")
    return Ray(pose.position.copy(), pose.camera_directions(np.float64(u), np.float64(v)))


def plucker_map(pose: CameraPose) -> np.ndarray:
    """Per-pixel Plücker coordinates ``(d, o x d)`` as an ``(H, W, 6)`` array."""
    d = pose.pixel_directions()
    m = np.cross(np.broadcast_to(pose.position, d.shape), d)
    return np.concatenate([d, m], axis=-1)


def _check_trajectory(traj, name="trajectory", min_len=1) -> list[CameraPose]:
    traj = list(traj)
    if len(traj) < min_len:
        raise ParameterError(f"{name} needs at least {min_len} poses, got {len(traj)}")
    ref = traj[0]
    for p in traj[1:]:
        if (p.width, p.height, p.intrinsics) != (ref.width, ref.height, ref.intrinsics):
            raise ParameterError(f"{name} mixes intrinsics or resolutions")
    return traj


def interpolate_trajectory(keyframes, n: int) -> list[CameraPose]:
    """Resample keyframes to ``n`` poses: linear positions, slerped rotations.

    Keyframes sit at uniformly spaced parameter values, so with ``n`` chosen as
    ``(len(keyframes) - 1) * m + 1`` every keyframe is hit exactly.
    """
    n = check_int(n, "n")
    if n < 2:
        raise ParameterError("n must be >= 2")
    keys = _check_trajectory(keyframes, "keyframes", min_len=2)
    if n < len(keys):
        raise ParameterError("n must be >= number of keyframes")
    rots = Rotation.from_matrix(np.stack([k.rotation for k in keys]))
    slerp = Slerp(np.arange(len(keys), dtype=np.float64), rots)
    positions = np.stack([k.position for k in keys])
    params = np.linspace(0.0, len(keys) - 1.0, n)
    out = []
    for t in params:
        if t == np.floor(t):
            out.append(keys[int(t)])
            continue
        i = int(np.floor(t))
        frac = t - i
        pos = (1.0 - frac) * positions[i] + frac * positions[i + 1]
        rot = slerp([t]).as_matrix()[0]
        # scipy output is orthonormal to ~1e-16; re-project to be safe
        uu, _, vt = np.linalg.svd(rot)
        rot = uu @ vt
        out.append(keys[0].with_extrinsics(rot, pos))
    return out


def cycle_trajectory(traj) -> list[CameraPose]:
    traj = _check_trajectory(traj)
    return traj + traj[::-1]


def align_trajectory(gen, gt) -> tuple[list[CameraPose], list[CameraPose]]:
    """Re-express both trajectories relative to their first frame and unit scale.

    Each trajectory's translations are divided by its own largest
    first-frame-relative translation norm.
    """
    gen = _check_trajectory(gen, "gen", min_len=2)
    gt = _check_trajectory(gt, "gt", min_len=2)
    if len(gen) != len(gt):
        raise ParameterError(f"trajectory lengths differ: {len(gen)} vs {len(gt)}")
    return _align_one(gen, "gen"), _align_one(gt, "gt")


def _align_one(traj: list[CameraPose], name: str) -> list[CameraPose]:
    r0 = traj[0].rotation
    o0 = traj[0].position
    rel_t = np.stack([r0.T @ (p.position - o0) for p in traj])
    scale = np.linalg.norm(rel_t, axis=1).max()
    if not scale > 0:
        raise DegenerateScaleError(f"{name} trajectory has no translation to normalise by")
    out = []
    for p, t in zip(traj, rel_t):
        rot = np.eye(3) if p is traj[0] else r0.T @ p.rotation
        out.append(p.with_extrinsics(rot, t / scale))
    return out


def rotation_error(r_gen, r_gt) -> float:
    """Geodesic angle in degrees between two rotations."""
    r_gen = check_rotation(r_gen, "r_gen", atol=1e-6)
    r_gt = check_rotation(r_gt, "r_gt", atol=1e-6)
    c = 0.5 * (np.trace(r_gen @ r_gt.T) - 1.0)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def translation_error(t_gen, t_gt) -> float:
    diff = np.asarray(t_gt, dtype=np.float64) - np.asarray(t_gen, dtype=np.float64)
    return float(np.linalg.norm(diff))


def camera_errors(gen, gt) -> dict:
    """Per-frame and mean rotation/translation errors after alignment."""
    a_gen, a_gt = align_trajectory(gen, gt)
    r = [rotation_error(g.rotation, t.rotation) for g, t in zip(a_gen, a_gt)]
    t = [translation_error(g.position, q.position) for g, q in zip(a_gen, a_gt)]
    return {
        "rotation_error_deg": r,
        "translation_error": t,
        "rotation_error_mean": float(np.mean(r)),
        "translation_error_mean": float(np.mean(t)),
    }


def trajectory_to_json(traj) -> str:
    return json.dumps([p.to_dict() for p in _check_trajectory(traj)])


def trajectory_from_json(text: str) -> list[CameraPose]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise ParameterError("trajectory JSON must be an array of poses")
    return _check_trajectory([CameraPose.from_dict(d) for d in data])


def save_trajectory(traj, path) -> None:
    Path(path).write_text(trajectory_to_json(traj))


def load_trajectory(path) -> list[CameraPose]:
    return trajectory_from_json(Path(path).read_text())
