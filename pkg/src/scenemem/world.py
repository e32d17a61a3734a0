"""Procedural ray-cast scenes: ground-truth colour, depth and visibility.

Scenes are small (< 100 primitives), so every query is a linear scan over
primitives vectorised across rays.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigError, ParameterError, check_int
from .geometry import CameraPose, Ray

__all__ = [
    "BACKGROUND",
    "DEPTH_RTOL",
    "EPS_RAY",
    "Box",
    "Frame",
    "Hit",
    "LAYOUTS",
    "Plane",
    "Scene",
    "Texture",
    "build_scene",
    "cast_ray",
    "cast_rays",
    "patch_visibility",
    "render",
    "visibility_fraction",
    "visible_from",
]

EPS_RAY = 1e-6
DEPTH_RTOL = 1e-4
BACKGROUND = -1


@dataclass(frozen=True)
class Texture:
    """Checker or stripe pattern keyed on world position."""

    base_color: tuple[float, float, float]
    cell: float
    kind: str = "checker"
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def shade(self, points: np.ndarray) -> np.ndarray:
        q = (points + np.asarray(self.offset)) / self.cell
        if self.kind == "checker":
            fine = np.floor(q).sum(axis=-1)
        elif self.kind == "stripe":
            fine = np.floor(q @ np.asarray(self.axis))
        else:
            raise ConfigError(f"unknown texture kind {self.kind!r}")
        coarse = np.floor(q / 3.7).sum(axis=-1)
        lum = (0.45 + 0.55 * (fine % 2 == 0)) * (0.8 + 0.2 * (coarse % 2 == 0))
        return np.clip(lum[..., None] * np.asarray(self.base_color), 0.0, 1.0)


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    texture: Texture

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ConfigError("box half-extents must be positive")

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        h = np.asarray(self.half_extents)
        lo = c - h - origins
        hi = c + h - origins
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = lo * inv
            t2 = hi * inv
        parallel = dirs == 0
        inside = (lo <= 0) & (hi >= 0)
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        tnear = tmin.max(axis=-1)
        tfar = tmax.min(axis=-1)
        hit = tnear <= tfar
        t = np.where(tnear > EPS_RAY, tnear, tfar)
        return np.where(hit & (t > EPS_RAY), t, np.inf)


@dataclass(frozen=True)
class Plane:
    """Finite parallelogram ``corner + a*edge1 + b*edge2`` with ``a, b`` in [0, 1]."""

    corner: tuple[float, float, float]
    edge1: tuple[float, float, float]
    edge2: tuple[float, float, float]
    texture: Texture

    def __post_init__(self):
        if np.linalg.norm(np.cross(self.edge1, self.edge2)) <= 1e-12:
            raise ConfigError("plane edges must be linearly independent")

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c = np.asarray(self.corner)
        e1 = np.asarray(self.edge1)
        e2 = np.asarray(self.edge2)
        n = np.cross(e1, e2)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - origins) @ n) / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        t = np.where(np.isfinite(t), t, np.inf)
        rel = origins + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs - c
        g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        ab = np.stack([rel @ e1, rel @ e2], axis=-1) @ np.linalg.inv(g).T
        ok = np.all((ab >= 0.0) & (ab <= 1.0), axis=-1) & (t > EPS_RAY)
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Hit:
    depth: float
    point: np.ndarray
    color: np.ndarray
    primitive_id: int

    @property
    def is_background(self) -> bool:
        return self.primitive_id == BACKGROUND


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable collection of primitives plus a direction-keyed background."""

    primitives: tuple
    background_offset: np.ndarray
    background_gain: np.ndarray
    seed: int = 0
    layout: str = "custom"
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    config: dict = field(default_factory=dict)

    def background(self, dirs: np.ndarray) -> np.ndarray:
        return np.clip(self.background_offset + dirs @ self.background_gain.T, 0.0, 1.0)

    def shade(self, points: np.ndarray, prim_ids: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        out = np.empty(points.shape[:-1] + (3,))
        bg = prim_ids == BACKGROUND
        out[bg] = self.background(dirs[bg])
        for i, prim in enumerate(self.primitives):
            sel = prim_ids == i
            if np.any(sel):
                out[sel] = prim.texture.shade(points[sel])
        return out

    def inside_solid(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=np.float64)
        for prim in self.primitives:
            if isinstance(prim, Box):
                if np.all(np.abs(p - prim.center) <= np.asarray(prim.half_extents) + margin):
                    return True
        return False

    def digest(self) -> str:
        """Stable hash of the scene description."""
        payload = json.dumps(
            {"config": self.config, "n": len(self.primitives), "prims": [repr(p) for p in self.primitives]},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(eq=False)
class Frame:
    """Posed image with per-pixel depth (``inf`` where the ray escapes)."""

    image: np.ndarray
    depth: np.ndarray
    pose: CameraPose
    index: int = 0
    prim_ids: np.ndarray | None = None

    def __post_init__(self):
        h, w = self.pose.shape
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.image.shape != (h, w, 3) or self.depth.shape != (h, w):
            raise ParameterError(
                f"frame arrays {self.image.shape}/{self.depth.shape} do not match pose {h}x{w}"
            )
        if self.image.min(initial=0.0) < 0.0 or self.image.max(initial=0.0) > 1.0:
            raise ParameterError("frame colours must lie in [0, 1]")
        if self.prim_ids is not None and np.shape(self.prim_ids) != (h, w):
            raise ParameterError("prim_ids must match the frame resolution")

    def points(self) -> np.ndarray:
        """World-space surface points per pixel (``inf`` rows for background)."""
        dirs = self.pose.pixel_directions()
        with np.errstate(invalid="ignore"):
            return self.pose.position + self.depth[..., None] * dirs


def cast_rays(scene: Scene, origins, dirs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest hits for a batch of rays.

    Returns ``(depth, prim_id, points)``; misses carry ``inf`` depth, the
    ``BACKGROUND`` id and ``inf`` points. Ties go to the lowest primitive index.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    depth = np.full(dirs.shape[:-1], np.inf)
    ids = np.full(dirs.shape[:-1], BACKGROUND, dtype=np.int64)
    for i, prim in enumerate(scene.primitives):
        t = prim.intersect(origins, dirs)
        closer = t < depth
        depth = np.where(closer, t, depth)
        ids = np.where(closer, i, ids)
    with np.errstate(invalid="ignore"):
        points = origins + depth[..., None] * dirs
    return depth, ids, points


def cast_ray(scene: Scene, ray: Ray) -> Hit:
    depth, ids, points = cast_rays(scene, ray.origin[None], ray.direction[None])
    color = scene.shade(points, ids, ray.direction[None])[0]
    return Hit(float(depth[0]), points[0], color, int(ids[0]))


def render(scene: Scene, pose: CameraPose, index: int = 0) -> Frame:
    dirs = pose.pixel_directions()
    depth, ids, points = cast_rays(scene, pose.position, dirs)
    image = scene.shade(points, ids, dirs)
    return Frame(image, depth, pose, index, ids)


def visible_from(scene: Scene, points: np.ndarray, source: CameraPose):
    """Occlusion-aware visibility of world points from ``source``.

    A point is visible when it projects inside the source image, lies in front
    of the camera, and the ray cast from the source centre towards it first
    hits geometry at the point's distance (relative tolerance ``DEPTH_RTOL``).

    Returns ``(visible, x, y, residual)`` where ``x, y`` are continuous source
    pixel coordinates and ``residual`` is the relative depth-test mismatch.
    """
    points = np.asarray(points, dtype=np.float64)
    finite = np.all(np.isfinite(points), axis=-1)
    safe = np.where(finite[..., None], points, 0.0)
    x, y, z = source.project(safe)
    inside = finite & (z > 0) & (x >= 0) & (x < source.width) & (y >= 0) & (y < source.height)
    visible = np.zeros(points.shape[:-1], dtype=bool)
    residual = np.full(points.shape[:-1], np.inf)
    if np.any(inside):
        rel = safe[inside] - source.position
        dist = np.linalg.norm(rel, axis=-1)
        hit_depth, _, _ = cast_rays(scene, source.position, rel / dist[:, None])
        res = np.abs(hit_depth - dist) / dist
        residual[inside] = res
        visible[inside] = res <= DEPTH_RTOL
    return visible, x, y, residual


def patch_visibility(visible: np.ndarray, geometry: np.ndarray, p: int) -> np.ndarray:
    """Per-patch fraction of geometry pixels that are visible (0 if none)."""
    h, w = visible.shape
    gh, gw = h // p, w // p
    vis = visible.reshape(gh, p, gw, p).sum(axis=(1, 3)).astype(np.float64)
    geo = geometry.reshape(gh, p, gw, p).sum(axis=(1, 3)).astype(np.float64)
    return np.divide(vis, geo, out=np.zeros_like(vis), where=geo > 0)


def visibility_grid(scene: Scene, source: CameraPose, target: CameraPose, p: int) -> np.ndarray:
    """Visibility fraction for every patch of the target's patch grid."""
    from ._validation import check_divisible

    check_divisible(target.height, target.width, p)
    depth, ids, points = cast_rays(scene, target.position, target.pixel_directions())
    geometry = ids != BACKGROUND
    visible, *_ = visible_from(scene, points, source)
    return patch_visibility(visible & geometry, geometry, p)


def visibility_fraction(scene: Scene, source: CameraPose, target: CameraPose, patch, p: int) -> float:
    """Fraction of a target patch's geometry pixels that ``source`` sees."""
    p = check_int(p, "p", minimum=1)
    pu, pv = patch
    gh, gw = target.height // p, target.width // p
    if not (0 <= pu < gw and 0 <= pv < gh):
        raise ParameterError(f"patch {patch} outside {gw}x{gh} patch grid")
    v, u = np.mgrid[pv * p : (pv + 1) * p, pu * p : (pu + 1) * p]
    dirs = target.camera_directions(u, v)
    _, ids, points = cast_rays(scene, target.position, dirs)
    geometry = ids != BACKGROUND
    if not np.any(geometry):
        return 0.0
    visible, *_ = visible_from(scene, points, source)
    return float(np.count_nonzero(visible & geometry) / np.count_nonzero(geometry))


# --------------------------------------------------------------------------
# scene construction

def _rng_texture(rng: np.random.Generator, cell_range=(0.25, 0.6)) -> Texture:
    kind = "checker" if rng.random() < 0.6 else "stripe"
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Texture(
        base_color=tuple(float(c) for c in rng.uniform(0.25, 1.0, size=3)),
        cell=float(rng.uniform(*cell_range)),
        kind=kind,
        offset=tuple(float(c) for c in rng.uniform(0.0, 1.0, size=3)),
        axis=tuple(float(c) for c in axis),
    )


def _room_shell(rng, hx: float, hz: float, y0: float, y1: float, walls=("floor", "ceiling", "n", "s", "e", "w")):
    """Inward-facing planes bounding ``[-hx, hx] x [y0, y1] x [-hz, hz]``."""
    h = y1 - y0
    specs = {
        "floor": ((-hx, y0, -hz), (2 * hx, 0, 0), (0, 0, 2 * hz)),
        "ceiling": ((-hx, y1, -hz), (2 * hx, 0, 0), (0, 0, 2 * hz)),
        "n": ((-hx, y0, hz), (2 * hx, 0, 0), (0, h, 0)),
        "s": ((-hx, y0, -hz), (2 * hx, 0, 0), (0, h, 0)),
        "e": ((hx, y0, -hz), (0, 0, 2 * hz), (0, h, 0)),
        "w": ((-hx, y0, -hz), (0, 0, 2 * hz), (0, h, 0)),
    }
    return [Plane(*specs[name], texture=_rng_texture(rng)) for name in walls]


def _occluded_room(rng, params):
    hx = float(params.get("half_width", 5.0))
    hz = float(params.get("half_depth", 5.0))
    y0 = float(params.get("floor", -1.5))
    y1 = float(params.get("ceiling", 1.5))
    occ_w = float(params.get("occluder_half_width", 2.5))
    occ_t = float(params.get("occluder_half_thickness", 0.15))
    n_boxes = int(params.get("n_boxes", 3))
    prims = _room_shell(rng, hx, hz, y0, y1)
    # central wall; spans floor to ceiling so nothing is visible over it
    prims.append(Box((0.0, 0.5 * (y0 + y1), 0.0), (occ_w, 0.5 * (y1 - y0), occ_t), _rng_texture(rng)))
    for _ in range(n_boxes):
        he = rng.uniform(0.3, 0.6, size=3)
        side = rng.choice([-1.0, 1.0])
        cx = side * rng.uniform(hx - 1.2, hx - he[0] - 0.05)
        cz = rng.uniform(-hz + 1.0, hz - 1.0)
        prims.append(Box((float(cx), float(y0 + he[1]), float(cz)), tuple(float(v) for v in he), _rng_texture(rng)))
    bounds = ((-hx + 0.6, -0.3, -hz + 0.6), (hx - 0.6, 0.3, hz - 0.6))
    return prims, bounds


def _corridor(rng, params):
    hw = float(params.get("half_width", 1.5))
    length = float(params.get("length", 16.0))
    y0 = float(params.get("floor", -1.5))
    y1 = float(params.get("ceiling", 1.5))
    n_pillars = int(params.get("n_pillars", 4))
    hz = length / 2
    walls = ["e", "w"] + (["floor"] if params.get("with_floor", True) else [])
    prims = _room_shell(rng, hw, hz, y0, y1, walls=walls)
    for k in range(n_pillars):
        side = -1.0 if k % 2 == 0 else 1.0
        z = -hz + (k + 1) * length / (n_pillars + 1) + rng.uniform(-0.5, 0.5)
        prims.append(
            Box((side * (hw - 0.25), 0.5 * (y0 + y1), float(z)), (0.25, 0.5 * (y1 - y0), 0.25), _rng_texture(rng))
        )
    bounds = ((-hw + 0.6, -0.3, -hz + 1.0), (hw - 0.6, 0.3, hz - 1.0))
    return prims, bounds


def _open_field(rng, params):
    extent = float(params.get("extent", 8.0))
    n_boxes = int(params.get("n_boxes", 12))
    y0 = float(params.get("floor", -1.5))
    prims = [Plane((-3 * extent, y0, -3 * extent), (6 * extent, 0, 0), (0, 0, 6 * extent), _rng_texture(rng))]
    for _ in range(n_boxes):
        he = rng.uniform(0.3, 1.2, size=3)
        cx, cz = rng.uniform(-extent, extent, size=2)
        prims.append(Box((float(cx), float(y0 + he[1]), float(cz)), tuple(float(v) for v in he), _rng_texture(rng)))
    bounds = ((-extent - 1.0, -0.5, -extent - 1.0), (extent + 1.0, 1.0, extent + 1.0))
    return prims, bounds


def _empty(rng, params):
    return [], ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


LAYOUTS = {
    "occluded-room": _occluded_room,
    "corridor": _corridor,
    "open-field": _open_field,
    "empty": _empty,
}


def build_scene(config) -> Scene:
    """Deterministically build a scene from ``{layout, seed, params}``."""
    if isinstance(config, str):
        config = {"layout": config}
    if not isinstance(config, dict):
        raise ConfigError("scene config must be a mapping")
    layout = config.get("layout")
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}; valid: {sorted(LAYOUTS)}")
    seed = config.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("scene seed must be an integer")
    params = config.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("scene params must be a mapping")
    rng = np.random.default_rng([seed, 7919])
    bg_offset = rng.uniform(0.35, 0.65, size=3)
    bg_gain = rng.normal(scale=0.25, size=(3, 3))
    try:
        prims, bounds = LAYOUTS[layout](rng, params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad params for layout {layout!r}: {exc}") from exc
    clean = {"layout": layout, "seed": seed, "params": copy.deepcopy(params)}
    return Scene(tuple(prims), bg_offset, bg_gain, seed, layout, bounds, clean)
