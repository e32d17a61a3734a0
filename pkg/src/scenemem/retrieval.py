"""Memory bank and frame-retrieval strategies.

The core strategy is greedy maximum coverage over per-candidate confidence
maps: a zero-initialised canvas accumulates the cellwise maximum of the
selected maps, and each step picks the candidate with the largest increase of
the canvas sum. Baselines (temporal, random, FoV overlap, surfel voting and
top-K by mean confidence) share the same result type.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from ._validation import OrderingError, ParameterError, check_int, check_maps
from .geometry import CameraPose
from .world import BACKGROUND, Frame, Scene, cast_rays

logger = logging.getLogger(__name__)

__all__ = [
    "CoverageSelector",
    "MemoryBank",
    "SelectionResult",
    "bank_append",
    "fov_overlap",
    "select_fov",
    "select_greedy_coverage",
    "select_greedy_multi_target",
    "select_random",
    "select_surfel",
    "select_temporal",
    "select_topk_mean",
    "surfel_votes",
]


@dataclass
class MemoryBank:
    """Append-only store of posed frames with stride-controlled insertion.

    ``last`` always tracks the newest appended frame, stored or not.
    """

    stride: int = 4
    frames: list = field(default_factory=list)
    last: Frame | None = None
    forced: list = field(default_factory=list)

    def __post_init__(self):
        self.stride = check_int(self.stride, "stride", minimum=1)

    def append(self, frame: Frame, force_keep: bool = False) -> "MemoryBank":
        if self.last is not None and frame.index <= self.last.index:
            raise OrderingError(f"frame index {frame.index} not after {self.last.index}")
        keep = frame.index % self.stride == 0
        if force_keep and not keep:
            self.forced.append(frame.index)
            keep = True
        if keep:
            self.frames.append(frame)
        self.last = frame
        return self

    @property
    def indices(self) -> list[int]:
        return [f.index for f in self.frames]

    def candidates(self) -> list[Frame]:
        """Stored frames other than the anchor (last) frame."""
        last = None if self.last is None else self.last.index
        return [f for f in self.frames if f.index != last]

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, index: int) -> Frame:
        for f in self.frames:
            if f.index == index:
                return f
        if self.last is not None and self.last.index == index:
            return self.last
        raise KeyError(index)


def bank_append(bank: MemoryBank, frame: Frame, force_keep: bool = False) -> MemoryBank:
    return bank.append(frame, force_keep)


@dataclass
class SelectionResult:
    strategy: str
    chosen: list
    gains: list = field(default_factory=list)
    canvas: np.ndarray | None = None

    @property
    def canvas_sum(self) -> float:
        return float(np.sum(self.canvas)) if self.canvas is not None else 0.0

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "chosen": [int(i) for i in self.chosen],
            "gains": [float(g) for g in self.gains],
            "canvas_sum": self.canvas_sum,
        }


def _finish(strategy, chosen, last_id, include_last, gains=(), canvas=None) -> SelectionResult:
    chosen = [int(i) for i in chosen]
    if include_last and last_id is not None:
        chosen.append(int(last_id))
    return SelectionResult(strategy, chosen, [float(g) for g in gains], canvas)


def _ids(n: int, ids, last_id):
    if ids is None:
        ids = list(range(1, n + 1))
        if last_id is None:
            last_id = n + 1
    ids = [int(i) for i in ids]
    if len(ids) != n:
        raise ParameterError(f"{len(ids)} ids for {n} candidate maps")
    if len(set(ids)) != n:
        raise ParameterError("candidate ids must be distinct")
    return ids, last_id


def _stack_targets(maps_per_target) -> np.ndarray:
    if isinstance(maps_per_target, np.ndarray):
        arr = maps_per_target.astype(np.float64, copy=False)
        if arr.ndim == 3:
            arr = arr[None]
    else:
        per_target = [check_maps(m, f"maps of target {t}") for t, m in enumerate(maps_per_target)]
        if not per_target:
            raise ParameterError("need at least one target")
        if len({m.shape for m in per_target}) != 1:
            raise ParameterError("every target must score the same candidates on the same grid")
        arr = np.stack(per_target)
    if arr.ndim != 4:
        raise ParameterError(f"expected (T, n, gh, gw) maps, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError("confidence maps contain non-finite values")
    return arr


def select_greedy_multi_target(
    maps_per_target, K: int, *, ids=None, last_id=None, include_last: bool = True, strategy: str = "greedy"
) -> SelectionResult:
    """Greedy coverage with one canvas per target, maximising the mean gain.

    ``maps_per_target`` is ``(T, n, gh, gw)`` (or T lists of n maps). Ties go
    to the lowest candidate position. Returns per-step mean gains and the
    final ``(T, gh, gw)`` canvases.
    """
    K = check_int(K, "K")
    if K < 0:
        raise ParameterError("K must be >= 0")
    maps = _stack_targets(maps_per_target)
    T, n = maps.shape[:2]
    ids, last_id = _ids(n, ids, last_id)
    canvas = np.zeros((T,) + maps.shape[2:])
    available = np.ones(n, dtype=bool)
    chosen, gains = [], []
    for _ in range(min(K, n)):
        improved = np.maximum(maps, canvas[:, None]) - canvas[:, None]
        g = improved.sum(axis=(2, 3)).mean(axis=0)
        g = np.where(available, g, -np.inf)
        best = int(np.argmax(g))
        chosen.append(ids[best])
        gains.append(float(g[best]))
        available[best] = False
        canvas = np.maximum(canvas, maps[:, best])
    return _finish(strategy, chosen, last_id, include_last, gains, canvas)


def select_greedy_coverage(maps, K: int, *, ids=None, last_id=None, include_last: bool = True) -> SelectionResult:
    """Single-target greedy maximum coverage.

    Candidates are numbered ``1..n`` by default and the last frame gets id
    ``n + 1``, matching a bank whose final entry is the anchor.
    """
    arr = check_maps(maps)
    if arr.shape[0] == 0:
        return select_greedy_multi_target(np.zeros((1, 0, 1, 1)), K, ids=ids, last_id=last_id, include_last=include_last)
    res = select_greedy_multi_target(arr[None], K, ids=ids, last_id=last_id, include_last=include_last)
    res.canvas = res.canvas[0]
    return res


def select_topk_mean(maps, K: int, *, ids=None, last_id=None, include_last: bool = True) -> SelectionResult:
    """Top-K candidates by spatially averaged confidence (averaged over targets)."""
    K = check_int(K, "K")
    if K < 0:
        raise ParameterError("K must be >= 0")
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        if arr.size == 0:
            arr = np.zeros((1, 0, 1, 1))
        else:
            raise ParameterError(f"expected (n, gh, gw) or (T, n, gh, gw) maps, got {arr.shape}")
    n = arr.shape[1]
    ids, last_id = _ids(n, ids, last_id)
    means = arr.mean(axis=(2, 3)).mean(axis=0)
    order = np.argsort(-means, kind="stable")[: min(K, n)]
    canvas = arr[:, order].max(axis=1, initial=0.0) if n else None
    if canvas is not None and canvas.shape[0] == 1:
        canvas = canvas[0]
    return _finish("topk", [ids[i] for i in order], last_id, include_last, [float(means[i]) for i in order], canvas)


def _bank_ids(bank: MemoryBank):
    cands = bank.candidates()
    last = None if bank.last is None else bank.last.index
    return cands, last


def select_temporal(bank: MemoryBank, K: int, include_last: bool = True) -> SelectionResult:
    K = check_int(K, "K", minimum=0)
    cands, last = _bank_ids(bank)
    recent = sorted((f.index for f in cands), reverse=True)[:K]
    return _finish("temporal", recent, last, include_last)


def select_random(bank: MemoryBank, K: int, seed: int, include_last: bool = True) -> SelectionResult:
    K = check_int(K, "K", minimum=0)
    cands, last = _bank_ids(bank)
    rng = np.random.default_rng(seed)
    k = min(K, len(cands))
    picks = rng.choice(len(cands), size=k, replace=False) if k else []
    return _finish("random", [cands[i].index for i in picks], last, include_last)


def fov_overlap(candidate: CameraPose, target: CameraPose, depths=(1.0, 2.0, 4.0, 8.0), stride: int = 4) -> float:
    """Fraction of target frustum samples that project inside ``candidate``.

    Samples are points at fixed depths along every ``stride``-th target pixel
    ray. Occlusion is deliberately ignored.
    """
    depths = np.asarray(depths, dtype=np.float64)
    if depths.size == 0 or np.any(depths <= 0):
        raise ParameterError("depths must be non-empty and positive")
    fx, fy, cx, cy = target.intrinsics
    v, u = np.mgrid[0 : target.height : stride, 0 : target.width : stride]
    cam = np.stack([(u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, np.ones_like(u, dtype=np.float64)], axis=-1)
    # depth is measured along the optical axis
    pts = target.position + (depths[:, None, None, None] * cam[None]) @ target.rotation.T
    x, y, z = candidate.project(pts.reshape(-1, 3))
    inside = (z > 0) & (x >= 0) & (x < candidate.width) & (y >= 0) & (y < candidate.height)
    return float(np.count_nonzero(inside) / inside.size)


def select_fov(bank: MemoryBank, target, K: int, depths=(1.0, 2.0, 4.0, 8.0), stride: int = 4, include_last: bool = True) -> SelectionResult:
    """Top-K by frustum overlap, averaged over one or more target poses.

    Ties go to the most recent frame.
    """
    K = check_int(K, "K", minimum=0)
    targets = [target] if isinstance(target, CameraPose) else list(target)
    cands, last = _bank_ids(bank)
    scores = [float(np.mean([fov_overlap(f.pose, t, depths, stride) for t in targets])) for f in cands]
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], -cands[i].index))[:K]
    return _finish("fov", [cands[i].index for i in order], last, include_last, [scores[i] for i in order])


def _surfels(frames, pixel_stride: int):
    pts, owners, radii = [], [], []
    for f in frames:
        if getattr(f, "depth", None) is None:
            raise ParameterError(f"frame {f.index} carries no depth map")
        d = f.depth[::pixel_stride, ::pixel_stride]
        dirs = f.pose.pixel_directions(pixel_stride)
        ok = np.isfinite(d)
        pts.append(f.pose.position + d[ok][:, None] * dirs[ok])
        owners.append(np.full(np.count_nonzero(ok), f.index))
        fx, fy, _, _ = f.pose.intrinsics
        radii.append(2.0 * d[ok] / (0.5 * (fx + fy)))
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(pts), np.concatenate(owners), np.concatenate(radii)


def _target_hits(scene: Scene, targets, target_stride: int) -> np.ndarray:
    hits = []
    for t in targets:
        _, ids, points = cast_rays(scene, t.position, t.pixel_directions(target_stride))
        hits.append(points[ids != BACKGROUND])
    return np.concatenate(hits) if hits else np.zeros((0, 3))


def surfel_votes(frames, hits: np.ndarray, pixel_stride: int = 4) -> dict[int, int]:
    """Number of target hit points that lie within reach of each frame's surfels.

    A surfel reaches a point within twice the inter-pixel spacing at its depth;
    each hit point votes at most once per frame.
    """
    pts, owners, radii = _surfels(frames, pixel_stride)
    votes = {f.index: 0 for f in frames}
    if len(pts) == 0 or len(hits) == 0:
        return votes
    tree = cKDTree(pts)
    for q, near in zip(hits, tree.query_ball_point(hits, r=float(radii.max()))):
        if not near:
            continue
        near = np.asarray(near)
        dist = np.linalg.norm(pts[near] - q, axis=-1)
        for owner in np.unique(owners[near[dist <= radii[near]]]):
            votes[int(owner)] += 1
    return votes


def select_surfel(
    bank: MemoryBank,
    scene: Scene,
    target,
    K: int,
    nms_window: int = 8,
    pixel_stride: int = 4,
    target_stride: int = 4,
    include_last: bool = True,
) -> SelectionResult:
    """Surfel voting with temporal non-maximum suppression.

    If suppression exhausts the pool before ``K`` picks, the remaining picks
    fall back to the best suppressed frames so the result size matches the
    other strategies.
    """
    K = check_int(K, "K", minimum=0)
    targets = [target] if isinstance(target, CameraPose) else list(target)
    cands, last = _bank_ids(bank)
    votes = surfel_votes(cands, _target_hits(scene, targets, target_stride), pixel_stride)
    remaining = sorted(votes, key=lambda i: (-votes[i], i))
    suppressed: set[int] = set()
    chosen, gains = [], []
    for _ in range(min(K, len(cands))):
        pool = [i for i in remaining if i not in suppressed] or remaining
        pick = pool[0]
        chosen.append(pick)
        gains.append(float(votes[pick]))
        remaining.remove(pick)
        suppressed.update(i for i in votes if abs(i - pick) <= nms_window)
    return _finish("surfel", chosen, last, include_last, gains)


class CoverageSelector(BaseEstimator):
    """Estimator wrapper around greedy / top-K selection over confidence maps.

    ``fit(maps)`` accepts ``(n, gh, gw)`` or ``(T, n, gh, gw)`` maps and stores
    ``chosen_``, ``gains_`` and ``canvas_``.
    """

    def __init__(self, k: int = 3, mode: str = "greedy", include_last: bool = True):
        self.k = k
        self.mode = mode
        self.include_last = include_last

    def fit(self, maps, y=None, ids=None, last_id=None):
        if self.mode == "greedy":
            arr = np.asarray(maps, dtype=np.float64)
            if arr.ndim == 3:
                res = select_greedy_coverage(arr, self.k, ids=ids, last_id=last_id, include_last=self.include_last)
            else:
                res = select_greedy_multi_target(arr, self.k, ids=ids, last_id=last_id, include_last=self.include_last)
        elif self.mode == "topk":
            res = select_topk_mean(maps, self.k, ids=ids, last_id=last_id, include_last=self.include_last)
        else:
            raise ParameterError(f"unknown mode {self.mode!r}")
        self.result_ = res
        self.chosen_ = res.chosen
        self.gains_ = res.gains
        self.canvas_ = res.canvas
        return self
