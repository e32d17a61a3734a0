"""Clip-by-clip autoregressive experiment driver.

Each clip: retrieve source frames from the memory bank, reconstruct every
clip frame by exact reprojection, fill what no source saw with a clip-level
"generated" guess, and insert the generated frames back into the bank. The
generated guess is the ground-truth colour shifted by a random per-clip tint,
so content that has to be regenerated on a revisit disagrees with the first
visit unless retrieval brings back the frame that holds it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._validation import ConfigError, ParameterError
from .geometry import (
    CameraPose,
    camera_errors,
    cycle_trajectory,
    interpolate_trajectory,
    look_at,
    plucker_map,
)
from .metrics import RevisitReport, coverage_stats, revisit_consistency
from .retrieval import (
    MemoryBank,
    SelectionResult,
    select_fov,
    select_greedy_multi_target,
    select_random,
    select_surfel,
    select_temporal,
    select_topk_mean,
)
from .scorer import (
    PatchFeaturizer,
    Projection,
    ScoringCNN,
    TrainingSample,
    assemble_features,
    load_checkpoint,
)
from .warp import WarpSamples, compose_reconstruction, reproject_samples
from .world import BACKGROUND, Frame, Scene, build_scene, cast_rays, patch_visibility, render

logger = logging.getLogger(__name__)

__all__ = [
    "GeometryCache",
    "RunResult",
    "STRATEGIES",
    "ScenarioConfig",
    "ablate_strategies",
    "frustum_visibility",
    "make_training_corpus",
    "run_scenario",
    "samples_from_manifest",
]

STRATEGIES = ("greedy", "topk", "fov", "surfel", "temporal", "random")
MAP_STRATEGIES = ("greedy", "topk")


@dataclass
class ScenarioConfig:
    scene: dict = field(default_factory=lambda: {"layout": "occluded-room", "seed": 0})
    keyframes: list = field(default_factory=list)
    n_frames: int = 33
    context_frames: int = 1
    protocol: str = "cycle"
    clip_length: int = 16
    queries_per_clip: int = 8
    K: int = 3
    bank_stride: int = 4
    strategy: str = "greedy"
    scorer: str = "oracle"
    checkpoint: str | None = None
    seed: int = 0
    patch_size: int = 8
    width: int = 64
    height: int = 64
    fov_deg: float = 70.0
    revisit_stride: int = 1
    nms_window: int = 8
    fov_depths: tuple = (1.0, 2.0, 4.0, 8.0)
    hallucination: float = 0.2
    cheat_mode: bool = False
    perturb_rot_deg: float = 0.0
    perturb_trans: float = 0.0
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.scene, dict):
            raise ConfigError("scene must be a mapping")
        if self.protocol not in ("cycle", "one-way"):
            raise ConfigError(f"protocol must be 'cycle' or 'one-way', got {self.protocol!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}")
        if self.scorer not in ("oracle", "learned"):
            raise ConfigError(f"scorer must be 'oracle' or 'learned', got {self.scorer!r}")
        if self.scorer == "learned" and not self.checkpoint:
            raise ConfigError("learned scorer needs a checkpoint path")
        for name, lo in (("clip_length", 2), ("queries_per_clip", 1), ("K", 0), ("bank_stride", 1),
                         ("patch_size", 1), ("width", 1), ("height", 1), ("revisit_stride", 1),
                         ("n_frames", 2), ("workers", 1), ("nms_window", 0), ("context_frames", 1)):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int) or val < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {val!r}")
        if self.queries_per_clip > self.clip_length:
            raise ConfigError("queries_per_clip must not exceed clip_length")
        if self.width % self.patch_size or self.height % self.patch_size:
            raise ConfigError("resolution must be divisible by patch_size")
        if len(self.keyframes) < 2:
            raise ConfigError("need at least two trajectory keyframes")
        if self.n_frames < len(self.keyframes):
            raise ConfigError("n_frames must be >= number of keyframes")
        if self.context_frames >= self.n_frames:
            raise ConfigError("context_frames must leave at least one frame to generate")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("scenario must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {unknown}")
        d = dict(d)
        if "fov_depths" in d:
            d["fov_depths"] = tuple(float(x) for x in d["fov_depths"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fov_depths"] = list(self.fov_depths)
        return d

    def replace(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig.from_dict(d)

    def result_dict(self) -> dict:
        """Settings that can change results; worker count is excluded."""
        d = self.to_dict()
        d.pop("workers")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.result_dict(), sort_keys=True).encode()).hexdigest()[:16]


def keyframe_poses(cfg: ScenarioConfig) -> list[CameraPose]:
    poses = []
    for k, kf in enumerate(cfg.keyframes):
        if not isinstance(kf, dict):
            raise ConfigError(f"keyframe {k} must be an object")
        if "look_at" in kf:
            try:
                poses.append(look_at(kf["position"], kf["look_at"], width=cfg.width, height=cfg.height, fov_deg=cfg.fov_deg))
            except (KeyError, ParameterError, ValueError, TypeError) as exc:
                raise ConfigError(f"keyframe {k}: {exc}") from exc
        else:
            try:
                poses.append(CameraPose.from_dict(kf))
            except ParameterError as exc:
                raise ConfigError(f"keyframe {k}: {exc}") from exc
    return poses


def build_trajectory(cfg: ScenarioConfig) -> list[CameraPose]:
    forward = interpolate_trajectory(keyframe_poses(cfg), cfg.n_frames)
    return cycle_trajectory(forward) if cfg.protocol == "cycle" else forward


class GeometryCache:
    """Memoised geometry for one (scene, trajectory): renders, hits, warp samples.

    Everything cached depends only on poses and scene geometry, never on
    generated colours, so one cache may be shared across strategy runs.
    Mirrored cycle indices map to the same entries.
    """

    def __init__(self, scene: Scene, trajectory: list[CameraPose], patch_size: int, mirrored: bool = False):
        self.scene = scene
        self.trajectory = trajectory
        self.p = patch_size
        self.mirrored = mirrored
        self._gt: dict[int, Frame] = {}
        self._hits: dict[int, tuple] = {}
        self._samples: dict[tuple[int, int], WarpSamples] = {}
        self._vis: dict[tuple[int, int], np.ndarray] = {}

    def key(self, i: int) -> int:
        n = len(self.trajectory)
        return min(i, n - 1 - i) if self.mirrored else i

    def gt(self, i: int) -> Frame:
        k = self.key(i)
        if k not in self._gt:
            self._gt[k] = render(self.scene, self.trajectory[k], k)
        f = self._gt[k]
        return f if f.index == i else Frame(f.image, f.depth, self.trajectory[i], i, f.prim_ids)

    def hits(self, i: int):
        """``(ids, points, background)`` for every pixel of frame ``i``."""
        k = self.key(i)
        if k not in self._hits:
            pose = self.trajectory[k]
            dirs = pose.pixel_directions()
            _, ids, points = cast_rays(self.scene, pose.position, dirs)
            self._hits[k] = (ids, points, self.scene.background(dirs))
        return self._hits[k]

    def samples(self, target: int, source: int) -> WarpSamples:
        key = (self.key(target), self.key(source))
        if key not in self._samples:
            _, points, _ = self.hits(target)
            self._samples[key] = reproject_samples(self.scene, points, self.gt(source))
        return self._samples[key]

    def visibility(self, target: int, source: int) -> np.ndarray:
        key = (self.key(target), self.key(source))
        if key not in self._vis:
            ids, _, _ = self.hits(target)
            geometry = ids != BACKGROUND
            smp = self.samples(target, source)
            self._vis[key] = patch_visibility(smp.visible & geometry, geometry, self.p)
        return self._vis[key]

    def prefetch(self, pairs, workers: int = 1) -> None:
        todo = sorted({(self.key(t), self.key(s)) for t, s in pairs} - set(self._samples))
        if not todo:
            return
        for t, s in todo:
            self.hits(t)
            self.gt(s)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(lambda ts: self._compute(*ts), todo))
        else:
            results = [self._compute(t, s) for t, s in todo]
        for ts, smp in zip(todo, results):
            self._samples[ts] = smp

    def _compute(self, t: int, s: int) -> WarpSamples:
        _, points, _ = self._hits[t]
        return reproject_samples(self.scene, points, self._gt[s])


@dataclass
class RunResult:
    strategy: str
    scene_hash: str
    clips: list
    unknown_fraction: list
    revisit: RevisitReport | None
    camera: dict
    bank_indices: list
    forced_keeps: list
    timings: dict
    cheat_mode: bool = False
    frames: list | None = None
    reconstructions: list | None = None

    def summary(self) -> dict:
        clip_unknown = [c["unknown_fraction_mean"] for c in self.clips]
        return {
            "strategy": self.strategy,
            "psnr_mean": self.revisit.psnr_mean if self.revisit else float("nan"),
            "ssim_mean": self.revisit.ssim_mean if self.revisit else float("nan"),
            "unknown_frac_mean": float(np.mean(clip_unknown)) if clip_unknown else 0.0,
            "coverage_mean": float(np.mean([c["coverage_mean"] for c in self.clips])) if self.clips else 0.0,
            "retrieval_ms": self.timings.get("retrieval_ms", 0.0),
            "scene_hash": self.scene_hash,
        }

    def to_dict(self) -> dict:
        """Deterministic payload; wall-clock values live under ``metadata``."""
        summary = self.summary()
        summary.pop("retrieval_ms")
        return {
            "strategy": self.strategy,
            "scene_hash": self.scene_hash,
            "cheat_mode": self.cheat_mode,
            "summary": summary,
            "clips": self.clips,
            "unknown_fraction": self.unknown_fraction,
            "revisit": self.revisit.to_dict() if self.revisit else None,
            "camera": self.camera,
            "bank_indices": self.bank_indices,
            "forced_keeps": self.forced_keeps,
        }


def _query_indices(clip: list[int], q: int) -> list[int]:
    pos = np.unique(np.round(np.linspace(0, len(clip) - 1, min(q, len(clip)))).astype(int))
    return [clip[i] for i in pos]


def _oracle_maps(cache: GeometryCache, anchor: int, cands: list[int], targets: list[int]) -> np.ndarray:
    gh, gw = cache.trajectory[0].height // cache.p, cache.trajectory[0].width // cache.p
    maps = np.zeros((len(targets), len(cands), gh, gw))
    for ti, t in enumerate(targets):
        base = cache.visibility(t, anchor)
        for ci, c in enumerate(cands):
            maps[ti, ci] = np.maximum(base, cache.visibility(t, c))
    return maps


def _learned_maps(model: ScoringCNN, proj: Projection, bank: MemoryBank, cands, targets, traj) -> np.ndarray:
    anchor = bank.last
    rays = {t: plucker_map(traj[t]) for t in targets}
    feats = np.stack(
        [np.stack([assemble_features(anchor, bank[c], rays[t], proj, proj.patch_size) for c in cands]) for t in targets]
    )
    sigma = model.predict(feats.reshape((-1,) + feats.shape[2:]))
    return -sigma.reshape(feats.shape[:4])


def _perturb(traj: list[CameraPose], rot_deg: float, trans: float, seed: int) -> list[CameraPose]:
    from scipy.spatial.transform import Rotation

    rng = np.random.default_rng([seed, 4])
    out = []
    for p in traj:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dr = Rotation.from_rotvec(np.radians(rot_deg) * rng.uniform(0, 1) * axis).as_matrix()
        out.append(p.with_extrinsics(dr @ p.rotation, p.position + rng.normal(scale=trans, size=3)))
    return out


def frustum_visibility(cache: GeometryCache, targets, source: int) -> float:
    """Fraction of target surface points inside ``source``'s frustum that it really sees.

    Pooled over ``targets``. A frame whose frustum covers the targets while
    this stays near zero is one that only a visibility-blind overlap test
    would retrieve. Returns NaN when no target point falls in the frustum.
    """
    pose = cache.trajectory[source]
    inside_n = seen_n = 0
    for t in targets:
        ids, points, _ = cache.hits(t)
        geo = ids != BACKGROUND
        x, y, z = pose.project(np.where(geo[..., None], points, 0.0))
        inside = geo & (z > 0) & (x >= 0) & (x < pose.width) & (y >= 0) & (y < pose.height)
        smp = cache.samples(t, source)
        inside_n += int(np.count_nonzero(inside))
        seen_n += int(np.count_nonzero(inside & smp.visible))
    return seen_n / inside_n if inside_n else float("nan")


def run_scenario(
    cfg: ScenarioConfig,
    *,
    cache: GeometryCache | None = None,
    keep_frames: bool = False,
    model: tuple | None = None,
) -> RunResult:
    """Run one strategy through the whole trajectory.

    The first ``context_frames`` frames are given (rendered) and seed the bank
    under the stride rule, the last of them force-kept as the first anchor;
    clips of ``clip_length`` frames follow. After each clip the stride rule inserts
    frames into the bank and the clip's final frame is force-kept as the next
    anchor.
    """
    t_start = time.perf_counter()
    scene = cache.scene if cache is not None else build_scene(cfg.scene)
    traj = cache.trajectory if cache is not None else build_trajectory(cfg)
    if cache is None:
        cache = GeometryCache(scene, traj, cfg.patch_size, mirrored=cfg.protocol == "cycle")
    if cfg.scorer == "learned" and model is None:
        model = load_checkpoint(cfg.checkpoint)
        if model[1] is None:
            raise ConfigError("checkpoint carries no featurizer description")
    timings = {"geometry_ms": 0.0, "retrieval_ms": 0.0, "warp_ms": 0.0}

    bank = MemoryBank(cfg.bank_stride)
    generated: list[Frame] = [cache.gt(i) for i in range(cfg.context_frames)]
    for i, f in enumerate(generated):
        bank.append(f, force_keep=i == cfg.context_frames - 1)
    recon_images = [f.image for f in generated] if keep_frames else None
    unknown = [0.0] * cfg.context_frames
    clips = []
    frames_idx = list(range(cfg.context_frames, len(traj)))
    for ci, start in enumerate(range(0, len(frames_idx), cfg.clip_length)):
        clip = frames_idx[start : start + cfg.clip_length]
        anchor = bank.last.index
        cands = [f.index for f in bank.candidates()]
        queries = _query_indices(clip, cfg.queries_per_clip)
        t0 = time.perf_counter()
        cache.prefetch([(t, s) for t in queries for s in [anchor, *cands]], cfg.workers)
        timings["geometry_ms"] += 1000.0 * (time.perf_counter() - t0)
        t0 = time.perf_counter()
        oracle = _oracle_maps(cache, anchor, cands, queries)
        res = _select(cfg, ci, bank, scene, traj, cands, queries, oracle, model)
        timings["retrieval_ms"] += 1000.0 * (time.perf_counter() - t0)
        if any(i >= clip[0] for i in res.chosen):
            raise RuntimeError(f"clip {ci}: retrieval referenced a future frame")
        t0 = time.perf_counter()
        cache.prefetch([(t, s) for t in clip for s in res.chosen], cfg.workers)
        timings["geometry_ms"] += 1000.0 * (time.perf_counter() - t0)

        t0 = time.perf_counter()
        sources = [bank[i] for i in res.chosen]
        tint = np.random.default_rng([cfg.seed, ci, 1]).uniform(-cfg.hallucination, cfg.hallucination, size=3)
        clip_unknown, new_frames = [], []
        for t in clip:
            gt = cache.gt(t)
            ids, _, background = cache.hits(t)
            rec = compose_reconstruction(
                sources, [cache.samples(t, s.index) for s in sources], ids, background, gt.image, cfg.patch_size
            )
            if cfg.cheat_mode:
                image = gt.image
            else:
                image = np.where(rec.known_mask[..., None], rec.image, np.clip(gt.image + tint, 0.0, 1.0))
            frame = Frame(image, gt.depth, traj[t], t, gt.prim_ids)
            new_frames.append(frame)
            clip_unknown.append(rec.unknown_fraction)
            if keep_frames:
                recon_images.append(rec.image)
        timings["warp_ms"] += 1000.0 * (time.perf_counter() - t0)
        for k, frame in enumerate(new_frames):
            bank.append(frame, force_keep=k == len(new_frames) - 1)
        generated.extend(new_frames)
        unknown.extend(clip_unknown)

        chosen_cands = [cands.index(i) for i in res.chosen if i in cands]
        if chosen_cands:
            canvas = oracle[:, chosen_cands].max(axis=1)
        else:
            canvas = np.stack([cache.visibility(t, anchor) for t in queries])
        cov = coverage_stats(canvas)
        clips.append(
            {
                "clip": ci,
                "frames": [clip[0], clip[-1]],
                "anchor": anchor,
                "queries": queries,
                "candidates": cands,
                **res.to_dict(),
                "coverage_mean": cov["mean"],
                "unknown_fraction_mean": float(np.mean(clip_unknown)),
            }
        )

    revisit = None
    if cfg.protocol == "cycle":
        revisit = revisit_consistency(generated, cfg.revisit_stride, unknown_fraction=unknown)
    gen_traj = traj
    if cfg.perturb_rot_deg or cfg.perturb_trans:
        gen_traj = _perturb(traj, cfg.perturb_rot_deg, cfg.perturb_trans, cfg.seed)
    try:
        camera = camera_errors(gen_traj, traj)
    except ValueError as exc:
        camera = {"error": str(exc)}
    camera["perturbed"] = bool(cfg.perturb_rot_deg or cfg.perturb_trans)
    timings["total_ms"] = 1000.0 * (time.perf_counter() - t_start)
    if bank.forced:
        logger.info("force-kept clip-final frames %s", bank.forced)
    return RunResult(
        strategy=cfg.strategy,
        scene_hash=scene.digest(),
        clips=clips,
        unknown_fraction=unknown,
        revisit=revisit,
        camera=camera,
        bank_indices=bank.indices,
        forced_keeps=list(bank.forced),
        timings=timings,
        cheat_mode=cfg.cheat_mode,
        frames=generated if keep_frames else None,
        reconstructions=recon_images,
    )


def _select(cfg, ci, bank, scene, traj, cands, queries, oracle, model) -> SelectionResult:
    s = cfg.strategy
    if s in MAP_STRATEGIES:
        if cfg.scorer == "learned" and cands:
            maps = _learned_maps(model[0], model[1], bank, cands, queries, traj)
        else:
            maps = oracle
        if s == "greedy":
            return select_greedy_multi_target(maps, cfg.K, ids=cands, last_id=bank.last.index)
        return select_topk_mean(maps, cfg.K, ids=cands, last_id=bank.last.index)
    targets = [traj[t] for t in queries]
    if s == "fov":
        return select_fov(bank, targets, cfg.K, depths=cfg.fov_depths)
    if s == "surfel":
        return select_surfel(bank, scene, targets, cfg.K, nms_window=cfg.nms_window)
    if s == "temporal":
        return select_temporal(bank, cfg.K)
    return select_random(bank, cfg.K, seed=[cfg.seed, ci, 2])


ABLATION_COLUMNS = ("strategy", "psnr_mean", "ssim_mean", "unknown_frac_mean", "coverage_mean", "retrieval_ms")


def ablate_strategies(cfg: ScenarioConfig, strategies) -> list[dict]:
    """One run per strategy over a shared scene, trajectory and geometry cache."""
    strategies = list(strategies)
    if not strategies:
        raise ConfigError("need at least one strategy")
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies {bad}; valid: {', '.join(STRATEGIES)}")
    scene = build_scene(cfg.scene)
    traj = build_trajectory(cfg)
    cache = GeometryCache(scene, traj, cfg.patch_size, mirrored=cfg.protocol == "cycle")
    model = load_checkpoint(cfg.checkpoint) if cfg.scorer == "learned" else None
    rows = []
    for s in strategies:
        res = run_scenario(cfg.replace(strategy=s), cache=cache, model=model)
        rows.append(res.summary())
    return rows


# --------------------------------------------------------------------------
# scorer training data

def _random_walk_pose(rng, scene: Scene, start, yaw: float, steps: int, step_len: float, turn: float,
                      width, height, fov_deg, max_pitch=10.0):
    """Walk ``steps`` jittered steps from ``start`` heading ``yaw``, then look ``turn`` radians off."""
    lo, hi = (np.asarray(b) for b in scene.bounds)
    pos = np.array(start, dtype=np.float64)
    for _ in range(steps):
        yaw += rng.uniform(-0.3, 0.3)
        pos = pos + step_len * np.array([np.sin(yaw), 0.0, np.cos(yaw)]) + rng.normal(scale=0.05, size=3) * [0, 1, 0]
    if np.any(pos < lo) or np.any(pos > hi) or scene.inside_solid(pos, margin=0.3):
        return None
    yaw += rng.uniform(-turn, turn)
    pitch = np.radians(rng.uniform(-max_pitch, max_pitch))
    fwd = np.array([np.sin(yaw) * np.cos(pitch), np.sin(pitch), np.cos(yaw) * np.cos(pitch)])
    return look_at(pos, pos + fwd, width=width, height=height, fov_deg=fov_deg)


def _draw_triplet(rng, scene: Scene, width, height, fov_deg):
    """Anchor, candidate and target poses shaped like a retrieval step.

    The target continues the anchor's walk a few steps and turns away by up
    to ~45 degrees, so part of it is new. The candidate is a history frame:
    half the time a walk from near the anchor's start, otherwise from a
    random spot in the scene.
    """
    lo, hi = (np.asarray(b) for b in scene.bounds)
    for _ in range(100):
        start = rng.uniform(lo, hi)
        if scene.inside_solid(start, margin=0.3):
            continue
        yaw = rng.uniform(-np.pi, np.pi)
        anchor = _random_walk_pose(rng, scene, start, yaw, 0, 0.0, 0.0, width, height, fov_deg)
        target = _random_walk_pose(rng, scene, start, yaw, int(rng.integers(0, 5)), 0.3, 0.8, width, height, fov_deg)
        if rng.random() < 0.5:
            cand_start = start + rng.normal(scale=1.0, size=3) * [1, 0, 1]
        else:
            cand_start = rng.uniform(lo, hi)
        cand_yaw = yaw + rng.uniform(-np.pi / 2, np.pi / 2)
        candidate = _random_walk_pose(rng, scene, cand_start, cand_yaw, int(rng.integers(0, 4)), 0.3, 0.5,
                                      width, height, fov_deg)
        if None not in (anchor, target, candidate) and not scene.inside_solid(cand_start, margin=0.3):
            return anchor, candidate, target
    return None


def make_sample(scene: Scene, anchor: CameraPose, candidate: CameraPose, target: CameraPose, featurizer: PatchFeaturizer) -> TrainingSample:
    """Features of (anchor, candidate, target rays) and the warp-oracle MSE target."""
    from .warp import warp_reconstruct

    a = render(scene, anchor)
    c = render(scene, candidate)
    gt = render(scene, target)
    feats = assemble_features(a, c, plucker_map(target), featurizer.projection_, featurizer.patch_size)
    rec = warp_reconstruct(scene, [a, c], target, featurizer.patch_size, gt=gt)
    return TrainingSample(feats, rec.patch_mse)


def make_training_corpus(
    scene_configs,
    samples_per_scene: int,
    seed: int,
    *,
    d_proj: int = 64,
    patch_size: int = 8,
    proj_seed: int = 0,
    width: int = 64,
    height: int = 64,
    fov_deg: float = 70.0,
) -> tuple[list[dict], list[TrainingSample]]:
    """Seeded (anchor, candidate, target) draws per scene with oracle MSE targets.

    Draws that leave the scene bounds are retried up to 100 times; after that
    the sample is skipped with a warning.
    """
    scene_configs = list(scene_configs)
    if not scene_configs:
        raise ParameterError("need at least one scene config")
    featurizer = PatchFeaturizer(d_proj, patch_size, proj_seed).fit()
    manifest, samples = [], []
    for si, sc in enumerate(scene_configs):
        scene = build_scene(sc)
        for k in range(samples_per_scene):
            sample_seed = [seed, si, k]
            rng = np.random.default_rng(sample_seed)
            triplet = _draw_triplet(rng, scene, width, height, fov_deg)
            if triplet is None:
                logger.warning("scene %d sample %d: pose draw failed 100 times, skipped", si, k)
                continue
            anchor, candidate, target = triplet
            manifest.append(
                {
                    "scene": scene.config,
                    "anchor": anchor.to_dict(),
                    "candidate": candidate.to_dict(),
                    "target": target.to_dict(),
                    "seed": sample_seed,
                    "featurizer": {"d_proj": d_proj, "patch_size": patch_size, "seed": proj_seed},
                }
            )
            samples.append(make_sample(scene, anchor, candidate, target, featurizer))
    return manifest, samples


def samples_from_manifest(manifest) -> tuple[list[TrainingSample], PatchFeaturizer]:
    """Rebuild training samples from manifest descriptors."""
    if not isinstance(manifest, list) or not manifest:
        raise ConfigError("manifest must be a non-empty list of sample descriptors")
    scenes: dict[str, Scene] = {}
    featurizer = None
    out = []
    for k, d in enumerate(manifest):
        try:
            fz = d["featurizer"]
            if featurizer is None:
                featurizer = PatchFeaturizer(fz["d_proj"], fz["patch_size"], fz["seed"]).fit()
            elif (fz["d_proj"], fz["patch_size"], fz["seed"]) != (featurizer.d_proj, featurizer.patch_size, featurizer.seed):
                raise ConfigError("manifest mixes featurizer settings")
            key = json.dumps(d["scene"], sort_keys=True)
            if key not in scenes:
                scenes[key] = build_scene(d["scene"])
            poses = [CameraPose.from_dict(d[name]) for name in ("anchor", "candidate", "target")]
        except (KeyError, TypeError, ParameterError) as exc:
            raise ConfigError(f"manifest entry {k} is malformed: {exc}") from exc
        out.append(make_sample(scenes[key], *poses, featurizer))
    return out, featurizer
