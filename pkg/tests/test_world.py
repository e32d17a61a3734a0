import dataclasses

import numpy as np
import pytest

from scenemem._validation import ConfigError, ParameterError
from scenemem.geometry import Ray, look_at
from scenemem.world import (
    BACKGROUND,
    Box,
    Plane,
    Scene,
    Texture,
    build_scene,
    cast_ray,
    cast_rays,
    render,
    visibility_fraction,
    visibility_grid,
)

TEX = Texture((0.8, 0.5, 0.2), 0.3)


def scene_of(*prims):
    return Scene(tuple(prims), np.full(3, 0.5), np.zeros((3, 3)))


def oracle_box(box, o, d):
    # intersect each of the six faces separately, keep the nearest valid one
    c, h = np.asarray(box.center), np.asarray(box.half_extents)
    best = np.inf
    for axis in range(3):
        if d[axis] == 0:
            continue
        for sign in (-1.0, 1.0):
            t = (c[axis] + sign * h[axis] - o[axis]) / d[axis]
            if t <= 1e-6:
                continue
            p = o + t * d
            others = [k for k in range(3) if k != axis]
            if all(abs(p[k] - c[k]) <= h[k] + 1e-9 for k in others):
                best = min(best, t)
    return best


def oracle_plane(plane, o, d):
    m = np.column_stack([plane.edge1, plane.edge2, -d])
    try:
        a, b, t = np.linalg.solve(m, o - np.asarray(plane.corner))
    except np.linalg.LinAlgError:
        return np.inf
    return t if (0 <= a <= 1 and 0 <= b <= 1 and t > 1e-6) else np.inf


def oracle_cast(scene, o, d):
    best, best_id = np.inf, BACKGROUND
    for i, prim in enumerate(scene.primitives):
        t = oracle_box(prim, o, d) if isinstance(prim, Box) else oracle_plane(prim, o, d)
        if t < best:
            best, best_id = t, i
    return best, best_id


class TestBuild:
    def test_deterministic(self):
        a = build_scene({"layout": "occluded-room", "seed": 3})
        b = build_scene({"layout": "occluded-room", "seed": 3})
        assert a.primitives == b.primitives and a.digest() == b.digest()
        assert build_scene({"layout": "occluded-room", "seed": 4}).digest() != a.digest()

    def test_room_has_interior_occluder(self, room):
        boxes = [p for p in room.primitives if isinstance(p, Box)]
        assert any(np.allclose(b.center[::2], 0.0) for b in boxes)

    @pytest.mark.parametrize("bad", [{"layout": "castle"}, {"layout": "corridor", "seed": 1.5}, 7,
                                     {"layout": "corridor", "params": [1]}])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            build_scene(bad)

    @pytest.mark.parametrize("layout", ["occluded-room", "corridor", "open-field"])
    def test_layouts_render(self, layout):
        scene = build_scene({"layout": layout, "seed": 0})
        lo, hi = np.asarray(scene.bounds)
        eye = 0.5 * (lo + hi)
        f = render(scene, look_at(eye, eye + (0.3, 0.0, 1.0), width=16, height=16))
        assert np.all((f.image >= 0) & (f.image <= 1))
        assert np.any(np.isfinite(f.depth))


class TestCast:
    def test_box_front_face(self):
        s = scene_of(Box((0, 0, 0), (0.5, 0.5, 0.5), TEX))
        hit = cast_ray(s, Ray(np.array([0.0, 0.0, -5.0]), np.array([0.0, 0.0, 1.0])))
        assert hit.depth == 4.5 and hit.primitive_id == 0

    def test_miss_is_background(self):
        s = scene_of(Box((0, 0, 0), (0.5, 0.5, 0.5), TEX))
        hit = cast_ray(s, Ray(np.array([0.0, 0.0, -5.0]), np.array([0.0, 0.0, -1.0])))
        assert hit.is_background and hit.depth == np.inf
        assert np.allclose(hit.color, s.background(np.array([[0.0, 0.0, -1.0]]))[0])

    def test_inserting_closer_primitive(self, rng):
        far = Box((0, 0, 4), (1, 1, 0.5), TEX)
        near = Plane((-2, -2, 1), (4, 0, 0), (0, 4, 0), TEX)
        dirs = rng.normal(size=(200, 3)) * (0.2, 0.2, 0) + (0, 0, 1)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        d1, ids1, _ = cast_rays(scene_of(far), np.zeros(3), dirs)
        d2, ids2, _ = cast_rays(scene_of(far, near), np.zeros(3), dirs)
        hit = np.isfinite(d1)
        assert hit.any() and np.all(d2[hit] < d1[hit])

    def test_tie_goes_to_lowest_index(self):
        a = Plane((-1, -1, 2), (2, 0, 0), (0, 2, 0), TEX)
        b = Plane((-1, -1, 2), (2, 0, 0), (0, 2, 0), Texture((0.1, 0.1, 0.1), 0.5))
        _, ids, _ = cast_rays(scene_of(a, b), np.zeros(3), np.array([[0.0, 0.0, 1.0]]))
        assert ids[0] == 0

    @pytest.mark.parametrize("layout", ["occluded-room", "corridor", "open-field"])
    def test_matches_brute_force(self, layout):
        scene = build_scene({"layout": layout, "seed": 2})
        rng = np.random.default_rng(99)
        lo, hi = np.asarray(scene.bounds)
        origins = rng.uniform(lo, hi, size=(1000, 3))
        dirs = rng.normal(size=(1000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        depth, ids, _ = cast_rays(scene, origins, dirs)
        for k in range(1000):
            t, i = oracle_cast(scene, origins[k], dirs[k])
            if np.isinf(t):
                assert ids[k] == BACKGROUND and np.isinf(depth[k])
            else:
                assert depth[k] == pytest.approx(t, rel=1e-9)
                # coincident surfaces may legitimately differ by index within tolerance
                assert ids[k] == i or abs(oracle_cast(scene_of(scene.primitives[ids[k]]), origins[k], dirs[k])[0] - t) < 1e-9


class TestRender:
    def test_empty_scene(self):
        s = build_scene({"layout": "empty"})
        pose = look_at((0, 0, 0), (0, 0, 1), width=8, height=8)
        f = render(s, pose)
        assert np.all(np.isinf(f.depth)) and np.all(f.prim_ids == BACKGROUND)
        assert np.allclose(f.image, s.background(pose.pixel_directions()))

    def test_deterministic(self, room, south_view):
        a, b = render(room, south_view), render(room, south_view)
        assert a.image.tobytes() == b.image.tobytes() and a.depth.tobytes() == b.depth.tobytes()

    def test_depth_recast(self, room, rng):
        pose = look_at((1.0, 0.2, -3.0), (-1.0, 0.0, 2.0), width=32, height=32)
        f = render(room, pose)
        for u, v in rng.integers(0, 32, size=(25, 2)):
            assert cast_ray(room, Ray(pose.position, pose.pixel_directions()[v, u])).depth == f.depth[v, u]

    def test_behind_occluder_sees_occluder(self, room, south_view):
        hit = cast_ray(room, Ray(south_view.position, south_view.pixel_directions()[32, 32]))
        assert isinstance(room.primitives[hit.primitive_id], Box)
        assert hit.point[2] == pytest.approx(-0.15)

    def test_frame_validation(self, room, south_view):
        f = render(room, south_view)
        with pytest.raises(ParameterError):
            dataclasses.replace(f, image=f.image[:-1])
        with pytest.raises(ParameterError):
            dataclasses.replace(f, image=f.image + 2.0)


class TestVisibility:
    def test_self_visibility(self, room, south_view):
        grid = visibility_grid(room, south_view, south_view, 8)
        assert np.all(grid == 1.0)

    def test_occluded(self, room, south_view, north_view):
        # the north camera's centre patches show the wall's far face
        assert visibility_fraction(room, south_view, north_view, (3, 3), 8) == 0.0
        assert visibility_fraction(room, north_view, north_view, (3, 3), 8) == 1.0

    def test_exhaustive_depth_test(self, room, south_view, north_view):
        # per-pixel oracle: march the segment and look for any blocking primitive
        v, u = np.mgrid[24:32, 24:32]
        dirs = north_view.camera_directions(u, v).reshape(-1, 3)
        depth, _, pts = cast_rays(room, north_view.position, dirs)
        seen = 0
        for p in pts:
            d = p - south_view.position
            dist = np.linalg.norm(d)
            t, _ = oracle_cast(room, south_view.position, d / dist)
            seen += abs(t - dist) <= 1e-4 * dist
        assert seen == 0 == visibility_fraction(room, south_view, north_view, (3, 3), 8)

    def test_removing_occluder_never_hurts(self, room, south_view, north_view):
        wall = next(i for i, p in enumerate(room.primitives) if isinstance(p, Box) and np.allclose(p.center[::2], 0))
        opened = dataclasses.replace(room, primitives=room.primitives[:wall] + room.primitives[wall + 1:])
        for src in (south_view, look_at((-3.0, 0.3, -2.0), (0.0, 0.0, 3.0))):
            before = visibility_grid(room, src, north_view, 8)
            after = visibility_grid(opened, src, north_view, 8)
            assert np.all(after >= before - 1e-12)
        assert visibility_grid(opened, south_view, north_view, 8).sum() > 0

    def test_background_patch_scores_zero(self):
        s = build_scene({"layout": "empty"})
        pose = look_at((0, 0, 0), (0, 0, 1), width=16, height=16)
        assert visibility_fraction(s, pose, pose, (0, 0), 8) == 0.0

    def test_bounds(self, room, south_view, rng):
        with pytest.raises(ParameterError):
            visibility_fraction(room, south_view, south_view, (8, 0), 8)
        for _ in range(5):
            src = look_at(rng.uniform(-4, 4, 3) * (1, 0.1, 1), rng.uniform(-4, 4, 3) * (1, 0.1, 1))
            g = visibility_grid(room, src, south_view, 8)
            assert np.all((g >= 0) & (g <= 1))
