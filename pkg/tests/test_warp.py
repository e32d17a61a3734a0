import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenemem._validation import ParameterError
from scenemem.geometry import look_at
from scenemem.world import BACKGROUND, Frame, render
from scenemem.warp import (
    MSE_MAX,
    UNKNOWN_FILL,
    patch_mse_grid,
    reproject_samples,
    warp_reconstruct,
)


def random_pose(rng, scene):
    lo, hi = np.asarray(scene.bounds)
    while True:
        eye = rng.uniform(lo, hi)
        if not scene.inside_solid(eye, margin=0.3):
            break
    yaw = rng.uniform(-np.pi, np.pi)
    return look_at(eye, eye + (np.sin(yaw), rng.uniform(-0.2, 0.2), np.cos(yaw)))


class TestWarp:
    def test_identity(self, room, south_view):
        gt = render(room, south_view)
        rec = warp_reconstruct(room, [gt], south_view, 8)
        assert rec.known_mask.all() and rec.unknown_fraction == 0.0
        assert np.all(rec.patch_mse == 0.0)
        assert rec.image.tobytes() == gt.image.tobytes()

    def test_identity_keeps_generated_colours(self, room, south_view):
        gt = render(room, south_view)
        tinted = Frame(np.clip(gt.image * 0.7 + 0.1, 0, 1), gt.depth, gt.pose, 0, gt.prim_ids)
        rec = warp_reconstruct(room, [tinted], south_view, 8)
        geo = gt.prim_ids != BACKGROUND
        assert np.array_equal(rec.image[geo], tinted.image[geo])

    def test_occluded_side_unknown(self, room, south_view, north_view):
        rec = warp_reconstruct(room, [render(room, south_view)], north_view, 8)
        assert rec.unknown_fraction > 0.3
        assert np.all(rec.image[~rec.known_mask] == UNKNOWN_FILL)
        # centre patches only show the hidden wall face
        assert rec.patch_mse[3, 3] == MSE_MAX and not rec.known_mask[24:32, 24:32].any()

    def test_background_is_known(self, corridor):
        pose = look_at((0.0, 0.0, -6.0), (0.0, 0.0, 0.0))
        other = look_at((0.0, 0.0, 5.0), (0.0, 0.0, 8.0))
        rec = warp_reconstruct(corridor, [render(corridor, other)], pose, 8)
        gt = render(corridor, pose)
        bg = gt.prim_ids == BACKGROUND
        assert bg.any() and rec.known_mask[bg].all()
        assert np.array_equal(rec.image[bg], gt.image[bg])

    def test_empty_sources(self, room, south_view):
        with pytest.raises(ParameterError):
            warp_reconstruct(room, [], south_view, 8)

    def test_resolution_mismatch(self, room, south_view):
        small = render(room, look_at((0.0, 0.0, -3.5), (0, 0, 0), width=32, height=32))
        with pytest.raises(ParameterError):
            warp_reconstruct(room, [small], south_view, 8)

    def test_gt_sources_give_zero_known_error(self, room):
        rng = np.random.default_rng(5)
        for _ in range(4):
            target = random_pose(rng, room)
            sources = [render(room, random_pose(rng, room)) for _ in range(3)]
            rec = warp_reconstruct(room, sources, target, 8)
            gt = render(room, target)
            assert np.allclose(rec.image[rec.known_mask], gt.image[rec.known_mask], atol=1e-12)
            assert np.all((rec.patch_mse == 0.0) | (rec.patch_mse == MSE_MAX))
            empty = ~rec.known_mask.reshape(8, 8, 8, 8).any(axis=(1, 3))
            assert np.array_equal(rec.patch_mse == MSE_MAX, empty)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_adding_sources_never_hurts(self, room, seed):
        rng = np.random.default_rng(seed)
        target = random_pose(rng, room)
        frames = [render(room, random_pose(rng, room)) for _ in range(3)]
        u = [warp_reconstruct(room, frames[:k], target, 8).unknown_fraction for k in (1, 2, 3)]
        assert u[0] >= u[1] >= u[2]

    def test_unknown_fraction_definition(self, room, south_view, north_view):
        rec = warp_reconstruct(room, [render(room, south_view)], north_view, 8)
        assert rec.unknown_fraction == np.count_nonzero(~rec.known_mask) / rec.known_mask.size

    def test_samples_residual(self, room, south_view):
        gt = render(room, south_view)
        pts = gt.points()
        smp = reproject_samples(room, pts, gt)
        geo = gt.prim_ids != BACKGROUND
        assert smp.visible[geo].all() and np.all(smp.residual[geo] == 0.0)
        assert not smp.visible[~geo].any()


class TestPatchMse:
    def test_zero(self, rng):
        img = rng.random((16, 16, 3))
        assert np.all(patch_mse_grid(img, img, 4) == 0.0)

    def test_uniform_offset(self, rng):
        img = rng.uniform(0.0, 0.9, (16, 16, 3))
        assert np.allclose(patch_mse_grid(img + 0.1, img, 8), 0.01)

    @given(st.integers(0, 1000))
    def test_partition(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.random((24, 16, 3)), r.random((24, 16, 3))
        assert np.isclose(patch_mse_grid(a, b, 8).mean(), np.mean((a - b) ** 2))

    def test_errors(self, rng):
        with pytest.raises(ParameterError):
            patch_mse_grid(rng.random((16, 16, 3)), rng.random((16, 8, 3)), 4)
        with pytest.raises(ParameterError):
            patch_mse_grid(rng.random((15, 16, 3)), rng.random((15, 16, 3)), 4)
