import numpy as np
import pytest

from models.settings import RasterSettings
from render.projection import Splat2D, support_bbox
from render.rasterizer import depth_order, rasterize_splats, rasterize_splats_backward
from tests.oracles import central_difference, naive_composite, relative_error
from utils.errors import StateError


def build_splats(mean2, cov2, alpha_base, rgb, depth, cam, settings) -> Splat2D:
    bbox, visible = support_bbox(mean2, cov2, alpha_base, cam, settings.alpha_floor)
    keep = np.flatnonzero(visible)
    return Splat2D(
        index=keep,
        mean2=mean2[keep],
        cov2=cov2[keep],
        conic=np.linalg.inv(cov2[keep]) if keep.size else np.zeros((0, 2, 2)),
        depth=depth[keep],
        alpha_base=alpha_base[keep],
        rgb=rgb[keep],
        bbox=bbox[keep],
    )


def random_splats(rng, cam, settings, count, alpha_range=(0.3, 0.99)) -> Splat2D:
    mean2 = rng.uniform(-2.0, cam.width + 2.0, size=(count, 2))
    factor = rng.normal(size=(count, 2, 2)) * rng.uniform(0.5, 3.0, size=(count, 1, 1))
    cov2 = factor @ np.swapaxes(factor, -1, -2) + 0.3 * np.eye(2)
    return build_splats(
        mean2,
        cov2,
        rng.uniform(*alpha_range, size=count),
        rng.uniform(size=(count, 3)),
        rng.uniform(1.0, 5.0, size=count),
        cam,
        settings,
    )


class TestRasterize:
    def test_no_splats_gives_background(self, small_camera):
        settings = RasterSettings(background=(0.2, 0.3, 0.4), tile_size=8, workers=1)
        empty = build_splats(np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros((0, 3)), np.zeros(0),
                             small_camera, settings)
        out = rasterize_splats(empty, small_camera, settings)
        np.testing.assert_array_equal(out.image, np.broadcast_to([0.2, 0.3, 0.4], (16, 16, 3)))
        np.testing.assert_array_equal(out.transmittance, np.ones((16, 16)))

    def test_matches_naive_compositing(self, small_camera, rng):
        settings = RasterSettings(background=(0.1, 0.0, 0.2), tile_size=8, workers=1)
        for _ in range(20):
            splats = random_splats(rng, small_camera, settings, 12)
            image = rasterize_splats(splats, small_camera, settings).image
            np.testing.assert_allclose(image, naive_composite(splats, small_camera, settings), atol=1e-6)

    def test_weights_and_transmittance_sum_to_one(self, small_camera, rng):
        settings = RasterSettings(tile_size=8, workers=1)
        for _ in range(20):
            out = rasterize_splats(random_splats(rng, small_camera, settings, 12), small_camera, settings)
            assert np.abs(out.transmittance + out.weight_sum - 1.0).max() < 1e-9
            assert out.transmittance.min() >= settings.transmittance_floor

    def test_ties_break_on_index(self):
        splats = Splat2D(
            index=np.array([3, 1, 2]),
            mean2=np.zeros((3, 2)),
            cov2=np.tile(np.eye(2), (3, 1, 1)),
            conic=np.tile(np.eye(2), (3, 1, 1)),
            depth=np.array([2.0, 2.0, 1.0]),
            alpha_base=np.full(3, 0.5),
            rgb=np.zeros((3, 3)),
            bbox=np.zeros((3, 4), dtype=np.int64),
        )
        np.testing.assert_array_equal(splats.index[depth_order(splats)], [2, 1, 3])

    def test_opaque_front_splat_hides_the_rest(self, small_camera):
        settings = RasterSettings(tile_size=8, workers=1)
        centre = np.array([[7.5, 7.5], [7.5, 7.5]])
        splats = build_splats(centre, np.tile(100.0 * np.eye(2), (2, 1, 1)), np.array([0.99, 0.99]),
                              np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), np.array([1.0, 2.0]),
                              small_camera, settings)
        pixel = rasterize_splats(splats, small_camera, settings).image[7, 7]
        assert pixel[0] > 0.95
        assert pixel[1] < 0.02

    def test_worker_count_does_not_change_result(self, small_camera, rng):
        single = RasterSettings(tile_size=4, workers=1)
        pooled = RasterSettings(tile_size=4, workers=4)
        splats = random_splats(rng, small_camera, single, 15)
        grad = rng.normal(size=(16, 16, 3))
        out_single = rasterize_splats(splats, small_camera, single)
        out_pooled = rasterize_splats(splats, small_camera, pooled)
        np.testing.assert_array_equal(out_single.image, out_pooled.image)
        g_single = rasterize_splats_backward(out_single.cache, grad)
        g_pooled = rasterize_splats_backward(out_pooled.cache, grad)
        for name in ("mean2", "cov2", "alpha_base", "rgb"):
            np.testing.assert_array_equal(getattr(g_single, name), getattr(g_pooled, name))

    def test_tile_size_does_not_change_image(self, small_camera, rng):
        splats = random_splats(rng, small_camera, RasterSettings(workers=1), 10)
        images = [
            rasterize_splats(splats, small_camera, RasterSettings(tile_size=size, workers=1)).image
            for size in (3, 8, 16)
        ]
        for image in images[1:]:
            np.testing.assert_allclose(image, images[0], atol=1e-12)


class TestRasterizeBackward:
    def test_requires_cache(self):
        with pytest.raises(StateError):
            rasterize_splats_backward(None, np.zeros((4, 4, 3)))

    def test_matches_finite_differences(self, small_camera, smooth_settings, rng):
        count = 4
        mean2 = rng.uniform(4.0, 12.0, size=(count, 2))
        factor = rng.normal(size=(count, 2, 2)) * 1.5
        cov2 = factor @ np.swapaxes(factor, -1, -2) + 1.0 * np.eye(2)
        alpha_base = rng.uniform(0.2, 0.7, size=count)
        rgb = rng.uniform(size=(count, 3))
        depth = rng.uniform(1.0, 5.0, size=count)
        grad_image = rng.normal(size=(16, 16, 3))

        def loss():
            splats = build_splats(mean2, cov2, alpha_base, rgb, depth, small_camera, smooth_settings)
            return float(np.sum(grad_image * rasterize_splats(splats, small_camera, smooth_settings).image))

        splats = build_splats(mean2, cov2, alpha_base, rgb, depth, small_camera, smooth_settings)
        assert splats.count == count
        grads = rasterize_splats_backward(rasterize_splats(splats, small_camera, smooth_settings).cache, grad_image)
        assert relative_error(grads.mean2, central_difference(loss, mean2)) < 1e-5
        assert relative_error(grads.cov2, central_difference(loss, cov2)) < 1e-5
        assert relative_error(grads.alpha_base, central_difference(loss, alpha_base)) < 1e-5
        assert relative_error(grads.rgb, central_difference(loss, rgb)) < 1e-5
