"""
Tests du DFF classique (mesures de netteté et argmax sur la pile).
"""
import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy import ndimage

from depth_manager.classic_dff import argmax_disparity, luminance, sharpness_map, sharpness_volume
from depth_manager.config import FOCUS_MEASURES
from depth_manager.exceptions import ParameterError
from depth_manager.lightfield_core import depth_from_disparity, lytro_intrinsics
from depth_manager.refocus import FocalStack, synthesize_stack
from depth_manager.synthgen import PlaneSpec, SceneSpec, TextureSpec, make_random_scene, render_lightfield


class SharpnessMapTestCase(SimpleTestCase):

    def setUp(self):
        self.image = np.random.default_rng(0).uniform(0, 1, size=(20, 24, 3))

    def test_constant_image_has_zero_sharpness(self):
        flat = np.full((16, 16), 0.4)
        for measure in FOCUS_MEASURES:
            assert_allclose(sharpness_map(flat, measure, 3), 0.0, atol=1e-12)

    def test_measures_are_non_negative(self):
        for measure in FOCUS_MEASURES:
            values = sharpness_map(self.image, measure, 5)
            self.assertEqual(values.shape, (20, 24))
            self.assertTrue(np.all(values >= 0))

    def test_blur_lowers_sharpness(self):
        blurred = ndimage.gaussian_filter(self.image, sigma=(1.5, 1.5, 0))
        for measure in FOCUS_MEASURES:
            self.assertLess(sharpness_map(blurred, measure).mean(), sharpness_map(self.image, measure).mean())

    def test_luminance_weights(self):
        pixel = np.array([[[1.0, 0.0, 0.0]]])
        self.assertAlmostEqual(luminance(pixel)[0, 0], 0.299)

    def test_invalid_parameters(self):
        with self.assertRaises(ParameterError):
            sharpness_map(self.image, "modified-laplacian", 4)
        with self.assertRaises(ParameterError):
            sharpness_map(self.image, "modified-laplacian", 0)
        with self.assertRaises(ParameterError):
            sharpness_map(self.image, "entropy", 3)


class ArgmaxDisparityTestCase(SimpleTestCase):
    """Argmax de netteté sur la pile"""

    def test_recovers_plane_disparity(self):
        """Plan calé sur une tranche : l'argmax retrouve sa disparité"""
        intr = lytro_intrinsics(9)
        levels = np.linspace(1.2, 0.0, 7)
        plane = PlaneSpec(depth_from_disparity(levels[3], intr), TextureSpec(seed=21))
        lf, gt = render_lightfield(SceneSpec((plane,), intr, seed=21, frame=(32, 32)))
        stack = synthesize_stack(lf, 1.2, 0.0, 7)
        dmap = argmax_disparity(stack, "modified-laplacian", 9)
        hits = np.isclose(dmap.values, levels[3]) & dmap.mask
        self.assertGreater(hits.mean(), 0.9)

    def test_ties_go_to_nearest_slice(self):
        texture = np.random.default_rng(1).uniform(0, 1, size=(12, 12, 1))
        for disparities in ((0.1, 0.2), (0.2, 0.1)):
            stack = FocalStack(np.stack([texture, texture]), disparities)
            dmap = argmax_disparity(stack, window=3)
            assert_allclose(dmap.values, 0.2)

    def test_textureless_stack_is_invalid(self):
        stack = FocalStack(np.full((3, 10, 10, 3), 0.5), (0.3, 0.2, 0.1))
        dmap = argmax_disparity(stack)
        self.assertFalse(dmap.mask.any())
        assert_array_equal(dmap.values, 0.0)

    def test_flat_region_is_invalid(self):
        image = np.full((16, 32, 1), 0.5)
        image[:, :12, 0] = np.random.default_rng(2).uniform(0, 1, size=(16, 12))
        stack = FocalStack(np.stack([image, 0.5 * image + 0.25]), (0.2, 0.1))
        dmap = argmax_disparity(stack, window=3)
        self.assertTrue(dmap.mask[:, :8].all())
        self.assertFalse(dmap.mask[:, -8:].any())

    def test_single_slice_rejected(self):
        stack = FocalStack(np.zeros((1, 4, 4, 1)), (0.1,))
        with self.assertRaises(ParameterError):
            argmax_disparity(stack)

    def test_volume_shape(self):
        stack = FocalStack(np.random.default_rng(3).uniform(0, 1, size=(4, 8, 9, 3)), (0.4, 0.3, 0.2, 0.1))
        volume = sharpness_volume(stack, "tenengrad", 3)
        self.assertEqual(volume.values.shape, (4, 8, 9))
        self.assertEqual(volume.focus_disparities, (0.4, 0.3, 0.2, 0.1))


def textured_interior(gt_values: np.ndarray, band: int) -> np.ndarray:
    """Pixels à plus de `band` pixels d'un bord de plan et du bord du cadre"""
    edges = np.zeros(gt_values.shape, dtype=bool)
    edges[:, 1:] |= gt_values[:, 1:] != gt_values[:, :-1]
    edges[:, :-1] |= gt_values[:, 1:] != gt_values[:, :-1]
    edges[1:, :] |= gt_values[1:, :] != gt_values[:-1, :]
    edges[:-1, :] |= gt_values[1:, :] != gt_values[:-1, :]
    interior = ~ndimage.binary_dilation(edges, iterations=band) if edges.any() else np.ones(gt_values.shape, bool)
    interior[:band, :] = False
    interior[-band:, :] = False
    interior[:, :band] = False
    interior[:, -band:] = False
    return interior


class MultiPlaneOracleTestCase(SimpleTestCase):
    """Scènes multi-plans calées sur les tranches d'une pile de 10 sur [0.28, 0.02]"""

    def test_argmax_hits_the_right_slice(self):
        intr = lytro_intrinsics(9)
        levels = np.linspace(0.28, 0.02, 10)
        hits, total = 0, 0
        for seed in range(10):
            spec = make_random_scene(seed, 3, (0.4, 8.0), intr, frame=(96, 96), disparity_levels=levels)
            lf, gt = render_lightfield(spec)
            stack = synthesize_stack(lf, 0.28, 0.02, 10)
            dmap = argmax_disparity(stack, "modified-laplacian", 9)
            interior = textured_interior(gt.values, 12)
            correct = np.isclose(dmap.values, gt.values, atol=1e-6) & dmap.mask
            hits += int(correct[interior].sum())
            total += int(interior.sum())
        self.assertGreater(total, 0)
        self.assertGreaterEqual(hits / total, 0.95)
