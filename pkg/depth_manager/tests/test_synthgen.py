"""
Tests du générateur de scènes synthétiques.
"""
import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy import ndimage

from depth_manager.exceptions import DomainError, ParameterError, SceneGenerationError
from depth_manager.lightfield_core import depth_from_disparity, disparity_from_depth, lytro_intrinsics
from depth_manager.refocus import refocus_at_disparity, synthesize_stack
from depth_manager.synthgen import (
    TEXTURE_RANGE,
    PlaneSpec,
    SceneSpec,
    TextureSpec,
    make_random_scene,
    procedural_texture,
    render_lightfield,
    shift_margin,
    visible_fractions,
)

FRAME = (24, 28)


class TextureTestCase(SimpleTestCase):

    def test_range_and_determinism(self):
        a = procedural_texture(11, FRAME, 3)
        b = procedural_texture(11, FRAME, 3)
        assert_array_equal(a, b)
        self.assertAlmostEqual(a.min(), TEXTURE_RANGE[0])
        self.assertAlmostEqual(a.max(), TEXTURE_RANGE[1])

    def test_band_limited(self):
        """Aucune énergie au-delà de la coupure"""
        texture = procedural_texture(2, FRAME, 1, cutoff=0.25)
        spectrum = np.abs(np.fft.fft2(texture[:, :, 0] - texture.mean()))
        fy = np.abs(np.fft.fftfreq(FRAME[0]))[:, None]
        fx = np.abs(np.fft.fftfreq(FRAME[1]))[None, :]
        outside = (fy > 0.25) | (fx > 0.25)
        self.assertLess(spectrum[outside].max(), 1e-9)

    def test_spec_requires_seed_or_patch(self):
        with self.assertRaises(DomainError):
            TextureSpec()
        with self.assertRaises(DomainError):
            TextureSpec(seed=1, cutoff=0.5)


class RenderTestCase(SimpleTestCase):
    """Rendu d'une scène et vérité terrain"""

    def setUp(self):
        self.intr = lytro_intrinsics(5)
        self.depth = 0.8
        self.single = SceneSpec(
            (PlaneSpec(self.depth, TextureSpec(seed=5, cutoff=0.25)),), self.intr, seed=5, frame=FRAME,
        )

    def test_single_plane_groundtruth(self):
        lf, gt = render_lightfield(self.single)
        self.assertEqual(lf.samples.shape, (5, 5) + FRAME + (3,))
        assert_allclose(gt.values, disparity_from_depth(self.depth, self.intr))
        self.assertTrue(gt.mask.all())

    def test_central_view_is_texture(self):
        lf, _ = render_lightfield(self.single)
        texture = procedural_texture(5, FRAME, 3, cutoff=0.25)
        assert_array_equal(lf.samples[2, 2], texture)

    def test_refocus_on_plane_recovers_central_view(self):
        """Refocaliser à la disparité du plan redonne la vue centrale"""
        lf, gt = render_lightfield(self.single)
        image = refocus_at_disparity(lf, gt.values[0, 0])
        assert_allclose(image, lf.samples[2, 2], atol=1e-6)

    def test_occluder_groundtruth(self):
        near = PlaneSpec(0.5, TextureSpec(seed=1), (4, 6, 10, 12))
        far = PlaneSpec(2.0, TextureSpec(seed=2))
        spec = SceneSpec((near, far), self.intr, seed=3, frame=FRAME)
        _, gt = render_lightfield(spec)
        d_near, d_far = spec.disparities
        self.assertGreater(d_near, d_far)
        assert_allclose(gt.values[4:14, 6:18], d_near)
        self.assertAlmostEqual(gt.values[0, 0], d_far)
        self.assertAlmostEqual(gt.values[20, 25], d_far)

    def test_render_is_deterministic(self):
        lf_a, gt_a = render_lightfield(self.single)
        lf_b, gt_b = render_lightfield(self.single)
        assert_array_equal(lf_a.samples, lf_b.samples)
        assert_array_equal(gt_a.values, gt_b.values)

    def test_dropout_invalidates_pixels(self):
        spec = SceneSpec(self.single.planes, self.intr, seed=5, frame=(40, 40), dropout=0.5)
        _, gt = render_lightfield(spec)
        self.assertTrue(0.35 < gt.mask.mean() < 0.65)
        self.assertTrue(np.all(gt.values[~gt.mask] == 0))

    def test_small_patch_rejected(self):
        patch = np.full((FRAME[0], FRAME[1], 3), 0.5)
        spec = SceneSpec((PlaneSpec(0.5, TextureSpec(patch=patch)),), self.intr, seed=0, frame=FRAME)
        with self.assertRaises(DomainError):
            render_lightfield(spec)

    def test_depths_must_increase(self):
        planes = (PlaneSpec(2.0, TextureSpec(seed=1), (0, 0, 4, 4)), PlaneSpec(1.0, TextureSpec(seed=2)))
        with self.assertRaises(DomainError):
            SceneSpec(planes, self.intr, seed=0, frame=FRAME)

    def test_dict_round_trip_renders_identically(self):
        near = PlaneSpec(0.6, TextureSpec(seed=8), (2, 2, 8, 9))
        spec = SceneSpec((near, PlaneSpec(3.0, TextureSpec(seed=9))), self.intr, seed=4, frame=FRAME)
        copy = SceneSpec.from_dict(spec.to_dict())
        assert_array_equal(render_lightfield(copy)[0].samples, render_lightfield(spec)[0].samples)


class RandomSceneTestCase(SimpleTestCase):
    """Scènes aléatoires déterministes"""

    def setUp(self):
        self.intr = lytro_intrinsics(5)

    def test_same_seed_same_scene(self):
        a = make_random_scene(42, 3, (0.5, 7.0), self.intr, frame=FRAME)
        b = make_random_scene(42, 3, (0.5, 7.0), self.intr, frame=FRAME)
        self.assertEqual(a.to_dict(), b.to_dict())
        c = make_random_scene(43, 3, (0.5, 7.0), self.intr, frame=FRAME)
        self.assertNotEqual(a.to_dict(), c.to_dict())

    def test_layout(self):
        spec = make_random_scene(7, 3, (0.5, 7.0), self.intr, frame=FRAME)
        depths = [p.depth_m for p in spec.planes]
        self.assertEqual(depths, sorted(depths))
        self.assertIsNone(spec.planes[-1].region)
        self.assertGreaterEqual(min(visible_fractions(spec.planes, FRAME)), 0.05)

    def test_disparity_levels(self):
        levels = np.linspace(0.28, 0.02, 10)
        spec = make_random_scene(1, 3, (0.5, 7.0), self.intr, frame=FRAME, disparity_levels=levels)
        for d in spec.disparities:
            self.assertLess(np.min(np.abs(levels - d)), 1e-9)

    def test_too_few_levels(self):
        with self.assertRaises(SceneGenerationError):
            make_random_scene(1, 3, (0.5, 7.0), self.intr, frame=FRAME, disparity_levels=[0.1, 0.05])

    def test_invalid_arguments(self):
        with self.assertRaises(ParameterError):
            make_random_scene(1, 0, (0.5, 7.0), self.intr)
        with self.assertRaises(DomainError):
            make_random_scene(1, 2, (7.0, 0.5), self.intr)
        with self.assertRaises(DomainError):
            make_random_scene(1, 2, (0.0, 0.5), self.intr)


class RefocusRoundTripTestCase(SimpleTestCase):
    """Rendu puis refocus : le plan revient net"""

    def test_single_plane_scenes(self):
        intr = lytro_intrinsics(5)
        for seed in range(20):
            spec = make_random_scene(100 + seed, 1, (0.5, 7.0), intr, frame=FRAME)
            lf, gt = render_lightfield(spec)
            d = gt.values[0, 0]
            margin = max(1, shift_margin(intr, d))
            image = refocus_at_disparity(lf, d)
            center = lf.samples[2, 2]
            error = (image - center)[margin:-margin, margin:-margin]
            self.assertLess(float(np.sqrt(np.mean(error ** 2))), 1e-3, f"seed={100 + seed}")

    def test_near_plane_is_sharpest_at_its_disparity(self):
        """Décalages entiers pour le plan proche (d = 1 sur une grille 3×3)"""
        intr = lytro_intrinsics(3)
        near = PlaneSpec(depth_from_disparity(1.0, intr), TextureSpec(seed=31), (16, 16, 48, 48))
        far = PlaneSpec(depth_from_disparity(0.25, intr), TextureSpec(seed=32))
        lf, _ = render_lightfield(SceneSpec((near, far), intr, seed=30, frame=(80, 80)))
        stack = synthesize_stack(lf, 1.0, 0.25, 4)
        sharpness = []
        for image in stack.slices:
            laplacian = ndimage.laplace(image.mean(axis=2))
            sharpness.append(float(np.sum(laplacian[32:48, 32:48] ** 2)))
        self.assertEqual(int(np.argmax(sharpness)), 0)
        self.assertTrue(all(s < sharpness[0] for s in sharpness[1:]))
