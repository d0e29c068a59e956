"""
Tests du modèle de light-field et de la géométrie disparité / profondeur.
"""
import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from depth_manager.exceptions import DomainError, ParameterError, ShapeError
from depth_manager.lightfield_core import (
    CameraIntrinsics,
    DepthMap,
    DisparityMap,
    LightField,
    MainLens,
    crop_central_grid,
    depth_from_disparity,
    depth_map_to_disparity,
    disparity_from_depth,
    disparity_map_to_depth,
    microlens_intrinsics,
    lytro_intrinsics,
    subaperture,
    valid_subaperture_mask,
)


class GeometryTestCase(SimpleTestCase):
    """Conversion profondeur ↔ disparité"""

    def setUp(self):
        self.intr = lytro_intrinsics()

    def test_known_disparities(self):
        self.assertAlmostEqual(disparity_from_depth(0.5, self.intr), 0.2816, places=4)
        self.assertAlmostEqual(disparity_from_depth(7.0, self.intr), 0.0201, places=4)

    def test_round_trip(self):
        depths = np.array([0.3, 0.5, 1.0, 2.5, 7.0])
        back = depth_from_disparity(disparity_from_depth(depths, self.intr), self.intr)
        assert_allclose(back, depths, rtol=1e-12)

    def test_scalar_in_scalar_out(self):
        self.assertIsInstance(disparity_from_depth(1.0, self.intr), float)

    def test_non_positive_inputs_rejected(self):
        for bad in (0.0, -1.0, np.nan):
            with self.assertRaises(DomainError):
                disparity_from_depth(bad, self.intr)
        for bad in (0.0, -0.1, np.inf):
            with self.assertRaises(DomainError):
                depth_from_disparity(bad, self.intr)

    def test_map_conversion_keeps_mask(self):
        """Les pixels invalides restent invalides après conversion"""
        values = np.array([[0.28, 0.0], [0.14, 0.02]])
        dmap = DisparityMap(values)
        depth = disparity_map_to_depth(dmap, self.intr)
        assert_array_equal(depth.mask, [[True, False], [True, True]])
        self.assertEqual(depth.values[0, 1], 0.0)
        back = depth_map_to_disparity(depth, self.intr)
        assert_allclose(back.values, values, rtol=1e-12)


class IntrinsicsTestCase(SimpleTestCase):
    """Intrinsèques des microlentilles et grille de sous-ouvertures"""

    def test_microlens_from_main_lens(self):
        micro = microlens_intrinsics(lytro_intrinsics().main_lens)
        self.assertAlmostEqual(micro.focal_length_px, 521.4, places=1)
        self.assertAlmostEqual(micro.c_x, 285.11, places=2)
        self.assertAlmostEqual(micro.c_y, 187.83, places=2)

    def test_inconsistent_main_lens_rejected(self):
        with self.assertRaises(DomainError):
            CameraIntrinsics(400.0, 27e-5, 9, 9, main_lens=MainLens(7299.7, 7317.0, 3991.6, 2629.6, 7.0))

    def test_zero_radius_rejected(self):
        with self.assertRaises(DomainError):
            microlens_intrinsics(MainLens(1.0, 1.0, 1.0, 1.0, 0.0))

    def test_grid_center(self):
        intr = lytro_intrinsics(9)
        self.assertEqual((intr.center_u, intr.center_v), (4.0, 4.0))

    def test_dict_round_trip(self):
        intr = lytro_intrinsics(13)
        self.assertEqual(CameraIntrinsics.from_dict(intr.to_dict()), intr)

    def test_valid_subaperture_count(self):
        """Règle stricte i² + j² < (r − 1)² sur la grille brute 13×13 avec r = 7"""
        mask = valid_subaperture_mask(7)
        self.assertEqual(mask.shape, (13, 13))
        self.assertEqual(int(mask.sum()), 109)
        self.assertTrue(mask[6, 6])
        self.assertFalse(mask[0, 0])
        # symétrie par rapport au centre
        assert_array_equal(mask, mask[::-1, ::-1])

    def test_small_radius_rejected(self):
        with self.assertRaises(ParameterError):
            valid_subaperture_mask(1)


class LightFieldTestCase(SimpleTestCase):
    """Conteneur light-field et accès aux sous-ouvertures"""

    def setUp(self):
        self.intr = lytro_intrinsics(5)
        rng = np.random.default_rng(0)
        self.samples = rng.uniform(0, 1, size=(5, 5, 8, 10, 3))
        self.lf = LightField(self.samples, self.intr)

    def test_properties(self):
        self.assertEqual((self.lf.height, self.lf.width, self.lf.channels), (8, 10, 3))

    def test_samples_read_only(self):
        with self.assertRaises(ValueError):
            self.lf.samples[0, 0, 0, 0, 0] = 0.5

    def test_subaperture(self):
        assert_array_equal(subaperture(self.lf, 1, 3), self.samples[1, 3])

    def test_subaperture_out_of_range(self):
        with self.assertRaises(IndexError):
            subaperture(self.lf, 5, 0)
        with self.assertRaises(IndexError):
            subaperture(self.lf, 0, -1)

    def test_invalid_samples_rejected(self):
        with self.assertRaises(ShapeError):
            LightField(self.samples[0], self.intr)
        with self.assertRaises(DomainError):
            LightField(self.samples * 2.0 + 0.5, self.intr)
        with self.assertRaises(ShapeError):
            LightField(self.samples[:4], self.intr)

    def test_crop_central_grid(self):
        cropped = crop_central_grid(self.lf, 3)
        self.assertEqual(cropped.intrinsics.grid_u, 3)
        self.assertEqual(cropped.intrinsics.center_u, 1.0)
        assert_array_equal(cropped.samples[1, 1], self.samples[2, 2])

    def test_crop_rejects_off_center(self):
        with self.assertRaises(ParameterError):
            crop_central_grid(self.lf, 4)


class MapTestCase(SimpleTestCase):
    """Cartes de disparité et de profondeur"""

    def test_default_mask(self):
        dmap = DisparityMap(np.array([[0.1, np.nan], [0.0, -0.2]]))
        assert_array_equal(dmap.mask, [[True, False], [False, False]])
        self.assertTrue(np.all(np.isfinite(dmap.values)))

    def test_explicit_mask_keeps_negative_values(self):
        values = np.array([[-0.1, 0.2]])
        dmap = DisparityMap(values, np.ones((1, 2), dtype=bool))
        assert_array_equal(dmap.values, values)

    def test_depth_must_be_positive_where_valid(self):
        with self.assertRaises(DomainError):
            DepthMap(np.array([[1.0, -1.0]]), np.ones((1, 2), dtype=bool))

    def test_mask_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            DisparityMap(np.zeros((2, 2)), np.ones((2, 3), dtype=bool))
