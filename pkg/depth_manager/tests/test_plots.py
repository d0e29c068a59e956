"""
Tests des sorties graphiques.
"""
import math
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from depth_manager.lightfield_core import DisparityMap
from depth_manager.plots import (
    badpix_frame,
    colorize_disparity,
    disparity_summary,
    plot_badpix_curves,
    plot_score_maps,
)


class SummaryTestCase(SimpleTestCase):

    def test_summary_of_valid_pixels(self):
        dmap = DisparityMap(np.array([[0.1, 0.2, 0.0], [0.3, 0.4, 0.5]]))
        summary = disparity_summary(dmap)
        self.assertAlmostEqual(summary["min"], 0.1)
        self.assertAlmostEqual(summary["median"], 0.3)
        self.assertAlmostEqual(summary["max"], 0.5)

    def test_empty_map(self):
        summary = disparity_summary(DisparityMap(np.zeros((2, 2))))
        self.assertTrue(all(math.isnan(v) for v in summary.values()))

    def test_colorize_range(self):
        rgb = colorize_disparity(np.array([[0.0, 0.14, 0.28, 1.0]]), 0.28)
        self.assertEqual(rgb.shape, (1, 4, 3))
        self.assertEqual(rgb.dtype, np.uint8)
        np.testing.assert_array_equal(rgb[0, 2], rgb[0, 3])


class FigureTestCase(SimpleTestCase):
    """Les figures sont écrites avec leurs données"""

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def test_badpix_figure_and_csv(self):
        frame = badpix_frame({"a": [(0.01, 80.0), (0.07, 20.0)], "b": [(0.01, 60.0), (0.07, 10.0)]})
        self.assertEqual(list(frame.columns), ["label", "tau", "badpix"])
        path = plot_badpix_curves(frame, self.tmp / "badpix.png")
        self.assertTrue(path.exists())
        self.assertEqual(len(pd.read_csv(self.tmp / "badpix.csv")), 4)

    def test_score_maps(self):
        maps = np.random.default_rng(0).normal(size=(3, 8, 8))
        path = plot_score_maps(maps, ["d=0.28", "d=0.15", "d=0.02"], self.tmp / "scores.png")
        self.assertTrue(path.exists())
        self.assertEqual(np.load(self.tmp / "scores.npy").shape, (3, 8, 8))
