"""
Tests de persistance : codecs, datasets, light-fields, checkpoints, fusion.
"""
import json
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from depth_manager.data_io import (
    SceneRecord,
    StackRecord,
    load_checkpoint,
    load_dataset,
    load_lightfield,
    median_fuse,
    read_depth_png,
    read_disparity,
    read_pfm,
    read_png8,
    save_checkpoint,
    save_dataset,
    save_lightfield,
    write_depth_png,
    write_disparity,
    write_pfm,
    write_png8,
)
from depth_manager.ddffnet import NetworkSpec, build_network, default_dflf_pattern, forward
from depth_manager.exceptions import DatasetLoadError, ParameterError
from depth_manager.lightfield_core import DepthMap, DisparityMap, LightField, lytro_intrinsics
from depth_manager.training import TrainedModel


class TempDirMixin:

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)


class CodecTestCase(TempDirMixin, SimpleTestCase):
    """PFM, PNG 8 bits, profondeur 16 bits"""

    def test_pfm_round_trip(self):
        values = np.random.default_rng(0).normal(0, 1, size=(5, 7))
        path = self.tmp / "map.pfm"
        write_pfm(path, values)
        assert_array_equal(read_pfm(path), values.astype(np.float32))

    def test_pfm_layout(self):
        """Échelle négative (little-endian) et lignes du bas vers le haut"""
        values = np.array([[1.0, 2.0], [3.0, 4.0]])
        path = self.tmp / "map.pfm"
        write_pfm(path, values)
        raw = path.read_bytes()
        self.assertTrue(raw.startswith(b"Pf\n2 2\n-1.0\n"))
        first = struct.unpack("<f", raw[len(b"Pf\n2 2\n-1.0\n"):][:4])[0]
        self.assertEqual(first, 3.0)

    def test_pfm_big_endian_color(self):
        path = self.tmp / "color.pfm"
        floats = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        path.write_bytes(b"PF\n2 1\n1.0\n" + struct.pack(">6f", *floats))
        data = read_pfm(path)
        self.assertEqual(data.shape, (1, 2, 3))
        assert_array_equal(data[0, 1], [3.0, 4.0, 5.0])

    def test_pfm_errors(self):
        with self.assertRaises(DatasetLoadError):
            read_pfm(self.tmp / "absent.pfm")
        truncated = self.tmp / "short.pfm"
        truncated.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 8)
        with self.assertRaises(DatasetLoadError) as ctx:
            read_pfm(truncated)
        self.assertEqual(ctx.exception.path, str(truncated))
        self.assertIsInstance(ctx.exception, OSError)

    def test_png8_quantization(self):
        image = np.random.default_rng(1).uniform(0, 1, size=(6, 5, 3))
        path = self.tmp / "img.png"
        write_png8(path, image)
        back = read_png8(path)
        self.assertEqual(back.shape, (6, 5, 3))
        self.assertLessEqual(np.abs(back - image).max(), 0.5 / 255 + 1e-12)

    def test_png8_grayscale(self):
        path = self.tmp / "gray.png"
        write_png8(path, np.full((3, 4, 1), 1.0))
        assert_array_equal(read_png8(path), np.ones((3, 4, 1)))

    def test_depth_png(self):
        depth = DepthMap(np.array([[0.5, 0.0], [7.25, 1.0]]))
        path = self.tmp / "depth.png"
        write_depth_png(path, depth)
        back = read_depth_png(path)
        assert_array_equal(back.mask, depth.mask)
        assert_allclose(back.values, depth.values, atol=5e-4)

    def test_depth_png_clipping(self):
        path = self.tmp / "far.png"
        with self.assertLogs("depth_manager.data_io", level="WARNING"):
            write_depth_png(path, DepthMap(np.array([[70.0]])))
        self.assertAlmostEqual(read_depth_png(path).values[0, 0], 65.535)

    def test_disparity_invalid_pixels_as_zero(self):
        dmap = DisparityMap(np.array([[0.2, 0.1]]), np.array([[True, False]]))
        path = self.tmp / "disp.pfm"
        write_disparity(path, dmap)
        back = read_disparity(path)
        assert_array_equal(back.mask, [[True, False]])
        self.assertEqual(back.values[0, 1], 0.0)


class DatasetTestCase(TempDirMixin, SimpleTestCase):
    """Conteneur de dataset sur disque"""

    def setUp(self):
        super().setUp()
        rng = np.random.default_rng(2)
        self.intr = lytro_intrinsics()
        self.disparity = DisparityMap(rng.uniform(0.02, 0.28, size=(8, 10)))
        self.focal = StackRecord(
            slices=rng.uniform(0, 1, size=(3, 8, 10, 3)),
            focus_disparities=(0.28, 0.15, 0.02),
            disparity=self.disparity,
            intrinsics=self.intr,
            extra={"note": "scène de test"},
        )
        self.dflf = StackRecord(
            slices=rng.uniform(0, 1, size=(11, 8, 10, 3)),
            subaperture_indices=default_dflf_pattern(),
            disparity=self.disparity,
        )
        self.root = self.tmp / "dataset"
        save_dataset(self.root, [SceneRecord("scene_a", [self.focal]), SceneRecord("scene_b", [self.dflf])],
                     self.intr)

    def test_manifest(self):
        manifest = json.loads((self.root / "manifest.json").read_text(encoding="utf-8"))
        self.assertEqual(manifest["schema_version"], 1)
        self.assertEqual(manifest["scenes"][0], {"name": "scene_a", "stacks": ["scene_a/stack_0000"]})

    def test_load(self):
        dataset = load_dataset(self.root)
        self.assertEqual(len(dataset), 2)
        self.assertEqual(dataset.scenes, ["scene_a", "scene_b"])
        self.assertEqual(dataset.intrinsics, self.intr)
        focal, dflf = dataset.entries
        self.assertEqual((focal.kind, dflf.kind), ("focal", "dflf"))
        self.assertEqual(focal.focus_disparities, (0.28, 0.15, 0.02))
        self.assertEqual(dflf.subaperture_indices, default_dflf_pattern())
        self.assertEqual(focal.meta["extra"], {"note": "scène de test"})
        self.assertEqual(dflf.intrinsics, self.intr)

    def test_lazy_slices(self):
        entry = load_dataset(self.root).entries[0]
        self.assertEqual(entry.load_slices().shape, (3, 8, 10, 3))
        self.assertLessEqual(np.abs(entry.load_slice(1) - self.focal.slices[1]).max(), 0.5 / 255 + 1e-12)

    def test_disparity_exact(self):
        entry = load_dataset(self.root).entries[0]
        assert_array_equal(entry.load_disparity().values, self.disparity.values.astype(np.float32))

    def test_scene_filter(self):
        dataset = load_dataset(self.root)
        self.assertEqual([e.scene for e in dataset.stacks("scene_b")], ["scene_b"])

    def test_invalid_scene_name(self):
        with self.assertRaises(ParameterError):
            save_dataset(self.tmp / "other", [SceneRecord("scène/1", [self.focal])])

    def test_missing_file(self):
        (self.root / "scene_a" / "stack_0000" / "slice_01.png").unlink()
        with self.assertRaises(DatasetLoadError) as ctx:
            load_dataset(self.root)
        self.assertIn("slice_01.png", str(ctx.exception))

    def test_schema_mismatch(self):
        path = self.root / "manifest.json"
        manifest = json.loads(path.read_text(encoding="utf-8"))
        manifest["schema_version"] = 99
        path.write_text(json.dumps(manifest), encoding="utf-8")
        with self.assertRaises(DatasetLoadError):
            load_dataset(self.root)


class LightFieldContainerTestCase(TempDirMixin, SimpleTestCase):

    def test_round_trip(self):
        intr = lytro_intrinsics(3)
        samples = np.random.default_rng(3).uniform(0, 1, size=(3, 3, 4, 5, 3))
        directory = save_lightfield(self.tmp / "lf", LightField(samples, intr))
        self.assertTrue((directory / "sub_02_01.png").exists())
        lf = load_lightfield(directory)
        self.assertEqual(lf.intrinsics, intr)
        self.assertLessEqual(np.abs(lf.samples - samples).max(), 0.5 / 255 + 1e-12)


class CheckpointTestCase(TempDirMixin, SimpleTestCase):
    """Archive .npz : tenseurs nommés + méta-données JSON"""

    def setUp(self):
        super().setUp()
        spec = NetworkSpec("CC2", stack_size=3, width_multiplier=1.0 / 16)
        model = build_network(spec, seed=1)
        model.set_input_normalization([0.4, 0.5, 0.6], [0.2, 0.25, 0.3])
        self.trained = TrainedModel(spec, model, {"seed": 1, "best_epoch": 0}, [{"epoch": 0, "train_loss": 0.5}])
        self.batch = np.random.default_rng(4).uniform(0, 1, size=(1, 3, 16, 16, 3)).astype(np.float32)

    def test_round_trip_predictions(self):
        path = save_checkpoint(self.tmp / "model.npz", self.trained)
        loaded = load_checkpoint(path)
        self.assertEqual(loaded.spec, self.trained.spec)
        self.assertEqual(loaded.metadata["seed"], 1)
        self.assertEqual(loaded.history, self.trained.history)
        assert_allclose(loaded.normalization["input_mean"], [0.4, 0.5, 0.6], rtol=1e-6)
        assert_array_equal(forward(loaded.model, self.batch), forward(self.trained.model, self.batch))

    def test_tensors_are_little_endian_float32(self):
        path = save_checkpoint(self.tmp / "model.npz", self.trained)
        with np.load(path) as archive:
            self.assertEqual(archive["tensor:score.weight"].dtype, np.dtype("<f4"))
            self.assertIn("meta", archive.files)

    def test_corrupt_checkpoint(self):
        path = self.tmp / "broken.npz"
        path.write_bytes(b"not a zip archive")
        with self.assertRaises(DatasetLoadError):
            load_checkpoint(path)
        with self.assertRaises(DatasetLoadError):
            load_checkpoint(self.tmp / "absent.npz")


class MedianFuseTestCase(SimpleTestCase):

    def test_median_of_valid_samples(self):
        frames = [
            DepthMap(np.array([[1.0, 0.0]])),
            DepthMap(np.array([[3.0, 0.0]])),
            DepthMap(np.array([[2.0, 0.0]])),
        ]
        fused = median_fuse(frames)
        self.assertEqual(fused.values[0, 0], 2.0)
        self.assertFalse(fused.mask[0, 1])

    def test_missing_samples_skipped(self):
        frames = [DepthMap(np.array([[1.0]])), DepthMap(np.array([[0.0]])), DepthMap(np.array([[5.0]]))]
        self.assertEqual(median_fuse(frames).values[0, 0], 3.0)

    def test_too_many_frames(self):
        frames = [DepthMap(np.array([[float(k + 1)]])) for k in range(12)]
        with self.assertRaises(ParameterError):
            median_fuse(frames, n=9)

    def test_zeros_are_not_samples(self):
        samples = [0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 3.0, 9.0]
        fused = median_fuse([DepthMap(np.array([[v]])) for v in samples])
        self.assertEqual(fused.values[0, 0], 2.0)

    def test_frame_order_does_not_matter(self):
        rng = np.random.default_rng(6)
        values = rng.uniform(0.5, 7.0, size=(9, 4, 5))
        values[rng.uniform(size=values.shape) < 0.4] = 0.0
        frames = [DepthMap(v) for v in values]
        reference = median_fuse(frames)
        for _ in range(3):
            order = rng.permutation(9)
            fused = median_fuse([frames[k] for k in order])
            assert_array_equal(fused.values, reference.values)
            assert_array_equal(fused.mask, reference.mask)

    def test_empty_input(self):
        with self.assertRaises(ParameterError):
            median_fuse([])
