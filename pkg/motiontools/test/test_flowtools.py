# -*- coding: utf-8 -*-

import os
import struct
import hashlib

import numpy as np

from motiontools.test import unittesthelper as uth
import unittest

from motiontools import flowtools as ft
from motiontools import visualisation as vis
from motiontools.synthdata import make_pair_dataset, make_clip_dataset
from motiontools.auxiliary import InputError, FlowFileError


def fixture_bytes():
    """
    2x2 field with (u, v) = (1, 2), (3, 4) in the first row and (-1, 0.5), (0, -8) in the second
    """
    header = struct.pack("<fii", 202021.25, 2, 2)
    payload = struct.pack("<8f", 1, 2, 3, 4, -1, 0.5, 0, -8)
    return header + payload


def loop_epe(pred, gt):
    total = 0.0
    count = 0
    for m in range(pred.shape[0]):
        for i in range(pred.shape[2]):
            for j in range(pred.shape[3]):
                du = pred[m, 0, i, j] - gt[m, 0, i, j]
                dv = pred[m, 1, i, j] - gt[m, 1, i, j]
                total += (du * du + dv * dv) ** 0.5
                count += 1
    return total / count


def loop_fl(pred, gt):
    outliers = 0
    count = 0
    for m in range(pred.shape[0]):
        for i in range(pred.shape[2]):
            for j in range(pred.shape[3]):
                err = ((pred[m, 0, i, j] - gt[m, 0, i, j]) ** 2 + (pred[m, 1, i, j] - gt[m, 1, i, j]) ** 2) ** 0.5
                mag = (gt[m, 0, i, j] ** 2 + gt[m, 1, i, j] ** 2) ** 0.5
                if err > 3 and err > 0.05 * mag:
                    outliers += 1
                count += 1
    return 100.0 * outliers / count


class TestFloFiles(uth.TempDirMixin, unittest.TestCase):

    def test_parse_fixture(self):
        flow = ft.parse_flo(fixture_bytes())
        self.assertEqual(flow.shape, (1, 2, 2, 2))
        np.testing.assert_array_equal(flow[0, 0], [[1, 3], [-1, 0]])
        np.testing.assert_array_equal(flow[0, 1], [[2, 4], [0.5, -8]])

    def test_write_matches_fixture(self):
        path = self.tmp("fixture.flo")
        ft.write_flo(path, ft.parse_flo(fixture_bytes()))
        with open(path, "rb") as ffile:
            self.assertEqual(ffile.read(), fixture_bytes())

    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        path = self.tmp("field.flo")
        for _ in range(100):
            h, w = rng.integers(1, 9, 2)
            flow = rng.uniform(-50, 50, (2, h, w)).astype(np.float32).astype(np.float64)
            ft.write_flo(path, flow)
            res = ft.read_flo(path)
            self.assertEqual(res.shape, (1, 2, h, w))
            np.testing.assert_array_equal(res[0], flow)

    def test_corrupt_files(self):
        data = fixture_bytes()
        with self.assertRaises(FlowFileError) as cm:
            ft.parse_flo(b"XXXX" + data[4:])
        self.assertEqual(cm.exception.offset, 0)
        with self.assertRaises(FlowFileError):
            ft.parse_flo(data[:10])
        with self.assertRaises(FlowFileError) as cm:
            ft.parse_flo(data[:-4])
        self.assertIn("truncated", str(cm.exception))
        with self.assertRaises(FlowFileError):
            ft.parse_flo(data + b"\x00")
        with self.assertRaises(FlowFileError) as cm:
            ft.parse_flo(struct.pack("<fii", 202021.25, 0, 2))
        self.assertEqual(cm.exception.offset, 4)

    def test_write_rejects_stacks(self):
        with self.assertRaises(InputError):
            ft.write_flo(self.tmp("x.flo"), np.zeros((4, 3, 3)))


class TestMetrics(unittest.TestCase):

    def test_epe_of_single_vector(self):
        pred = np.zeros((2, 1, 1))
        gt = np.array([3.0, 4.0]).reshape(2, 1, 1)
        self.assertEqual(ft.epe(gt, pred), 5.0)

    def test_fl_thresholds(self):
        # error 3.5 > 3 px but below 5% of |gt| = 10.5 (no outlier)
        gt = np.array([210.0, 0.0]).reshape(2, 1, 1)
        pred = np.array([206.5, 0.0]).reshape(2, 1, 1)
        self.assertEqual(ft.fl_outliers(pred, gt), 0.0)
        # 0.5 px off: below 3 px
        gt = np.array([10.5, 0.0]).reshape(2, 1, 1)
        pred = np.array([10.0, 0.0]).reshape(2, 1, 1)
        self.assertEqual(ft.fl_outliers(pred, gt), 0.0)
        # exactly 5% of the magnitude is not an outlier
        gt = np.array([100.0, 0.0]).reshape(2, 1, 1)
        pred = np.array([95.0, 0.0]).reshape(2, 1, 1)
        self.assertEqual(ft.fl_outliers(pred, gt), 0.0)
        pred = np.array([94.0, 0.0]).reshape(2, 1, 1)
        self.assertEqual(ft.fl_outliers(pred, gt), 100.0)

    def test_against_loops(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            gt = rng.uniform(-20, 20, (3, 2, 5, 6))
            pred = gt + rng.normal(0, 4, gt.shape)
            self.assertAlmostEqual(ft.epe(pred, gt), loop_epe(pred, gt), delta=1e-12)
            self.assertAlmostEqual(ft.fl_outliers(pred, gt), loop_fl(pred, gt), delta=1e-12)

    def test_unknown_vectors_and_masks(self):
        gt = np.zeros((2, 2, 2))
        pred = np.ones((2, 2, 2))
        gt[:, 0, 0] = 1e10
        pred[:, 0, 0] = 0
        self.assertAlmostEqual(ft.epe(pred, gt), np.sqrt(2), delta=1e-15)
        mask = np.array([[False, True], [False, False]])
        self.assertAlmostEqual(ft.epe(pred, gt, mask), np.sqrt(2), delta=1e-15)
        with self.assertRaises(InputError):
            ft.epe(pred, gt, np.zeros((2, 2), dtype=bool))

    def test_shape_errors(self):
        with self.assertRaises(InputError):
            ft.epe(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))
        with self.assertRaises(InputError):
            ft.fl_outliers(np.zeros((3, 3, 3)), np.zeros((3, 3, 3)))


class TestEvaluation(unittest.TestCase):

    def setUp(self):
        self.dataset = make_pair_dataset(3, seed=2, extent=16, max_disp=3)

    def test_oracle_and_zero(self):
        report = ft.evaluate_dataset(ft.oracle_predictor, self.dataset)
        self.assertEqual((report.mean_epe, report.fl_percent, report.sample_count), (0.0, 0.0, 3))
        self.assertIsNone(report.accuracy)
        report = ft.evaluate_dataset(ft.zero_predictor, self.dataset)
        self.assertGreater(report.mean_epe, 0.0)

    def test_report_is_mean_of_samples(self):
        per_sample = [ft.evaluate_sample(ft.zero_predictor, s) for s in self.dataset]
        report = ft.evaluate_dataset(ft.zero_predictor, self.dataset, workers=3)
        self.assertAlmostEqual(report.mean_epe, np.mean([r[0] for r in per_sample]), delta=1e-12)
        self.assertAlmostEqual(report.fl_percent, np.mean([r[1] for r in per_sample]), delta=1e-12)

    def test_model_with_head_reports_accuracy(self):
        from motiontools.motionnet import MotionNetConfig, MotionNet
        from motiontools.stacking import TemporalHead

        clips = make_clip_dataset(2, frames=3, extent=16, speed=1.0)
        model = MotionNet(MotionNetConfig(input_frames=3, base_channels=4, max_channels=8, levels=2))
        head = TemporalHead(4, 5, width=4)
        report = ft.evaluate_dataset(model, clips, head=head)
        self.assertTrue(0 <= report.accuracy <= 1)
        self.assertIn("accuracy", report.format_table())
        self.assertEqual(set(report.as_dict()), {"mean_epe", "fl_percent", "sample_count", "accuracy"})
        with self.assertRaises(InputError):
            ft.evaluate_dataset(ft.oracle_predictor, clips, head=head)

    def test_empty(self):
        with self.assertRaises(InputError):
            ft.evaluate_dataset(ft.oracle_predictor, [])


class TestFlowColors(uth.TempDirMixin, unittest.TestCase):

    def test_wheel(self):
        wheel = vis.make_colorwheel()
        self.assertEqual(wheel.shape, (55, 3))
        np.testing.assert_array_equal(wheel[0], [255, 0, 0])

    def test_shape_and_dtype(self):
        img = vis.flow_to_color(np.random.default_rng(0).normal(size=(1, 2, 5, 7)))
        self.assertEqual(img.shape, (5, 7, 3))
        self.assertEqual(img.dtype, np.uint8)

    def test_positive_u_at_max_magnitude(self):
        flow = np.zeros((2, 1, 1))
        flow[0] = 4.0
        img = vis.flow_to_color(flow, max_mag=4.0)
        # the first wheel entry (red) at full saturation
        np.testing.assert_array_equal(img[0, 0], [255, 0, 0])

    def test_zero_flow_is_white(self):
        img = vis.flow_to_color(np.zeros((2, 3, 3)))
        self.assertTrue(np.all(img == 255))

    def test_hue_depends_on_direction(self):
        flow = np.zeros((2, 1, 4))
        flow[:, 0, 0] = (1, 0)
        flow[:, 0, 1] = (0, 1)
        flow[:, 0, 2] = (-1, 0)
        flow[:, 0, 3] = (0, -1)
        img = vis.flow_to_color(flow, max_mag=1.0)
        colors = {tuple(img[0, j]) for j in range(4)}
        self.assertEqual(len(colors), 4)
        self.assertEqual(vis.flow_to_color(flow, max_mag=1.0).tobytes(), img.tobytes())

    def test_rotating_field_covers_the_wheel(self):
        ys, xs = np.mgrid[-4:5, -4:5].astype(float)
        flow = np.stack([-ys, xs])
        img = vis.flow_to_color(flow, max_mag=8.0)

        u, v = flow
        fk = (np.arctan2(-v, -u) / np.pi + 1) / 2 * (vis.make_colorwheel().shape[0] - 1)
        moving = (u != 0) | (v != 0)
        segments = np.searchsorted(np.cumsum(vis.WHEEL_SEGMENTS), np.floor(fk[moving]), side="right")
        self.assertEqual(set(segments.tolist()), set(range(len(vis.WHEEL_SEGMENTS))))

        np.testing.assert_array_equal(img[4, 4], [255, 255, 255])
        np.testing.assert_array_equal(img[0, 0], [230, 74, 255])
        np.testing.assert_array_equal(img[0, 4], [255, 127, 127])
        np.testing.assert_array_equal(img[4, 8], [255, 242, 127])
        digest = hashlib.sha256(img.tobytes()).hexdigest()
        self.assertEqual(digest, "26a51dd452ffda8979b9c7ac96a1fc501888bbd3134fd591db804520af943964")

    def test_write_png(self):
        path = self.tmp("flow.png")
        vis.write_flow_png(path, np.ones((2, 4, 4)))
        self.assertTrue(os.path.exists(path))
        self.assertEqual(vis.load_image(path).shape, (3, 4, 4))


if __name__ == '__main__':
    unittest.main()
