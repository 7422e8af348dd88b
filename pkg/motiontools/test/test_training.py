# -*- coding: utf-8 -*-

import numpy as np

from motiontools.test import unittesthelper as uth
import unittest

from motiontools import training as tr
from motiontools.motionnet import MotionNetConfig, MotionNet
from motiontools.losses import LossConfig
from motiontools.config import TrainConfig
from motiontools.synthdata import make_pair_dataset, make_mixed_dataset
from motiontools.auxiliary import ConfigurationError, InputError, DivergenceError

MICRO = MotionNetConfig(input_frames=2, base_channels=4, max_channels=16, levels=4)
LOSS = LossConfig(ssim_window=2, ssim_stride=2)


class TestBatches(unittest.TestCase):

    def test_batch_indices_are_pure(self):
        a = tr.batch_indices(10, 4, seed=3, step=7)
        b = tr.batch_indices(10, 4, seed=3, step=7)
        np.testing.assert_array_equal(a, b)
        self.assertEqual(len(set(a.tolist())), 4)
        self.assertTrue(np.all(np.diff(a) > 0))
        others = [tr.batch_indices(10, 4, seed=3, step=s).tolist() for s in range(8, 20)]
        self.assertTrue(any(o != a.tolist() for o in others))

    def test_small_dataset(self):
        np.testing.assert_array_equal(tr.batch_indices(3, 8, 0, 1), [0, 1, 2])
        with self.assertRaises(InputError):
            tr.batch_indices(0, 4, 0, 1)

    def test_batch_frames(self):
        data = make_pair_dataset(3, extent=16, max_disp=2)
        frames = tr.batch_frames(data, [0, 2])
        self.assertEqual(frames.shape, (2, 6, 16, 16))
        np.testing.assert_array_equal(frames.data[1, 3:6], data[2].frames[1])


class TestMetricsLog(uth.TempDirMixin, unittest.TestCase):

    def test_append_and_read(self):
        log = tr.MetricsLog(self.tmp("metrics.log"))
        log.write(dict(step=1, total=0.5))
        log.write(dict(step=2, total=0.25))
        self.assertEqual(tr.read_metrics(self.tmp("metrics.log")), [dict(step=1, total=0.5), dict(step=2, total=0.25)])


class TestTrainMotionNet(uth.TempDirMixin, unittest.TestCase):

    def setUp(self):
        super().setUp()
        self.dataset = make_pair_dataset(4, seed=1, extent=32, max_disp=2)

    def test_history_and_log(self):
        log = tr.MetricsLog(self.tmp("metrics.log"))
        calls = []
        res = tr.train_motionnet(MotionNet(MICRO), self.dataset, LOSS, TrainConfig(steps=3, batch_size=2),
                                 log=log, on_step=lambda step, opt: calls.append((step, opt.t)))
        self.assertEqual(res.step, 3)
        self.assertEqual(calls, [(1, 1), (2, 2), (3, 3)])
        entries = tr.read_metrics(self.tmp("metrics.log"))
        self.assertEqual([e["step"] for e in entries], [1, 2, 3])
        for key in ("total", "pixel", "smooth", "ssim", "wall_time"):
            self.assertIn(key, entries[0])
        self.assertAlmostEqual(entries[0]["total"], entries[0]["pixel"] + entries[0]["smooth"]
                               + entries[0]["ssim"], places=10)

    def test_same_seed_same_trajectory(self):
        cfg = TrainConfig(steps=2, batch_size=2)
        a = tr.train_motionnet(MotionNet(MICRO, seed=2), self.dataset, LOSS, cfg)
        b = tr.train_motionnet(MotionNet(MICRO, seed=2), self.dataset, LOSS, cfg)
        self.assertEqual([e["total"] for e in a.history], [e["total"] for e in b.history])

    def test_divergence(self):
        model = MotionNet(MICRO)
        name = list(model.params)[0]
        model.params[name].data = model.params[name].data * np.nan
        with self.assertRaises(DivergenceError) as cm:
            tr.train_motionnet(model, self.dataset, LOSS, TrainConfig(steps=2, batch_size=2))
        self.assertEqual(cm.exception.step, 1)
        msg = str(cm.exception)
        self.assertTrue(msg.startswith("training diverged at step 1: non-finite value in layer "), msg=msg)
        self.assertNotIn("loss =", msg)


class TestAblation(unittest.TestCase):

    def test_row_names(self):
        full = dict.fromkeys(tr.TOGGLES, True)
        self.assertEqual(tr.row_name(full), "full")
        self.assertEqual(tr.row_name(dict.fromkeys(tr.TOGGLES, False)), "none")
        self.assertEqual(tr.row_name(dict(full, cdc=False)), "no-cdc")
        flags = dict.fromkeys(tr.TOGGLES, False)
        flags.update(ssim=True, multiscale=True)
        self.assertEqual(tr.row_name(flags), "ssim+multiscale")

    def test_parse_inverts_row_name(self):
        for name, flags in tr.ablation_grid():
            self.assertEqual(tr.parse_row_name(name), flags)
        with self.assertRaises(ConfigurationError):
            tr.parse_row_name("no-dropout")
        with self.assertRaises(ConfigurationError):
            tr.parse_row_name("ssim+dropout")

    def test_grid(self):
        grid = tr.ablation_grid()
        self.assertEqual(len(grid), 32)
        self.assertEqual(len({name for name, _ in grid}), 32)
        self.assertEqual(grid[0][0], "full")
        self.assertEqual([name for name, _ in tr.ablation_grid(["none", "full"])], ["none", "full"])

    def test_apply_toggles(self):
        flags = tr.parse_row_name("no-smoothness")
        net, loss = tr.apply_toggles(MICRO, LOSS, flags)
        self.assertEqual((net.use_small_disp, net.use_cdc, net.use_multiscale), (True, True, True))
        self.assertEqual((loss.lambda2, loss.lambda3), (0.0, LOSS.lambda3))
        net, loss = tr.apply_toggles(MICRO, LOSS, tr.parse_row_name("none"))
        self.assertEqual((net.use_small_disp, net.use_cdc, net.use_multiscale), (False, False, False))
        self.assertEqual((loss.lambda1, loss.lambda2, loss.lambda3), (LOSS.lambda1, 0.0, 0.0))

    def test_homogeneous_variance(self):
        data = make_mixed_dataset(2, extent=32, max_disp=2)
        self.assertIsNotNone(tr.homogeneous_flow_variance(MotionNet(MICRO), data))
        self.assertIsNone(tr.homogeneous_flow_variance(MotionNet(MICRO), data[:1]))

    def test_format_table(self):
        row = dict(name="full", epe=1.23456, fl=5.0)
        row.update(dict.fromkeys(tr.TOGGLES, True))
        table = tr.format_ablation_table([row])
        self.assertIn("1.2346", table)
        self.assertEqual(len(table.splitlines()), 2)

    @uth.skip_slow
    def test_run_ablation_rows(self):
        train_set = make_mixed_dataset(8, seed=0, extent=32, max_disp=2)
        eval_set = make_mixed_dataset(4, seed=1, extent=32, max_disp=2)
        rows = tr.run_ablation(MICRO, LOSS, TrainConfig(steps=20, batch_size=4, learning_rate=1e-3), train_set,
                               eval_set, subset=["full", "none", "no-ssim"])
        self.assertEqual([r["name"] for r in rows], ["full", "none", "no-ssim"])
        for row in rows:
            self.assertTrue(np.isfinite(row["epe"]))
            self.assertIsNotNone(row["homogeneous_variance"])


if __name__ == '__main__':
    unittest.main()
