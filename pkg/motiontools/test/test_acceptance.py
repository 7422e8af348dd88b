# -*- coding: utf-8 -*-
"""
Desk-scale training runs (several minutes up to half an hour of CPU time each). They only run with
the `all` flag, see unittesthelper.
"""

from motiontools.test import unittesthelper as uth
import unittest

from motiontools.motionnet import MotionNetConfig, MotionNet
from motiontools.losses import LossConfig
from motiontools.config import TrainConfig
from motiontools.synthdata import make_pair_dataset, make_mixed_dataset, make_clip_dataset
from motiontools.flowtools import evaluate_dataset, zero_predictor
from motiontools import training as tr
from motiontools import stacking as st


class TestFlowLearning(unittest.TestCase):

    @uth.skip_slow
    def test_translation_pairs(self):
        train_set = make_pair_dataset(256, seed=0, extent=64, max_disp=5)
        eval_set = make_pair_dataset(32, seed=1, extent=64, max_disp=5)
        model = MotionNet(MotionNetConfig(input_frames=2, base_channels=16, levels=6), seed=0)
        tr.train_motionnet(model, train_set, LossConfig(), TrainConfig(steps=3000, batch_size=4))

        self.assertGreaterEqual(evaluate_dataset(zero_predictor, eval_set).mean_epe, 2.5)
        self.assertLess(evaluate_dataset(model, eval_set).mean_epe, 1.0)

    @uth.skip_slow
    def test_good_practices_help(self):
        net_cfg = MotionNetConfig(input_frames=2, base_channels=8, max_channels=64, levels=5)
        loss_cfg = LossConfig(ssim_window=4, ssim_stride=4)
        subset = ["full", "no-smoothness", "no-ssim"]

        def passes(seed):
            train_set = make_mixed_dataset(128, seed=seed, extent=64, max_disp=4)
            eval_set = make_mixed_dataset(16, seed=seed + 100, extent=64, max_disp=4)
            rows = tr.run_ablation(net_cfg, loss_cfg, TrainConfig(steps=1500, batch_size=4, seed=seed),
                                   train_set, eval_set, subset=subset)
            by_name = {row["name"]: row for row in rows}
            full = by_name["full"]
            return (full["epe"] < by_name["no-smoothness"]["epe"] and full["epe"] < by_name["no-ssim"]["epe"]
                    and full["homogeneous_variance"] < by_name["no-smoothness"]["homogeneous_variance"])

        # best of three seeds
        self.assertTrue(any(passes(seed) for seed in range(3)))


class TestStackedClassifier(unittest.TestCase):

    @uth.skip_slow
    def test_fine_tune_modes(self):
        net_cfg = MotionNetConfig(input_frames=3, base_channels=8, max_channels=32, levels=3)
        loss_cfg = LossConfig(delta=(0.32, 0.08), ssim_window=4, ssim_stride=4)
        train_set = make_clip_dataset(100, seed=0, frames=3, extent=32)
        eval_set = make_clip_dataset(40, seed=1, frames=3, extent=32)

        pretrained = MotionNet(net_cfg, seed=0)
        tr.train_motionnet(pretrained, train_set, loss_cfg, TrainConfig(steps=1500, batch_size=4, learning_rate=1e-3))
        weights = pretrained.state_dict()

        stacked_cfg = st.StackedConfig(head_width=16)
        accuracies = {}
        for mode in st.FineTuneMode:
            model = MotionNet(net_cfg)
            model.load_state_dict(weights)
            head = st.build_head(model, stacked_cfg, seed=1)
            st.train_stacked(model, head, train_set, mode, stacked_cfg, loss_cfg,
                             TrainConfig(task="stacked", steps=2000, batch_size=8, learning_rate=1e-3))
            accuracies[mode] = st.evaluate_stack(model, head, eval_set)
            if mode is st.FineTuneMode.FIXED_MOTIONNET:
                for name, value in weights.items():
                    self.assertEqual(model.params[name].data.tobytes(), value.tobytes())

        # ordering is reported only
        ranking = sorted(accuracies, key=accuracies.get, reverse=True)
        print("fine-tune accuracy: " + " >= ".join("{} {:.3f}".format(m.value, accuracies[m]) for m in ranking))

        for mode, accuracy in accuracies.items():
            self.assertGreaterEqual(accuracy, 0.95, msg=str(mode))


if __name__ == '__main__':
    unittest.main()
