# -*- coding: utf-8 -*-

from collections import OrderedDict

import numpy as np

from motiontools.test import unittesthelper as uth
import unittest

from motiontools import checkpoint_tools as ct
from motiontools.motionnet import MotionNetConfig, MotionNet
from motiontools.losses import LossConfig
from motiontools.optim import Adam
from motiontools.config import TrainConfig
from motiontools.stacking import TemporalHead
from motiontools.synthdata import make_pair_dataset
from motiontools.training import train_motionnet
from motiontools.auxiliary import CheckpointError

MICRO = MotionNetConfig(input_frames=2, base_channels=4, max_channels=16, levels=4)
LOSS = LossConfig(ssim_window=2, ssim_stride=2)


class TestCheckpointFormat(uth.TempDirMixin, unittest.TestCase):

    def test_roundtrip_is_bit_exact(self):
        rng = np.random.default_rng(0)
        tensors = OrderedDict([("b", rng.normal(size=(3, 4))), ("a", rng.normal(size=(2,))),
                               ("scalar", np.array(3.5)), ("empty", np.zeros((0, 3)))])
        path = self.tmp("x.mtck")
        ct.checkpoint_dump(path, tensors, dict(step=7, note="ü"))
        res = ct.checkpoint_load(path)
        self.assertEqual(list(res.tensors), ["b", "a", "scalar", "empty"])
        for name, arr in tensors.items():
            self.assertEqual(res.tensors[name].shape, arr.shape)
            self.assertEqual(res.tensors[name].tobytes(), arr.tobytes())
        self.assertEqual(res.metadata, dict(step=7, note="ü"))
        self.assertEqual(res.version, ct.VERSION)

    def test_header(self):
        path = self.tmp("x.mtck")
        ct.checkpoint_dump(path, {"w": np.ones(2)})
        with open(path, "rb") as cfile:
            self.assertEqual(cfile.read(4), b"MTCK")

    def test_corrupt_files(self):
        path = self.tmp("x.mtck")
        ct.checkpoint_dump(path, {"w": np.ones((3, 3))}, {"step": 1})
        with open(path, "rb") as cfile:
            data = cfile.read()

        cases = [b"XTCK" + data[4:], data[:-5], data[:6], data + b"\x00"]
        for i, broken in enumerate(cases):
            bad_path = self.tmp("bad{}.mtck".format(i))
            with open(bad_path, "wb") as cfile:
                cfile.write(broken)
            with self.assertRaises(CheckpointError):
                ct.checkpoint_load(bad_path)

    def test_unsupported_version(self):
        path = self.tmp("x.mtck")
        ct.checkpoint_dump(path, {})
        with open(path, "rb") as cfile:
            data = bytearray(cfile.read())
        data[4] = 99
        with open(path, "wb") as cfile:
            cfile.write(bytes(data))
        with self.assertRaises(CheckpointError) as cm:
            ct.checkpoint_load(path)
        self.assertIn("version", str(cm.exception))


class TestTrainingState(uth.TempDirMixin, unittest.TestCase):

    def test_model_and_head_roundtrip(self):
        model = MotionNet(MICRO, seed=0)
        head = TemporalHead(2, 5, width=4, seed=0)
        path = self.tmp("state.mtck")
        ct.save_training_state(path, model, head=head, step=12, metadata={"task": "stacked"})

        model2 = MotionNet(MICRO, seed=1)
        head2 = TemporalHead(2, 5, width=4, seed=1)
        ckpt = ct.load_training_state(path, model2, head=head2)
        self.assertEqual(ckpt.metadata["step"], 12)
        self.assertEqual(ckpt.metadata["task"], "stacked")
        for name, value in model.state_dict().items():
            self.assertEqual(model2.params[name].data.tobytes(), value.tobytes())
        for name, value in head.state_dict().items():
            self.assertEqual(head2.params[name].data.tobytes(), value.tobytes())

    def test_missing_optimizer_state(self):
        model = MotionNet(MICRO, seed=0)
        path = self.tmp("state.mtck")
        ct.save_training_state(path, model)
        with self.assertRaises(CheckpointError):
            ct.load_training_state(path, MotionNet(MICRO), Adam(model.named_parameters()))

    def test_resume_reproduces_uninterrupted_run(self):
        dataset = make_pair_dataset(4, seed=0, extent=32, max_disp=2)
        train_cfg = TrainConfig(steps=6, batch_size=2, learning_rate=1e-3)

        reference = train_motionnet(MotionNet(MICRO, seed=0), dataset, LOSS, train_cfg)

        first = train_motionnet(MotionNet(MICRO, seed=0), dataset, LOSS, TrainConfig(steps=3, batch_size=2,
                                                                                      learning_rate=1e-3))
        path = self.tmp("step3.mtck")
        ct.save_training_state(path, first.model, first.optimizer, step=first.step)

        model = MotionNet(MICRO, seed=5)
        optimizer = Adam(model.named_parameters(), lr=1e-3)
        ckpt = ct.load_training_state(path, model, optimizer)
        resumed = train_motionnet(model, dataset, LOSS, train_cfg, optimizer=optimizer,
                                  start_step=ckpt.metadata["step"])

        self.assertEqual([e["step"] for e in resumed.history], [4, 5, 6])
        for ref, res in zip(reference.history[3:], resumed.history):
            self.assertEqual(ref["total"], res["total"])
        for name, value in reference.model.state_dict().items():
            self.assertEqual(model.params[name].data.tobytes(), value.tobytes(), msg=name)


if __name__ == '__main__':
    unittest.main()
