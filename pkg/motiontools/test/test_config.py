# -*- coding: utf-8 -*-

import os
from unittest import mock

from motiontools.test import unittesthelper as uth
import unittest

from motiontools.config import RunConfig, TrainConfig, OUTPUT_DIR_ENV
from motiontools.auxiliary import ConfigurationError

SMALL = """
[motionnet]
input_frames = 2
base_channels = 4
max_channels = 16
levels = 4
use_cdc = false

[loss]
delta = 0.32, 0.08, 0.02
ssim_window = 2
ssim_stride = 2

[data]
extent = 32
textures = checker, flat

[train]
steps = 10
learning_rate = 0.001
"""


class TestRunConfig(uth.TempDirMixin, unittest.TestCase):

    def test_parse(self):
        cfg = RunConfig.from_string(SMALL).validate()
        self.assertEqual(cfg.motionnet.input_frames, 2)
        self.assertIs(cfg.motionnet.use_cdc, False)
        self.assertEqual(cfg.loss.delta, (0.32, 0.08, 0.02))
        self.assertEqual(cfg.data.textures, ("checker", "flat"))
        self.assertEqual(cfg.train.learning_rate, 0.001)
        # defaults
        self.assertEqual(cfg.train.batch_size, TrainConfig().batch_size)
        self.assertEqual(cfg.loss.alpha, 0.45)

    def test_unknown_key_and_section(self):
        with self.assertRaises(ConfigurationError) as cm:
            RunConfig.from_string("[loss]\nbeta = 1\n")
        self.assertEqual(cm.exception.key, "loss.beta")
        self.assertIn("loss.beta", str(cm.exception))
        with self.assertRaises(ConfigurationError) as cm:
            RunConfig.from_string("[optimizer]\nlr = 1\n")
        self.assertEqual(cm.exception.key, "optimizer")

    def test_invalid_values(self):
        with self.assertRaises(ConfigurationError) as cm:
            RunConfig.from_string("[train]\nsteps = many\n")
        self.assertEqual(cm.exception.key, "train.steps")
        with self.assertRaises(ConfigurationError) as cm:
            RunConfig.from_string("[motionnet]\nuse_cdc = maybe\n")
        self.assertEqual(cm.exception.key, "motionnet.use_cdc")
        with self.assertRaises(ConfigurationError):
            RunConfig.from_string("no section header")

    def test_dump_and_reload(self):
        cfg = RunConfig.from_string(SMALL)
        path = self.tmp("resolved.cfg")
        cfg.dump(path)
        with mock.patch.dict(os.environ, {OUTPUT_DIR_ENV: ""}):
            reloaded = RunConfig.from_file(path)
        self.assertEqual(reloaded, cfg)
        self.assertEqual(RunConfig.from_dict(cfg.as_dict()), cfg)
        self.assertNotEqual(RunConfig.from_string("[train]\nsteps = 11\n"), RunConfig.from_string(SMALL))

    def test_env_overrides_output_dir(self):
        path = self.tmp("run.cfg")
        with open(path, "w") as cfile:
            cfile.write(SMALL + "output_dir = from_file\n")
        with mock.patch.dict(os.environ, {OUTPUT_DIR_ENV: self.tmp("from_env")}):
            cfg = RunConfig.from_file(path)
        self.assertEqual(cfg.train.output_dir, self.tmp("from_env"))
        with mock.patch.dict(os.environ, {OUTPUT_DIR_ENV: ""}):
            cfg = RunConfig.from_file(path)
        self.assertEqual(cfg.train.output_dir, "from_file")

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            RunConfig.from_file(self.tmp("nonexistent.cfg"))

    def test_cross_checks(self):
        cases = [
            ("[motionnet]\ninput_frames = 2\n[data]\nextent = 40\n", "data.extent"),
            ("[motionnet]\ninput_frames = 3\n", "motionnet.input_frames"),
            ("[motionnet]\ninput_frames = 2\n[train]\ntask = stacked\n", "data.kind"),
            ("[motionnet]\ninput_frames = 3\n[data]\nkind = clips\n[train]\ntask = stacked\n"
             "[stacked]\nnum_classes = 4\n", "stacked.num_classes"),
            ("[motionnet]\ninput_frames = 2\n[loss]\ndelta = 0.3, 0.1\n", "loss.delta"),
            ("[motionnet]\ninput_frames = 2\n[train]\ntask = finetune\n", "train.task"),
            ("[motionnet]\ninput_frames = 2\n[train]\nlearning_rate = 0\n", "train.learning_rate"),
        ]
        for text, key in cases:
            with self.assertRaises(ConfigurationError, msg=text) as cm:
                RunConfig.from_string(text).validate()
            self.assertEqual(cm.exception.key, key, msg=text)

    def test_default_run_needs_matching_frames(self):
        # the default network reads 11 frame clips
        with self.assertRaises(ConfigurationError):
            RunConfig().validate()
        RunConfig.from_string("[data]\nkind = clips\n").validate()


if __name__ == '__main__':
    unittest.main()
