# -*- coding: utf-8 -*-
"""
Run configuration: INI style files with the sections [motionnet], [loss], [stacked], [data] and
[train]. Missing keys take their defaults; unknown sections or keys are rejected.

Example:

    [motionnet]
    input_frames = 2
    levels = 4

    [train]
    steps = 10
"""

import os
import configparser
from collections import OrderedDict
from dataclasses import dataclass, fields, replace

from .motionnet import MotionNetConfig
from .losses import LossConfig
from .stacking import StackedConfig
from .synthdata import DataConfig, CLASSES
from .auxiliary import ConfigurationError

OUTPUT_DIR_ENV = "MOTIONTOOLS_OUTPUT_DIR"


@dataclass
class TrainConfig:
    """
    task:       "motionnet" (unsupervised flow training) or "stacked" (fine-tuning with a classifier head)
    init_from:  optional checkpoint with MotionNet weights to start from
    """
    task: str = "motionnet"
    steps: int = 3000
    learning_rate: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    checkpoint_every: int = 1000
    output_dir: str = "motiontools_run"
    init_from: str = ""

    def validate(self):
        if self.task not in ("motionnet", "stacked"):
            raise ConfigurationError("unknown task {!r}".format(self.task), key="train.task")
        for name in ("steps", "batch_size", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError("{} must be positive".format(name), key="train." + name)
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive", key="train.learning_rate")
        return self


SECTIONS = OrderedDict([("motionnet", MotionNetConfig), ("loss", LossConfig), ("stacked", StackedConfig),
                        ("data", DataConfig), ("train", TrainConfig)])


def _convert(raw, default, key):
    """
    Convert the string `raw` to the type of `default`.
    """
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            states = configparser.ConfigParser.BOOLEAN_STATES
            if raw.lower() not in states:
                raise ValueError("not a boolean: {!r}".format(raw))
            return states[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [item.strip() for item in raw.split(",") if item.strip()]
            element_type = type(default[0]) if default else str
            return tuple(element_type(item) for item in items)
    except ValueError as err:
        raise ConfigurationError("invalid value for {}: {}".format(key, err), key=key)
    return raw


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


class RunConfig(object):

    def __init__(self, **sections):
        for name, cls in SECTIONS.items():
            setattr(self, name, sections.pop(name, None) or cls())
        if sections:
            msg = "unknown config sections: {}".format(", ".join(sections))
            raise ConfigurationError(msg, key=sorted(sections)[0])

    # --- reading

    @classmethod
    def from_parser(cls, parser):
        sections = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigurationError("unknown config section [{}]".format(section), key=section)
            section_cls = SECTIONS[section]
            defaults = section_cls()
            known = {f.name for f in fields(section_cls)}
            values = {}
            for key, raw in parser.items(section):
                key_path = "{}.{}".format(section, key)
                if key not in known:
                    raise ConfigurationError("unknown config key {}".format(key_path), key=key_path)
                values[key] = _convert(raw, getattr(defaults, key), key_path)
            sections[section] = replace(defaults, **values)
        return cls(**sections)

    @classmethod
    def from_string(cls, text):
        parser = configparser.ConfigParser(interpolation=None, default_section="__no_default_section__")
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigurationError("malformed config: {}".format(err))
        return cls.from_parser(parser)

    @classmethod
    def from_file(cls, path):
        """
        Read and validate a config file. The environment variable MOTIONTOOLS_OUTPUT_DIR overrides
        [train] output_dir.
        """
        try:
            with open(path) as cfile:
                text = cfile.read()
        except OSError as err:
            raise ConfigurationError("cannot read config file {}: {}".format(path, err))
        res = cls.from_string(text)
        env_dir = os.environ.get(OUTPUT_DIR_ENV)
        if env_dir:
            res.train = replace(res.train, output_dir=env_dir)
        return res.validate()

    @classmethod
    def from_dict(cls, data):
        """
        inverse of `as_dict` (e.g. for configs stored in checkpoint metadata)
        """
        parser = configparser.ConfigParser(interpolation=None, default_section="__no_default_section__")
        parser.read_dict(data)
        return cls.from_parser(parser).validate()

    # --- checks

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()

        net, data = self.motionnet, self.data
        if data.extent % net.divisor:
            msg = "data extent {} must be divisible by 2**levels = {}".format(data.extent, net.divisor)
            raise ConfigurationError(msg, key="data.extent")
        if data.kind in ("pairs", "mixed") and net.input_frames != 2:
            msg = "dataset kind {!r} provides frame pairs, input_frames must be 2".format(data.kind)
            raise ConfigurationError(msg, key="motionnet.input_frames")
        if self.train.task == "stacked":
            if data.kind != "clips":
                raise ConfigurationError("task 'stacked' needs the dataset kind 'clips'", key="data.kind")
            if self.stacked.num_classes != len(CLASSES):
                msg = "the synthetic clips have {} classes".format(len(CLASSES))
                raise ConfigurationError(msg, key="stacked.num_classes")
        if net.use_multiscale and net.levels - 1 > len(self.loss.delta):
            msg = "{} flow scales need as many delta weights, got {}".format(net.levels - 1, len(self.loss.delta))
            raise ConfigurationError(msg, key="loss.delta")
        return self

    # --- writing

    def as_dict(self):
        res = OrderedDict()
        for name in SECTIONS:
            section = getattr(self, name)
            res[name] = OrderedDict((f.name, _format(getattr(section, f.name))) for f in fields(section))
        return res

    def dumps(self):
        lines = []
        for name, values in self.as_dict().items():
            lines.append("[{}]".format(name))
            lines.extend("{} = {}".format(key, value) for key, value in values.items())
            lines.append("")
        return "\n".join(lines)

    def dump(self, path):
        """
        Write the resolved config (all keys, defaults included).
        """
        with open(path, "w") as cfile:
            cfile.write(self.dumps())

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return "<RunConfig task={} steps={}>".format(self.train.task, self.train.steps)
