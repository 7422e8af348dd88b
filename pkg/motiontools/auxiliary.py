"""
This module contains some basic helper functions and the exception types of the package.
"""


class Container(object):
    """General purpose container class to conveniently store data attributes
    """

    def __init__(self, **kwargs):
        assert len( set(dir(self)).intersection(list(kwargs.keys())) ) == 0
        self.__dict__.update(kwargs)


# All errors derive from builtin exceptions: code which catches `ValueError` keeps working.

class ConfigurationError(ValueError):
    """
    Invalid configuration or incompatible shapes. `key` optionally holds the config key path.
    """

    def __init__(self, msg, key=None):
        super().__init__(msg)
        self.key = key


class InputError(ValueError):
    pass


class FlowFileError(ValueError):
    """
    Malformed `.flo` file. `offset` is the byte position where parsing failed.
    """

    def __init__(self, msg, offset=None):
        if offset is not None:
            msg = "{} (at byte offset {})".format(msg, offset)
        super().__init__(msg)
        self.offset = offset


class CheckpointError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class DivergenceError(NonFiniteError):
    """
    Raised when a training loss becomes NaN or Inf. `step` is the (1-based) step number.
    """

    def __init__(self, step, loss_value=None, detail=None):
        msg = "training diverged at step {}".format(step)
        if loss_value is not None:
            msg += " (loss = {})".format(loss_value)
        if detail is not None:
            msg += ": " + detail
        super().__init__(msg)
        self.step = step


def check_shape(name, shape, expected):
    """
    Compare an actual shape with an expected one. `None` entries in `expected` match anything.

    :param name:        name used in the error message
    :param shape:       actual shape (tuple)
    :param expected:    expected shape (tuple, may contain None)
    """
    shape = tuple(shape)
    if len(shape) != len(expected) or \
            any(e is not None and e != s for s, e in zip(shape, expected)):
        exp_str = "x".join("?" if e is None else str(e) for e in expected)
        msg = "{}: expected shape {} but got {}".format(name, exp_str, "x".join(map(str, shape)))
        raise ConfigurationError(msg)
