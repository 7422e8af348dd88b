# -*- coding: utf-8 -*-

"""
Dense float64 tensors with reverse-mode differentiation on basis of numpy.

Every differentiable operation records a `Node` (inputs and backward rule) on the tensor it
creates (dynamic taping). `Tensor.backward()` collects all nodes which are reachable from the
output into a `ComputeGraph` (topological order) and evaluates the backward rules in reverse order.
Gradients of tensors which are consumed more than once are summed.

A graph is confined to the thread which created it. `no_grad()` is thread local.
"""

import threading
import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import auxiliary as aux
from .auxiliary import Container, ConfigurationError, NonFiniteError

_thread_state = threading.local()


def is_grad_enabled():
    return getattr(_thread_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """
    Context manager which disables the recording of operations (in the current thread).
    """
    old_value = is_grad_enabled()
    _thread_state.grad_enabled = False
    try:
        yield
    finally:
        _thread_state.grad_enabled = old_value


class Node(object):
    """
    One recorded operation: the input tensors and a rule mapping the output gradient to a tuple of
    input gradients (`None` for inputs which do not require a gradient).
    """
    __slots__ = ("inputs", "backward_rule", "name")

    def __init__(self, inputs, backward_rule, name):
        self.inputs = inputs
        self.backward_rule = backward_rule
        self.name = name

    def __repr__(self):
        return "<Node {} ({} inputs)>".format(self.name, len(self.inputs))


class Tensor(object):

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node = None

    # --- basic properties

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def node(self):
        return self._node

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return "Tensor(shape={}{})".format(self.shape, flag)

    def __len__(self):
        return self.shape[0]

    # --- differentiation

    def backward(self, grad=None):
        """
        Run reverse-mode differentiation from this tensor.

        :param grad:    gradient of the final objective w.r.t. this tensor
                        (default: 1.0, only allowed for tensors with one element)
        :return:        the ComputeGraph which was traversed
        """
        graph = ComputeGraph(self)
        graph.backward(grad)
        return graph

    # --- operators

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return power(self, 0.5)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def custom_op(data, inputs, backward_rule, name="custom"):
    """
    Create the output tensor of an operation and record it if some input requires a gradient.

    :param data:            result array (forward value)
    :param inputs:          sequence of input tensors
    :param backward_rule:   callable g -> tuple of gradients (one per input, same shapes, or None)
    :param name:            operation name (for diagnostics)
    :return:                Tensor
    """
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(tuple(inputs), backward_rule, name)
    return out


class ComputeGraph(object):
    """
    Topologically ordered list of the recorded nodes which contribute to `output`.
    """

    def __init__(self, output):
        self.output = output
        self.tensors = self._topological_order(output)

    @staticmethod
    def _topological_order(output):
        # iterative post-order DFS (deep graphs would exceed the recursion limit)
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for inp in reversed(tensor._node.inputs):
                    if inp.requires_grad and id(inp) not in visited:
                        stack.append((inp, False))
        return order

    @property
    def nodes(self):
        return [t._node for t in self.tensors if t._node is not None]

    def backward(self, grad=None):
        output = self.output
        if not output.requires_grad:
            msg = "the output does not depend on any tensor which requires a gradient"
            raise ValueError(msg)

        if grad is None:
            if output.size != 1:
                msg = "grad must be given for non-scalar outputs (shape {})".format(output.shape)
                raise ValueError(msg)
            grad = np.ones(output.shape)
        grad = np.asarray(grad, dtype=np.float64)
        aux.check_shape("output gradient", grad.shape, output.shape)

        pending = {id(output): grad}
        for tensor in reversed(self.tensors):
            g = pending.pop(id(tensor), None)
            if g is None:
                continue

            if tensor._node is None:
                # leaf: accumulate over multiple backward passes
                if tensor.grad is None:
                    tensor.grad = g.copy()
                else:
                    tensor.grad = tensor.grad + g
                continue

            tensor.grad = g
            input_grads = tensor._node.backward_rule(g)
            for inp, g_inp in zip(tensor._node.inputs, input_grads):
                if g_inp is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + g_inp
                else:
                    pending[key] = g_inp


def assert_finite(tensor, name):
    """
    Raise NonFiniteError if `tensor` contains NaN or Inf.
    """
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if not np.all(np.isfinite(data)):
        idx = np.argwhere(~np.isfinite(data))[0]
        msg = "non-finite value in {} at index {}".format(name, tuple(int(i) for i in idx))
        raise NonFiniteError(msg)


# ----------------------------------------------------------------------------------------------
# elementwise algebra
# ----------------------------------------------------------------------------------------------

def _unbroadcast(g, shape):
    """
    Sum a broadcast gradient back to `shape`.
    """
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return custom_op(a.data + b.data, (a, b), rule, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return custom_op(a.data - b.data, (a, b), rule, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return custom_op(a.data * b.data, (a, b), rule, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    res = a.data / b.data

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * res / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return custom_op(res, (a, b), rule, "div")


def neg(a):
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    """
    elementwise a**exponent for a scalar (constant) exponent
    """
    a = as_tensor(a)
    exponent = float(exponent)

    def rule(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return custom_op(a.data ** exponent, (a,), rule, "power")


def exp(a):
    a = as_tensor(a)
    res = np.exp(a.data)
    return custom_op(res, (a,), lambda g: (g * res,), "exp")


def log(a):
    a = as_tensor(a)
    return custom_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def leaky_relu(x, slope=0.1):
    """
    elementwise max(x, slope*x)

    :param x:       Tensor
    :param slope:   negative slope in [0, 1)
    """
    if not 0 <= slope < 1:
        msg = "leaky_relu: slope must be in [0, 1), got {}".format(slope)
        raise ConfigurationError(msg)
    x = as_tensor(x)
    positive = x.data > 0
    factor = np.where(positive, 1.0, slope)

    return custom_op(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


# ----------------------------------------------------------------------------------------------
# shape handling and reductions
# ----------------------------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    res = np.sum(a.data, axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return custom_op(res, (a,), rule, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return custom_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return custom_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a, idx):
    a = as_tensor(a)

    def rule(g):
        ga = np.zeros(a.shape)
        np.add.at(ga, idx, g)
        return (ga,)

    return custom_op(np.array(a.data[idx]), (a,), rule, "getitem")


def concat(tensors, axis=1):
    """
    Concatenate tensors along `axis` (channel axis by default).
    """
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return custom_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, rule, "concat")


def matmul(a, b):
    """
    product of two 2d tensors
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        msg = "matmul: incompatible shapes {} and {}".format(a.shape, b.shape)
        raise ConfigurationError(msg)

    def rule(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return custom_op(a.data @ b.data, (a, b), rule, "matmul")


def log_softmax(x, axis=-1):
    """
    numerically stabilized log(softmax(x)) (max-subtraction)
    """
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    res = shifted - lse

    def rule(g):
        softmax = np.exp(res)
        return (g - softmax * np.sum(g, axis=axis, keepdims=True),)

    return custom_op(res, (x,), rule, "log_softmax")


# ----------------------------------------------------------------------------------------------
# convolutions (NCHW layout, zero padding)
# ----------------------------------------------------------------------------------------------

def _windows(xp, kh, kw, stride):
    """
    view of shape [N, C, OH, OW, kh, kw] on a (padded) input
    """
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _crop(x, padding):
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def _scatter_windows(g, weight, padded_shape, stride):
    """
    Adjoint of the window extraction followed by the weight contraction:
    result[n, c, oh*s+i, ow*s+j] += sum_k g[n, k, oh, ow] * weight[k, c, i, j]
    """
    _, _, kh, kw = weight.shape
    OH, OW = g.shape[2:]
    res = np.zeros(padded_shape)
    # contrib has shape [N, OH, OW, C, kh, kw]
    contrib = np.tensordot(g, weight, axes=([1], [0]))
    for i in range(kh):
        for j in range(kw):
            res[:, :, i:i + stride * (OH - 1) + 1:stride, j:j + stride * (OW - 1) + 1:stride] += \
                contrib[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return res


def _check_conv_args(x, weight, bias, stride, padding, opname):
    if x.ndim != 4 or weight.ndim != 4:
        msg = "{}: expected 4d input and weight, got shapes {} and {}".format(opname, x.shape, weight.shape)
        raise ConfigurationError(msg)
    if int(stride) != stride or stride < 1:
        msg = "{}: stride must be a positive integer, got {}".format(opname, stride)
        raise ConfigurationError(msg)
    if int(padding) != padding or padding < 0:
        msg = "{}: padding must be a nonnegative integer, got {}".format(opname, padding)
        raise ConfigurationError(msg)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """
    2d cross correlation with zero padding.

    :param x:           Tensor [N, C, H, W]
    :param weight:      Tensor [K, C, kh, kw]
    :param bias:        Tensor [K] or None
    :param stride:      positive int
    :param padding:     nonnegative int
    :return:            Tensor [N, K, H', W'] with H' = (H + 2*padding - kh)//stride + 1
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x, weight, bias, stride, padding, "conv2d")

    N, C, H, W = x.shape
    K, C2, kh, kw = weight.shape
    if C2 != C:
        msg = "conv2d: input has {} channels but weight expects {} (weight shape {})".format(C, C2, weight.shape)
        raise ConfigurationError(msg)
    if kh > H + 2 * padding or kw > W + 2 * padding:
        msg = "conv2d: kernel {}x{} exceeds padded input {}x{}".format(kh, kw, H + 2 * padding, W + 2 * padding)
        raise ConfigurationError(msg)

    xp = _pad(x.data, padding)
    cols = _windows(xp, kh, kw, stride)
    res = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        aux.check_shape("conv2d bias", bias.shape, (K,))
        res = res + bias.data[None, :, None, None]
        inputs.append(bias)
    res = np.ascontiguousarray(res)

    def rule(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = _crop(_scatter_windows(g, weight.data, xp.shape, stride), padding)
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return custom_op(res, inputs, rule, "conv2d")


def conv2d_transposed(x, weight, bias=None, stride=2, padding=0):
    """
    Transposed convolution ("deconvolution"), the adjoint of `conv2d` with the same weight,
    stride and padding (apart from the bias).

    :param x:           Tensor [N, K, H, W]
    :param weight:      Tensor [K, C, kh, kw] (same layout as the weight of the adjoint conv2d)
    :param bias:        Tensor [C] or None
    :param stride:      1 or 2
    :param padding:     nonnegative int
    :return:            Tensor [N, C, (H-1)*stride - 2*padding + kh, (W-1)*stride - 2*padding + kw]
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x, weight, bias, stride, padding, "conv2d_transposed")
    if stride not in (1, 2):
        msg = "conv2d_transposed: stride must be 1 or 2, got {}".format(stride)
        raise ConfigurationError(msg)

    N, K, H, W = x.shape
    K2, C, kh, kw = weight.shape
    if K2 != K:
        msg = "conv2d_transposed: input has {} channels but weight expects {} (weight shape {})".format(
            K, K2, weight.shape)
        raise ConfigurationError(msg)

    padded_shape = (N, C, (H - 1) * stride + kh, (W - 1) * stride + kw)
    if padded_shape[2] <= 2 * padding or padded_shape[3] <= 2 * padding:
        msg = "conv2d_transposed: padding {} removes the whole output ({}x{})".format(
            padding, padded_shape[2], padded_shape[3])
        raise ConfigurationError(msg)

    res = _crop(_scatter_windows(x.data, weight.data, padded_shape, stride), padding)

    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        aux.check_shape("conv2d_transposed bias", bias.shape, (C,))
        res = res + bias.data[None, :, None, None]
        inputs.append(bias)
    res = np.ascontiguousarray(res)

    def rule(g):
        cols = _windows(_pad(g, padding), kh, kw, stride)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            gw = np.tensordot(x.data, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return custom_op(res, inputs, rule, "conv2d_transposed")


# ----------------------------------------------------------------------------------------------
# pooling and resampling
# ----------------------------------------------------------------------------------------------

def avg_pool2d(x, kernel, stride):
    """
    Mean over kernel x kernel windows taken at `stride` (no padding).
    """
    x = as_tensor(x)
    N, C, H, W = x.shape
    if kernel > H or kernel > W:
        msg = "avg_pool2d: window {} exceeds input extent {}x{}".format(kernel, H, W)
        raise ConfigurationError(msg)

    res = _windows(x.data, kernel, kernel, stride).mean(axis=(-2, -1))
    OH, OW = res.shape[2:]

    def rule(g):
        gx = np.zeros(x.shape)
        gk = g / float(kernel * kernel)
        for i in range(kernel):
            for j in range(kernel):
                gx[:, :, i:i + stride * (OH - 1) + 1:stride, j:j + stride * (OW - 1) + 1:stride] += gk
        return (gx,)

    return custom_op(res, (x,), rule, "avg_pool2d")


def avg_downsample2x(x):
    """
    Halve the spatial extent: each output pixel is the mean of its 2x2 source block.
    """
    x = as_tensor(x)
    for axis, name in ((2, "height"), (3, "width")):
        if x.shape[axis] % 2:
            msg = "avg_downsample2x: {} must be even, got {}".format(name, x.shape[axis])
            raise ConfigurationError(msg)
    return avg_pool2d(x, 2, 2)


def _interpolation_matrix(n, factor):
    """
    [n*factor, n] matrix of the linear interpolation weights (pixel centers aligned, clamped at the
    borders).
    """
    m = n * factor
    src = np.clip((np.arange(m) + 0.5) / factor - 0.5, 0, n - 1)
    i0 = np.minimum(np.floor(src).astype(int), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    M = np.zeros((m, n))
    rows = np.arange(m)
    np.add.at(M, (rows, i0), 1 - frac)
    np.add.at(M, (rows, i1), frac)
    return M


def upsample_flow(flow, factor):
    """
    Bilinear spatial upsampling by an integer factor. All values are multiplied by `factor`
    because displacements are measured in pixels of the respective resolution.

    :param flow:    Tensor [N, 2k, H, W]
    :param factor:  positive int
    :return:        Tensor [N, 2k, factor*H, factor*W]
    """
    flow = as_tensor(flow)
    _, _, H, W = flow.shape
    Mh = _interpolation_matrix(H, factor)
    Mw = _interpolation_matrix(W, factor)
    res = factor * np.matmul(np.matmul(Mh, flow.data), Mw.T)

    def rule(g):
        return (factor * np.matmul(np.matmul(Mh.T, g), Mw),)

    return custom_op(res, (flow,), rule, "upsample_flow")


def upsample_flow2x(flow):
    return upsample_flow(flow, 2)


# ----------------------------------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------------------------------

class GradCheckReport(Container):
    """
    Result of `check_gradients`. Attributes:

    max_deviation   largest deviation over all inputs
    deviations      list with one deviation per input
    worst           (input index, element index) of the largest absolute difference
    passed          max_deviation <= tolerance
    """

    def __repr__(self):
        state = "passed" if self.passed else "FAILED"
        return "<GradCheckReport {}: max deviation {:.3e} (tolerance {:.1e})>".format(
            state, self.max_deviation, self.tolerance)


def check_gradients(op, inputs, tolerance=1e-4, step=1e-4, probes=None, seed=0):
    """
    Compare the analytic gradients of `op` with central finite differences.

    The (possibly non-scalar) output is projected onto a fixed random direction. For each input the
    deviation is max|analytic - numeric| / max(max|analytic|, max|numeric|), i.e. it is relative to
    the scale of that gradient.

    :param op:          callable taking Tensors (one per input) and returning a Tensor
    :param inputs:      sequence of arrays
    :param tolerance:   pass threshold for the largest deviation
    :param step:        finite difference step
    :param probes:      optional maximum number of probed elements per input (random subset)
    :param seed:        seed for the projection direction and the probe selection
    :return:            GradCheckReport
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]

    out = op(*tensors)
    assert_finite(out, "output of the operation under test")
    projection = rng.uniform(-1, 1, out.shape)
    (out * projection).sum().backward()

    def evaluate(perturbed):
        with no_grad():
            res = op(*[Tensor(a) for a in perturbed])
        return float(np.sum(res.data * projection))

    deviations = []
    worst = None
    worst_abs = -1.0
    for k, arr in enumerate(arrays):
        analytic = tensors[k].grad
        if analytic is None:
            analytic = np.zeros(arr.shape)
        assert_finite(analytic, "analytic gradient of input {}".format(k))

        flat_indices = np.arange(arr.size)
        if probes is not None and probes < arr.size:
            flat_indices = np.sort(rng.choice(arr.size, size=probes, replace=False))

        numeric = np.zeros(len(flat_indices))
        for m, flat_idx in enumerate(flat_indices):
            idx = np.unravel_index(flat_idx, arr.shape)
            perturbed = [a.copy() for a in arrays]
            perturbed[k][idx] = arr[idx] + step
            f_plus = evaluate(perturbed)
            perturbed[k][idx] = arr[idx] - step
            f_minus = evaluate(perturbed)
            numeric[m] = (f_plus - f_minus) / (2 * step)
            if not np.isfinite(numeric[m]):
                msg = "non-finite finite-difference value for input {} at element {}".format(
                    k, tuple(int(i) for i in idx))
                raise NonFiniteError(msg)

        selected = analytic.reshape(-1)[flat_indices]
        diff = np.abs(selected - numeric)
        scale = max(np.max(np.abs(selected), initial=0.0), np.max(np.abs(numeric), initial=0.0))
        dev = float(np.max(diff, initial=0.0) / scale) if scale > 0 else float(np.max(diff, initial=0.0))
        deviations.append(dev)

        if len(diff) and diff.max() > worst_abs:
            worst_abs = diff.max()
            worst = (k, np.unravel_index(flat_indices[int(np.argmax(diff))], arr.shape))

    max_dev = max(deviations) if deviations else 0.0
    return GradCheckReport(max_deviation=max_dev, deviations=deviations, worst=worst,
                           tolerance=tolerance, passed=max_dev <= tolerance)
