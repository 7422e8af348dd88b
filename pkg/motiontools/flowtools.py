# -*- coding: utf-8 -*-
"""
Flow file I/O (Middlebury `.flo`), flow quality metrics and dataset evaluation.

`.flo` layout (little-endian):
    bytes 0-3   float32 202021.25 (the ASCII characters "PIEH")
    bytes 4-7   int32 width
    bytes 8-11  int32 height
    then height*width*2 float32 values, row-major, interleaved (u, v)
"""

from dataclasses import dataclass, asdict
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import Tensor, no_grad
from .auxiliary import InputError, FlowFileError

FLO_MAGIC = 202021.25
UNKNOWN_FLOW_THRESHOLD = 1e9


def _as_array(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


# ----------------------------------------------------------------------------------------------
# .flo files
# ----------------------------------------------------------------------------------------------

def write_flo(path, flow):
    """
    :param flow:    single field [2, H, W] or [1, 2, H, W] (stored as float32)
    """
    flow = _as_array(flow)
    if flow.ndim == 4 and flow.shape[0] == 1:
        flow = flow[0]
    if flow.ndim != 3 or flow.shape[0] != 2:
        msg = "write_flo: expected a single flow field [2,H,W] or [1,2,H,W], got shape {}".format(flow.shape)
        raise InputError(msg)
    _, H, W = flow.shape

    header = np.array([FLO_MAGIC], dtype="<f4").tobytes() + np.array([W, H], dtype="<i4").tobytes()
    payload = np.ascontiguousarray(flow.transpose(1, 2, 0)).astype("<f4").tobytes()
    with open(path, "wb") as ffile:
        ffile.write(header + payload)


def parse_flo(data):
    """
    Parse the bytes of a `.flo` file.

    :return:    float64 array [1, 2, H, W]
    """
    if len(data) < 12:
        raise FlowFileError("truncated header ({} bytes)".format(len(data)), offset=len(data))
    magic = np.frombuffer(data, dtype="<f4", count=1, offset=0)[0]
    if magic != FLO_MAGIC:
        raise FlowFileError("bad magic tag {!r}".format(bytes(data[:4])), offset=0)
    width = int(np.frombuffer(data, dtype="<i4", count=1, offset=4)[0])
    height = int(np.frombuffer(data, dtype="<i4", count=1, offset=8)[0])
    if width <= 0:
        raise FlowFileError("nonpositive width {}".format(width), offset=4)
    if height <= 0:
        raise FlowFileError("nonpositive height {}".format(height), offset=8)

    expected = 12 + 8 * width * height
    if len(data) < expected:
        msg = "truncated payload: {}x{} field needs {} bytes, file has {}".format(width, height, expected, len(data))
        raise FlowFileError(msg, offset=len(data))
    if len(data) > expected:
        raise FlowFileError("{} trailing bytes".format(len(data) - expected), offset=expected)

    values = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=12)
    return values.astype(np.float64).reshape(height, width, 2).transpose(2, 0, 1)[None].copy()


def read_flo(path):
    with open(path, "rb") as ffile:
        data = ffile.read()
    return parse_flo(data)


# ----------------------------------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------------------------------

def unknown_flow_mask(flow):
    """
    True for pixels with a valid flow vector (components with magnitude <= 1e9).

    :param flow:    [..., 2, H, W]
    :return:        bool array [..., H, W]
    """
    flow = _as_array(flow)
    return np.all(np.abs(flow) <= UNKNOWN_FLOW_THRESHOLD, axis=-3)


def _prepare(pred, gt, mask, name):
    pred, gt = _as_array(pred), _as_array(gt)
    if pred.shape != gt.shape:
        msg = "{}: shapes {} and {} differ".format(name, pred.shape, gt.shape)
        raise InputError(msg)
    if pred.ndim < 3 or pred.shape[-3] % 2:
        msg = "{}: expected flow fields [..., 2k, H, W], got {}".format(name, pred.shape)
        raise InputError(msg)
    H, W = pred.shape[-2:]
    pred = pred.reshape(-1, 2, H, W)
    gt = gt.reshape(-1, 2, H, W)

    valid = unknown_flow_mask(gt)
    if mask is not None:
        valid = valid & np.broadcast_to(np.asarray(mask, dtype=bool).reshape((-1, H, W)), valid.shape)
    if not np.any(valid):
        raise InputError("{}: no valid pixels to evaluate".format(name))
    return pred, gt, valid


def endpoint_errors(pred, gt):
    """
    per-pixel endpoint error, shape [M, H, W] for fields reshaped to [M, 2, H, W]
    """
    diff = pred - gt
    return np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2)


def epe(pred, gt, mask=None):
    """
    Mean endpoint error over the (masked) pixels.

    :param pred, gt:    arrays or Tensors of equal shape [..., 2k, H, W]
    :param mask:        optional bool array [H, W] or [M, H, W] of pixels to include
    """
    pred, gt, valid = _prepare(pred, gt, mask, "epe")
    return float(np.mean(endpoint_errors(pred, gt)[valid]))


def fl_outliers(pred, gt, mask=None):
    """
    Percentage of pixels whose endpoint error exceeds 3 px and 5% of the ground truth magnitude.
    """
    pred, gt, valid = _prepare(pred, gt, mask, "fl_outliers")
    err = endpoint_errors(pred, gt)
    mag = np.sqrt(gt[:, 0] ** 2 + gt[:, 1] ** 2)
    outliers = (err > 3.0) & (err > 0.05 * mag)
    return float(100.0 * np.mean(outliers[valid]))


@dataclass
class EvalReport:
    mean_epe: float
    fl_percent: float
    sample_count: int
    accuracy: float = None

    def __post_init__(self):
        if self.sample_count < 1:
            raise InputError("an EvalReport needs at least one sample")

    def as_dict(self):
        return asdict(self)

    def format_table(self):
        rows = [("samples", "{:d}".format(self.sample_count)),
                ("EPE [px]", "{:.4f}".format(self.mean_epe)),
                ("Fl [%]", "{:.2f}".format(self.fl_percent))]
        if self.accuracy is not None:
            rows.append(("accuracy", "{:.4f}".format(self.accuracy)))
        width = max(len(name) for name, _ in rows)
        return "\n".join("{}  {}".format(name.ljust(width), value) for name, value in rows)


# ----------------------------------------------------------------------------------------------
# dataset evaluation
# ----------------------------------------------------------------------------------------------

def oracle_predictor(sample):
    return sample.gt_flows


def zero_predictor(sample):
    return np.zeros_like(sample.gt_flows)


def model_predictor(model):
    """
    Wrap a MotionNet as a predictor: sample -> flows [F-1, 2, H, W] at input resolution.
    """
    # imported here to avoid circular imports
    from .motionnet import infer_flow, frames_to_input

    def predict(sample):
        with no_grad():
            flow = infer_flow(model, frames_to_input(sample.frames))
        return flow.data.reshape(-1, 2, *flow.shape[2:])

    return predict


def evaluate_sample(predictor, sample):
    """
    :return:    (epe, fl) of one sample
    """
    pred = predictor(sample)
    gt = sample.gt_flows
    if gt is None:
        raise InputError("sample {} carries no ground truth flow".format(sample.seed))
    return epe(pred, gt), fl_outliers(pred, gt)


def evaluate_dataset(predictor, dataset, head=None, workers=None):
    """
    Aggregate EPE, Fl and (with a classifier head) accuracy over a dataset. The aggregates are
    means of the per-sample values, reduced in dataset order.

    :param predictor:   MotionNet or callable sample -> predicted flows [F-1, 2, H, W]
    :param dataset:     sequence of ClipSample
    :param head:        optional TemporalHead (requires a MotionNet predictor and labeled samples)
    :param workers:     optional number of threads
    :return:            EvalReport
    """
    dataset = list(dataset)
    if not dataset:
        raise InputError("cannot evaluate an empty dataset")

    model = None
    if not callable(predictor) or hasattr(predictor, "params"):
        model = predictor
        predictor = model_predictor(model)

    def job(sample):
        return evaluate_sample(predictor, sample)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(job, dataset))
    else:
        results = [job(sample) for sample in dataset]

    epes = np.array([r[0] for r in results])
    fls = np.array([r[1] for r in results])

    accuracy = None
    if head is not None:
        if model is None:
            raise InputError("classification accuracy requires a MotionNet predictor")
        accuracy = classification_accuracy(model, head, dataset)

    return EvalReport(mean_epe=float(np.mean(epes)), fl_percent=float(np.mean(fls)),
                      sample_count=len(dataset), accuracy=accuracy)


def classification_accuracy(model, head, dataset, spec=None, batch_size=16):
    from .motionnet import frames_to_input
    from .stacking import predict_scores

    labeled = [s for s in dataset if s.label is not None]
    if not labeled:
        raise InputError("the dataset carries no labels")
    correct = 0
    for start in range(0, len(labeled), batch_size):
        batch = labeled[start:start + batch_size]
        frames = frames_to_input(np.stack([s.frames for s in batch]))
        scores = predict_scores(model, head, frames, spec)
        correct += int(np.sum(np.argmax(scores, axis=1) == np.array([s.label for s in batch])))
    return correct / float(len(labeled))
