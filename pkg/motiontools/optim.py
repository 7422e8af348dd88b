"""
Adaptive moment estimation (Adam) for named parameter tensors.
"""

from collections import OrderedDict

import numpy as np

from .auxiliary import CheckpointError


class Adam(object):

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        """
        :param named_params:    sequence of (name, Tensor) pairs or a mapping name -> Tensor
        """
        if hasattr(named_params, "items"):
            named_params = named_params.items()
        self.params = OrderedDict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = OrderedDict((name, np.zeros(p.shape)) for name, p in self.params.items())
        self.v = OrderedDict((name, np.zeros(p.shape)) for name, p in self.params.items())
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * p.grad ** 2
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            # new array: graphs which were recorded earlier keep their weight values
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self):
        total = sum(float(np.sum(p.grad ** 2)) for p in self.params.values() if p.grad is not None)
        return float(np.sqrt(total))

    # --- state export (exact resume)

    def state_dict(self):
        """
        :return:    (arrays, scalars): arrays maps "m/<name>" and "v/<name>" to the moment estimates
        """
        arrays = OrderedDict()
        for name in self.params:
            arrays["m/" + name] = self.m[name]
            arrays["v/" + name] = self.v[name]
        scalars = dict(t=self.t, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        return arrays, scalars

    def load_state_dict(self, arrays, scalars):
        for name, p in self.params.items():
            for prefix, target in (("m/", self.m), ("v/", self.v)):
                key = prefix + name
                if key not in arrays:
                    raise CheckpointError("optimizer state lacks {}".format(key))
                if arrays[key].shape != p.shape:
                    msg = "optimizer state {}: expected shape {} but got {}".format(key, p.shape, arrays[key].shape)
                    raise CheckpointError(msg)
                target[name] = np.array(arrays[key], dtype=np.float64)
        self.t = int(scalars["t"])
        self.lr = scalars.get("lr", self.lr)
        self.beta1 = scalars.get("beta1", self.beta1)
        self.beta2 = scalars.get("beta2", self.beta2)
        self.eps = scalars.get("eps", self.eps)
