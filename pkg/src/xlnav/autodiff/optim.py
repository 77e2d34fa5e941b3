"""Adam with bias correction and decoupled weight decay."""

import numpy as np

from .._kernels import impl as K


class AdamState:
    """First/second moment buffers per parameter plus the step counter."""

    def __init__(self, params):
        self.t = 0
        self.m = {n: np.zeros_like(params.value(n)) for n in params.names()}
        self.v = {n: np.zeros_like(params.value(n)) for n in params.names()}


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0, lr_overrides=None):
    """One optimizer step over every parameter; zeroes gradients after.

    Weight decay is decoupled: value -= lr * wd * value before the Adam
    delta. ``lr_overrides`` maps a name prefix to a learning rate, so
    encoder and decoder parameter groups can use different rates.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    for name in params.names():
        rate = lr
        if lr_overrides:
            for prefix, r in lr_overrides.items():
                if name.startswith(prefix):
                    rate = r
                    break
        K.adam_update(params.value(name), params.grad(name),
                      state.m[name], state.v[name], state.t,
                      rate, beta1, beta2, eps, weight_decay)
    params.zero_grads()
