"""Test-side gradient checks for whole model graphs."""

import numpy as np

from agtfusion import autodiff as ad
from agtfusion.autodiff import Tape, Tensor

from oracles import central_differences


def model_gradient_error(model, a, v, t, labels, h=1e-5):
    """Largest tape vs finite-difference gradient deviation of the mean
    cross-entropy over every parameter of ``model``, divided by the largest
    gradient magnitude."""
    leaves = model.tensors(requires_grad=True)
    with Tape() as tape:
        tape.backward(ad.cross_entropy(model.forward(a, v, t, leaves), labels))

    fixed = model.tensors()

    def loss(name, value):
        p = {**fixed, name: Tensor(value)}
        return ad.cross_entropy(model.forward(a, v, t, p), labels).item()

    diffs, scale = [], []
    for name, value in model.params.items():
        numeric = central_differences(lambda z, name=name: loss(name, z), value, h)
        analytic = leaves[name].grad if leaves[name].grad is not None else np.zeros_like(value)
        diffs.append(np.abs(analytic - numeric).max())
        scale.append(max(np.abs(analytic).max(), np.abs(numeric).max()))
    # one scale for the whole model, so near-zero gradient blocks do not
    # turn finite-difference round-off into a large relative error
    return max(diffs) / max(max(scale), 1e-300)
