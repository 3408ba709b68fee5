"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    per_input: dict[str, float]

    def __str__(self):
        return f"max relative error {self.max_rel_error:.3e} (worst: {self.worst})"


def grad_check(fn, inputs: dict[str, Tensor], eps: float = 1e-5, max_entries: int | None = 64,
               seed: int = 0, floor: float = 1e-10) -> GradCheckReport:
    """Compare backward() gradients of the scalar ``fn()`` with central differences.

    The relative error of an input is ||analytic - numeric||_inf divided by
    max(||analytic||_inf, ||numeric||_inf, floor). Large inputs are checked on a
    random subset of ``max_entries`` coordinates.
    """
    for t in inputs.values():
        if t.data.dtype != np.float64:
            raise TypeError("gradient checking requires float64 tensors")
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    loss = fn()
    backward(loss)
    analytic = {k: np.array(t.grad, copy=True) for k, t in inputs.items()}
    rng = np.random.default_rng(seed)
    per = {}
    for name, t in inputs.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(len(idx))
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = float(fn().data)
            flat[i] = old - eps
            fm = float(fn().data)
            flat[i] = old
            num[n] = (fp - fm) / (2 * eps)
        ana = analytic[name].reshape(-1)[idx]
        scale = max(np.max(np.abs(ana), initial=0.0), np.max(np.abs(num), initial=0.0), floor)
        per[name] = float(np.max(np.abs(ana - num), initial=0.0) / scale)
    worst = max(per, key=per.get) if per else ""
    return GradCheckReport(per.get(worst, 0.0), worst, per)
