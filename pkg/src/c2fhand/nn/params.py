"""Named parameter collections and initialisation."""
from __future__ import annotations

import numpy as np

from .tensor import Parameter, get_dtype


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int | None = None, fan_out: int | None = None):
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1]))
    if fan_out is None:
        fan_out = int(shape[-1])
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore(dict):
    """Ordered name -> Parameter mapping."""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.rng = np.random.default_rng(seed)

    def weight(self, name, shape, fan_in=None, fan_out=None) -> Parameter:
        p = Parameter(xavier_uniform(self.rng, shape, fan_in, fan_out), name)
        self[name] = p
        return p

    def bias(self, name, n) -> Parameter:
        p = Parameter(np.zeros(n), name)
        self[name] = p
        return p

    def zero_grad(self):
        for p in self.values():
            p.zero_grad()

    def astype(self, dtype) -> None:
        for p in self.values():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in self.items():
            a = np.asarray(arrays[k])
            if a.shape != p.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {a.shape} != {p.shape}")
            p.data = a.astype(p.data.dtype if p.data.dtype.kind == "f" else get_dtype())
            p.grad = np.zeros_like(p.data)

    def count(self) -> int:
        return int(sum(p.data.size for p in self.values()))
