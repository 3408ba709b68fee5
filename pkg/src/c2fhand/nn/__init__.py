from .tensor import (
    GraphError,
    NonFiniteError,
    Parameter,
    Tensor,
    as_tensor,
    backward,
    checked,
    no_grad,
    precision,
)
from .functional import (
    bilinear_sample,
    conv1d_fuse,
    conv2d,
    linear,
    mhsa,
    spiral_conv,
)
from .gradcheck import grad_check
from .params import ParamStore

__all__ = [
    "GraphError", "NonFiniteError", "Parameter", "ParamStore", "Tensor", "as_tensor", "backward",
    "bilinear_sample", "checked", "conv1d_fuse", "conv2d", "grad_check", "linear", "mhsa",
    "no_grad", "precision", "spiral_conv",
]
