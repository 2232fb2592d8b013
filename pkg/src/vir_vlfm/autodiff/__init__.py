from . import ops
from .checkpoint import CheckpointError
from .gradcheck import gradient_check, relative_error
from .nn import Attention, Conv2d, LayerNorm, Linear, Module, Parameter
from .tensor import ShapeError, Tensor, as_tensor, grad_enabled, no_grad, topological_order

__all__ = [
    "Attention", "CheckpointError", "Conv2d", "LayerNorm", "Linear", "Module", "Parameter",
    "ShapeError", "Tensor", "as_tensor", "grad_enabled", "gradient_check", "no_grad", "ops",
    "relative_error", "topological_order",
]
