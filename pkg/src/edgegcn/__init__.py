"""Edge-oriented graph convolutional reasoning.

A numpy/scipy library for scene-graph reasoning on 3D point scenes and
for conventional graph tasks (citation node classification, molecular
graph recognition), built around a graph convolution whose node and
edge streams gate each other through a pair of twinning attentions.
"""

from .tensor import Tensor, ShapeError, set_debug_checks, zero_grad
from .optim import Adam, grad_check

__all__ = [
    "Tensor",
    "ShapeError",
    "set_debug_checks",
    "zero_grad",
    "Adam",
    "grad_check",
]
