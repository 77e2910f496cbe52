"""Minimal reverse-mode automatic differentiation on numpy arrays.

`Tensor` doubles as the graph node: it carries the cached forward value,
the op identifier, references to parent nodes, and the gradient
accumulator. Call `backward()` on a scalar-valued tensor to populate
`.grad` on every `requires_grad` leaf.
"""

from polvis.autograd.tensor import (
    NumericsError,
    ShapeError,
    Tensor,
    concat,
    no_finite_checks,
)
from polvis.autograd.conv import conv2d, transposed_conv2d
from polvis.autograd.optim import Adam

__all__ = [
    "Adam",
    "NumericsError",
    "ShapeError",
    "Tensor",
    "concat",
    "conv2d",
    "no_finite_checks",
    "transposed_conv2d",
]
