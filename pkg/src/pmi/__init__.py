"""Pairwise modality interaction for sentence localization and captioning."""

from .tensor import (
    Graph,
    GraphError,
    ShapeError,
    Tensor,
    active_graph,
    backward,
    concat,
    constant,
    elementwise,
    gather_rows,
    huber,
    matmul,
    narrow,
    no_grad,
    parameter,
    reduce,
    reshape,
    softmax_axis,
    transpose,
    zeros,
)
from .gradcheck import GradcheckError, finite_diff_check
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "GraphError",
    "GradcheckError",
    "Rng",
    "ShapeError",
    "Tensor",
    "active_graph",
    "backward",
    "concat",
    "constant",
    "elementwise",
    "finite_diff_check",
    "gather_rows",
    "huber",
    "matmul",
    "narrow",
    "no_grad",
    "parameter",
    "reduce",
    "reshape",
    "softmax_axis",
    "transpose",
    "zeros",
]
