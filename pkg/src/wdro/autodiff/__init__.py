"""Tape-based reverse-mode differentiation with second-order support."""

from .engine import (
    add, sub, neg, mul, div, pow_const,
    exp, log, tanh, leaky_relu,
    asum, dot, matvec, vecmat, outer,
    softmax_cross_entropy, logsumexp,
    value_and_grad, grad, deep_value,
)
from .graph import (
    ComputationGraph,
    GraphError,
    KernelHint,
    SlotShapeError,
    evaluate,
    input_gradient,
    value_and_input_gradient,
    parameter_gradient,
    parameter_gradient_of_penalized_loss,
)
from .fdcheck import (
    FDEntry,
    FiniteDifferenceReport,
    finite_difference_check,
    finite_difference_check_penalized,
)

__all__ = [
    "add", "sub", "neg", "mul", "div", "pow_const",
    "exp", "log", "tanh", "leaky_relu",
    "asum", "dot", "matvec", "vecmat", "outer",
    "softmax_cross_entropy", "logsumexp",
    "value_and_grad", "grad", "deep_value",
    "ComputationGraph", "GraphError", "KernelHint", "SlotShapeError",
    "evaluate", "input_gradient", "value_and_input_gradient",
    "parameter_gradient", "parameter_gradient_of_penalized_loss",
    "FDEntry", "FiniteDifferenceReport",
    "finite_difference_check", "finite_difference_check_penalized",
]
