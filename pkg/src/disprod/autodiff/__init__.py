"""Forward-mode second partials via hyper-dual seeding, plus policy gradients."""

from disprod.autodiff.hyperdual import (
    HyperDual,
    cos,
    exp,
    lift,
    log,
    sigmoid,
    sin,
    smooth_clamp,
    smooth_min,
    softplus,
    sqrt,
    square,
    tanh,
    value_of,
    where,
)
from disprod.autodiff.partials import (
    PartialsBundle,
    check_gradient,
    eval_partials,
    finite_difference_gradient,
    grad_policy_loss,
)

__all__ = [
    "HyperDual",
    "PartialsBundle",
    "check_gradient",
    "cos",
    "eval_partials",
    "exp",
    "finite_difference_gradient",
    "grad_policy_loss",
    "lift",
    "log",
    "sigmoid",
    "sin",
    "smooth_clamp",
    "smooth_min",
    "softplus",
    "sqrt",
    "square",
    "tanh",
    "value_of",
    "where",
]
