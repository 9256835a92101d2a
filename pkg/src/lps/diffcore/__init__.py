"""Reverse-mode differentiation, special functions and optimizers."""

from .gradcheck import analytic_gradient, finite_diff_check, numeric_gradient
from .optim import Adam, AdamState, ParamStore, adam_step, clip_global_norm
from .special import betainc, digamma, student_t_sf2
from .tape import (
    Gradients, Tape, Var, add, affine, apply_elementary, backward, concat, constant, cos,
    div, dot, exp, expm1, leaky_relu, lgamma, log, log1p, log_sigmoid, logaddexp, mean, mul, neg,
    pow, relu, reshape, sigmoid, sin, sqrt, square, stack, sub, sum, take, tanh, transpose,
    value,
)

DiffValue = Var
