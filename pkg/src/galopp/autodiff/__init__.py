"""Minimal reverse-mode autodiff kernel used by the policy network."""

from .engine import (
    ShapeError,
    Tape,
    Tensor,
    add,
    bmm,
    clip,
    concat,
    conv2d,
    exp,
    flatten,
    graph_conv,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    minimum,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    select_columns,
    softmax,
    sub,
    sum,
    take_rows,
    tensor,
)
from .gradcheck import GradCheckReport, finite_diff_check
from .optim import Adam, adam_step, clip_grad_norm_, global_grad_norm
from .checkpoint import load_checkpoint, save_checkpoint
from .sampling import categorical_sample

__all__ = [
    "Adam",
    "GradCheckReport",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "bmm",
    "categorical_sample",
    "clip",
    "clip_grad_norm_",
    "concat",
    "conv2d",
    "exp",
    "finite_diff_check",
    "flatten",
    "global_grad_norm",
    "graph_conv",
    "linear",
    "load_checkpoint",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "minimum",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "save_checkpoint",
    "select_columns",
    "softmax",
    "sub",
    "sum",
    "take_rows",
    "tensor",
]
