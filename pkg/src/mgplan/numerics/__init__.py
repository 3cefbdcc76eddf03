from mgplan.numerics.tensor import (
    Parameter,
    Tape,
    Tensor,
    active_tape,
    bilinear_sample,
    concat,
    matmul,
    softmax_last,
)
from mgplan.numerics.nn import MLP, LayerNorm, Linear, Module, mlp
from mgplan.numerics.optim import AdamW, adam_step, cosine_lr
from mgplan.numerics.gradcheck import numeric_grad, rel_error

__all__ = [
    "AdamW", "LayerNorm", "Linear", "MLP", "Module", "Parameter", "Tape", "Tensor",
    "active_tape", "adam_step", "bilinear_sample", "concat", "cosine_lr", "matmul", "mlp",
    "numeric_grad", "rel_error", "softmax_last",
]
