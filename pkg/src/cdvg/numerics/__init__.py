from . import tensor as F
from .gradcheck import grad_check, grad_check_params
from .optim import AdamW, OptimizerState, Schedule, adamw_step, cosine_lr
from .tensor import Tensor, no_grad

__all__ = [
    "AdamW",
    "F",
    "OptimizerState",
    "Schedule",
    "Tensor",
    "adamw_step",
    "cosine_lr",
    "grad_check",
    "grad_check_params",
    "no_grad",
]
