"""AdamW with decoupled weight decay, and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from .tensor import Tensor


@dataclass
class OptimizerState:
    """Moments and step counter for one parameter, plus its hyperparameters."""

    lr: float = 2e-3
    weight_decay: float = 0.025
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    exp_avg: np.ndarray | None = None
    exp_avg_sq: np.ndarray | None = None


def adamw_step(param: np.ndarray, grad: np.ndarray, state: OptimizerState) -> np.ndarray:
    """One AdamW update; advances ``state`` in place and returns the new parameter."""
    if param.shape != grad.shape:
        raise ContractViolation(f"parameter shape {param.shape} != gradient shape {grad.shape}")
    if state.exp_avg is None:
        state.exp_avg = np.zeros_like(param)
        state.exp_avg_sq = np.zeros_like(param)
    elif state.exp_avg.shape != param.shape:
        raise ContractViolation(f"moment shape {state.exp_avg.shape} != parameter shape {param.shape}")
    state.step += 1
    t = state.step
    state.exp_avg = state.beta1 * state.exp_avg + (1.0 - state.beta1) * grad
    state.exp_avg_sq = state.beta2 * state.exp_avg_sq + (1.0 - state.beta2) * grad * grad
    m_hat = state.exp_avg / (1.0 - state.beta1**t)
    v_hat = state.exp_avg_sq / (1.0 - state.beta2**t)
    # decoupled decay: shrink the parameter directly, outside the adaptive path
    out = param * (1.0 - state.lr * state.weight_decay)
    return out - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class AdamW:
    """AdamW over a fixed list of parameter tensors.

    Indices listed in ``no_decay`` skip weight decay (calibration scalars,
    gate factors, normalized prototypes).
    """

    def __init__(self, params: list[Tensor], lr: float = 2e-3, weight_decay: float = 0.025,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 no_decay: set[int] | None = None):
        self.params = list(params)
        no_decay = no_decay or set()
        self.states = [
            OptimizerState(lr=lr, weight_decay=0.0 if i in no_decay else weight_decay,
                           beta1=betas[0], beta2=betas[1], eps=eps)
            for i in range(len(self.params))
        ]
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        self.steps += 1
        for p, st in zip(self.params, self.states):
            if lr is not None:
                st.lr = lr
            # parameters untouched by this step's graph still get zero-gradient updates
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = adamw_step(p.data, grad, st)


@dataclass(frozen=True)
class Schedule:
    lr_init: float = 2e-3
    final_factor: float = 0.01
    total_steps: int = 1


def cosine_lr(step: int, schedule: Schedule) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ContractViolation(f"step {step} outside [0, {schedule.total_steps}]")
    lr_final = schedule.lr_init * schedule.final_factor
    frac = step / schedule.total_steps if schedule.total_steps else 1.0
    return lr_final + (schedule.lr_init - lr_final) * (1.0 + math.cos(math.pi * frac)) / 2.0
