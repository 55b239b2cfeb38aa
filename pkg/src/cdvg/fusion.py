"""Text-guided dual-gate fusion with channel shuffle.

Visual features are shuffled across channel groups, projected into ``n_h``
heads and compared with per-head projections of every candidate text. The
best-matching text response per head and location is calibrated into a gate
in ``(0, s)`` and applied to the original features through

    V + beta * V * alpha * (gate - 1)

so the block is an exact identity whenever alpha, beta or ``gate - 1`` is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import F, Tensor
from .numerics.module import Module, param


@dataclass(frozen=True)
class FusionConfig:
    heads: int = 4
    embed_channels: int = 32
    groups: int = 4
    tau_init: float = 0.1


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """out[:, i] = in[:, perm[i]] for the transpose-of-groups shuffle."""
    if groups < 1 or channels % groups:
        raise ContractViolation(f"{groups} groups do not divide {channels} channels")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def _regroup(v, groups: int):
    B, C, H, W = v.shape
    if groups < 1 or C % groups:
        raise ContractViolation(f"{groups} groups do not divide {C} channels")
    if isinstance(v, Tensor):
        return F.transpose(v.reshape(B, groups, C // groups, H, W), (0, 2, 1, 3, 4)).reshape(B, C, H, W)
    return v.reshape(B, groups, C // groups, H, W).transpose(0, 2, 1, 3, 4).reshape(B, C, H, W)


def channel_shuffle(v, groups: int):
    return _regroup(v, groups)


def channel_unshuffle(v, groups: int):
    """Inverse of :func:`channel_shuffle` (a shuffle with C/groups groups)."""
    return _regroup(v, v.shape[1] // groups)


class TextGuidedFusion(Module):
    def __init__(self, channels: int, text_dim: int, cfg: FusionConfig, rng: np.random.Generator):
        if cfg.embed_channels % cfg.heads or channels % cfg.heads:
            raise ContractViolation("head count must divide both the embedding and channel widths")
        self.cfg = cfg
        self.channels = channels
        e = cfg.embed_channels
        self.phi_w = param(rng.standard_normal((e, channels)) / np.sqrt(channels))
        self.phi_b = param(np.zeros(e))
        self.psi_w = param(rng.standard_normal((e, text_dim)) / np.sqrt(text_dim))
        self.psi_b = param(np.zeros(e))
        self.log_tau = param(np.log(cfg.tau_init))
        self.head_bias = param(np.zeros(cfg.heads))
        self.log_scale = param(0.0)
        self.alpha_gate = param(1.0)
        self.beta_gate = param(0.5)

    @property
    def tau(self) -> Tensor:
        return F.exp(self.log_tau)

    @property
    def scale(self) -> Tensor:
        return F.exp(self.log_scale)

    def __call__(self, v: Tensor, texts) -> Tensor:
        a = similarity_map(v, texts, self)
        return dual_gate_fuse(v, calibrate(a, self), self.alpha_gate, self.beta_gate, self.cfg.groups)


def similarity_map(v, texts, fusion: TextGuidedFusion) -> Tensor:
    """A[b, m, h, w] = max_n <phi(shuffle(V))[b, m, :, h, w], psi(T)[b, n, m, :]>.

    ``texts`` is N×D (shared by the batch) or B×N×D.
    """
    v, texts = F.as_tensor(v), F.as_tensor(texts)
    B, C, H, W = v.shape
    nh = fusion.cfg.heads
    dh = fusion.cfg.embed_channels // nh
    vs = channel_shuffle(v, fusion.cfg.groups)
    proj = F.transpose(vs, (0, 2, 3, 1)).reshape(B * H * W, C) @ F.transpose(fusion.phi_w, (1, 0)) + fusion.phi_b
    proj = F.transpose(proj.reshape(B, H * W, nh, dh), (0, 2, 3, 1))  # B, nh, dh, HW
    if texts.ndim == 2:
        texts = texts.reshape(1, *texts.shape)
    N = texts.shape[1]
    guide = texts @ F.transpose(fusion.psi_w, (1, 0)) + fusion.psi_b  # (1|B), N, e
    guide = F.transpose(guide.reshape(guide.shape[0], N, nh, dh), (0, 2, 1, 3))  # (1|B), nh, N, dh
    sim = guide @ proj  # B, nh, N, HW
    return F.tmax(sim, axis=2).reshape(B, nh, H, W)


def calibrate(a, fusion: TextGuidedFusion) -> Tensor:
    """sigmoid(A / tau + b_m) * s with per-head bias b_m."""
    a = F.as_tensor(a)
    nh = a.shape[1]
    logits = a / fusion.tau + fusion.head_bias.reshape(1, nh, 1, 1)
    return F.sigmoid(logits) * fusion.scale


def head_gates_to_channels(gates: Tensor, channels: int, groups: int) -> Tensor:
    """Expand B×n_h×H×W head gates to the C channels they were projected from."""
    B, nh, H, W = gates.shape
    per = channels // nh
    g = F.expand(gates.reshape(B, nh, 1, H, W), (B, nh, per, H, W)).reshape(B, channels, H, W)
    # heads were formed from shuffled channels; undo the shuffle to line up with V
    return channel_unshuffle(g, groups)


def dual_gate_fuse(v, gates, alpha, beta, groups: int = 1) -> Tensor:
    """V + beta * V * [alpha * (gates - 1)]; head gates are expanded to channels if needed."""
    v, gates = F.as_tensor(v), F.as_tensor(gates)
    if gates.ndim == 4 and gates.shape[1] != v.shape[1]:
        gates = head_gates_to_channels(gates, v.shape[1], groups)
    return v + F.as_tensor(beta) * (v * (F.as_tensor(alpha) * (gates - 1.0)))
