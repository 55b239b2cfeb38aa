"""Convolutional stem, DAA-lite attention and the patch-level LoRA mixture of experts.

Routing works on patches of the attended feature map: every patch is
summarized by its per-channel mean, scored against unit-norm expert prototypes
by cosine similarity, and mixed over its Top-K experts. All experts share one
3x3 convolution; expert ``e`` only adds its low-rank delta ``x A_e B_e`` at
each location, so the routed output is

    C_shared(x) + alpha * sum_{e in TopK} g_e * (x A_e B_e)

followed by the residual connection back to the block input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ContractViolation
from .numerics import F, Tensor
from .numerics.module import Module, conv_weight, param

PatchSize = Union[int, str]  # an int >= 1, or "image" for one patch per map

GATE_TEMPERATURE = 0.1


@dataclass(frozen=True)
class MoEConfig:
    num_experts: int = 8
    top_k: int = 2
    patch_size: PatchSize = 2
    rank: int = 4
    depth: int = 2
    channels: int = 32

    def __post_init__(self):
        if not 1 <= self.top_k <= self.num_experts:
            raise ContractViolation(f"top_k={self.top_k} must lie in [1, {self.num_experts}]")
        if self.rank >= self.channels:
            raise ContractViolation("LoRA rank must be smaller than the channel width")
        if self.patch_size != "image" and (not isinstance(self.patch_size, int) or self.patch_size < 1):
            raise ContractViolation(f"patch size must be >= 1 or 'image', got {self.patch_size!r}")


@dataclass(frozen=True)
class PatchLayout:
    height: int
    width: int
    patch_h: int
    patch_w: int
    rows: int
    cols: int

    @property
    def padded(self) -> tuple[int, int]:
        return self.rows * self.patch_h, self.cols * self.patch_w

    @property
    def count(self) -> int:
        return self.rows * self.cols


def patch_layout(height: int, width: int, p: PatchSize) -> PatchLayout:
    if p == "image":
        return PatchLayout(height, width, height, width, 1, 1)
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ContractViolation(f"patch size must be >= 1, got {p!r}")
    return PatchLayout(height, width, p, p, -(-height // p), -(-width // p))


def partition_patches(x: np.ndarray, p: PatchSize) -> tuple[np.ndarray, PatchLayout]:
    """Split B×C×H×W into non-overlapping patches (B, rows, cols, C, ph, pw).

    The map is zero-padded on the bottom/right when p does not divide H or W.
    """
    B, C, H, W = x.shape
    lay = patch_layout(H, W, p)
    Hp, Wp = lay.padded
    xp = np.pad(x, ((0, 0), (0, 0), (0, Hp - H), (0, Wp - W)))
    patches = xp.reshape(B, C, lay.rows, lay.patch_h, lay.cols, lay.patch_w).transpose(0, 2, 4, 1, 3, 5)
    return patches, lay


def reassemble_patches(patches: np.ndarray, layout: PatchLayout) -> np.ndarray:
    B, R, Cc, C, ph, pw = patches.shape
    full = patches.transpose(0, 3, 1, 4, 2, 5).reshape(B, C, R * ph, Cc * pw)
    return full[:, :, : layout.height, : layout.width]


def patch_summary(patch: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean of a C×ph×pw patch."""
    if patch.size == 0:
        raise ContractViolation("empty patch")
    return patch.reshape(patch.shape[0], -1).mean(axis=1)


@dataclass
class GateDecision:
    indices: np.ndarray  # (..., K) int, selected experts in descending score order
    weights: Tensor  # (..., K), softmax over the selected scores
    dense: Tensor  # (..., N_e), selected weights scattered, zeros elsewhere
    probs: Tensor  # (..., N_e), softmax over all scores


def cosine_topk_gate(pbar, prototypes, k: int, temperature: float = GATE_TEMPERATURE,
                     indices: np.ndarray | None = None) -> GateDecision:
    """Cosine Top-K gating for patch summaries ``pbar`` (..., C).

    ``indices`` overrides the selection (used to hold routing fixed while
    checking gradients). A zero summary scores every expert equally and so
    routes to the K lowest-index experts with uniform weights.
    """
    pbar = F.as_tensor(pbar)
    prototypes = F.as_tensor(prototypes)
    n_exp = prototypes.shape[0]
    if k > n_exp:
        raise ContractViolation(f"top_k={k} exceeds expert count {n_exp}")
    single = pbar.ndim == 1
    if single:
        pbar = pbar.reshape(1, -1)
        indices = None if indices is None else np.asarray(indices).reshape(1, -1)
    sq = (pbar * pbar).sum(axis=-1, keepdims=True)
    unit = pbar / F.sqrt(F.where(sq.data > 0, sq, 1.0))
    scores = (unit @ F.transpose(prototypes, (1, 0))) / temperature
    if indices is None:
        # stable sort on negated scores: ties go to the lower expert index
        indices = np.argsort(-scores.data, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, indices, True, axis=-1)
    dense = F.softmax(F.where(mask, scores, -np.inf), axis=-1)
    weights = _gather_last(dense, indices)
    probs = F.softmax(scores, axis=-1)
    if single:
        return GateDecision(indices[0], weights.reshape(k), dense.reshape(n_exp), probs.reshape(n_exp))
    return GateDecision(indices=indices, weights=weights, dense=dense, probs=probs)


def _gather_last(t: Tensor, idx: np.ndarray) -> Tensor:
    flat = t.reshape(-1, t.shape[-1])
    rows = np.repeat(np.arange(flat.shape[0]), idx.shape[-1])
    picked = flat[rows, idx.reshape(-1)]
    return picked.reshape(idx.shape)


@dataclass
class RoutingStats:
    assignment: np.ndarray  # f_e: fractional Top-K assignment per expert, sums to 1
    mean_prob: Tensor  # p̄_e: full-softmax probability averaged over patches, sums to 1
    indices: np.ndarray  # (B, rows, cols, K)
    weights: np.ndarray  # (B, rows, cols, K)

    def entropy(self) -> float:
        f = self.assignment[self.assignment > 0]
        return float(-(f * np.log(f)).sum())


def load_balance_loss(stats: RoutingStats, num_experts: int) -> Tensor:
    """Switch-style balance term ``N_e * sum_e f_e * p̄_e`` (1 under uniform routing)."""
    return (stats.mean_prob * stats.assignment).sum() * float(num_experts)


def routing_stats(decision: GateDecision, num_experts: int) -> RoutingStats:
    k = decision.indices.shape[-1]
    counts = np.bincount(decision.indices.reshape(-1), minlength=num_experts).astype(np.float64)
    n_patches = decision.indices.size // k
    probs = decision.probs.reshape(-1, num_experts)
    return RoutingStats(
        assignment=counts / (k * n_patches),
        mean_prob=probs.mean(axis=0),
        indices=decision.indices,
        weights=decision.weights.data,
    )


class DAALite(Module):
    """Channel gate (pooled bottleneck MLP) times spatial gate (7x7 conv on mean‖max)."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        hidden = max(channels // reduction, 1)
        self.fc1_w = param(rng.standard_normal((hidden, channels)) * np.sqrt(2.0 / channels))
        self.fc1_b = param(np.zeros(hidden))
        self.fc2_w = param(rng.standard_normal((channels, hidden)) * np.sqrt(1.0 / hidden))
        self.fc2_b = param(np.zeros(channels))
        self.sp_w = conv_weight(rng, 1, 2, 7, gain=1.0)
        self.sp_b = param(np.zeros(1))

    def gates(self, x: Tensor) -> tuple[Tensor, Tensor]:
        B, C = x.shape[:2]
        pooled = x.mean(axis=(2, 3))
        h = F.relu(pooled @ F.transpose(self.fc1_w, (1, 0)) + self.fc1_b)
        channel = F.sigmoid(h @ F.transpose(self.fc2_w, (1, 0)) + self.fc2_b).reshape(B, C, 1, 1)
        desc = F.concat([x.mean(axis=1, keepdims=True), F.tmax(x, axis=1, keepdims=True)], axis=1)
        spatial = F.sigmoid(F.conv2d(desc, self.sp_w, self.sp_b, padding=3))
        return channel, spatial

    def __call__(self, x: Tensor) -> Tensor:
        channel, spatial = self.gates(x)
        return x * channel * spatial


def daa_lite(x, block: DAALite) -> Tensor:
    return block(F.as_tensor(x))


class PLMoEBlock(Module):
    """One cascade step: DAA-lite, patch routing, shared conv + routed LoRA deltas, residual."""

    def __init__(self, cfg: MoEConfig, rng: np.random.Generator):
        C, r, n = cfg.channels, cfg.rank, cfg.num_experts
        self.cfg = cfg
        self.daa = DAALite(C, rng)
        self.shared_w = conv_weight(rng, C, C, 3, gain=0.5)
        self.shared_b = param(np.zeros(C))
        self.lora_a = param(rng.standard_normal((n, C, r)) / np.sqrt(C))
        self.lora_b = param(np.zeros((n, r, C)))
        protos = rng.standard_normal((n, C))
        self.prototypes = param(protos / np.linalg.norm(protos, axis=1, keepdims=True))
        self.alpha = param(1.0)
        self.freeze_routing = False
        self._frozen_indices: np.ndarray | None = None

    def renormalize(self) -> None:
        p = self.prototypes.data
        norms = np.linalg.norm(p, axis=1, keepdims=True)
        self.prototypes.data = p / np.where(norms > 0, norms, 1.0)

    def route(self, xd: Tensor) -> tuple[GateDecision, PatchLayout]:
        B, C, H, W = xd.shape
        lay = patch_layout(H, W, self.cfg.patch_size)
        Hp, Wp = lay.padded
        xp = F.pad(xd, ((0, 0), (0, 0), (0, Hp - H), (0, Wp - W))) if (Hp, Wp) != (H, W) else xd
        pbar = xp.reshape(B, C, lay.rows, lay.patch_h, lay.cols, lay.patch_w).mean(axis=(3, 5))
        pbar = F.transpose(pbar, (0, 2, 3, 1))
        fixed = self._frozen_indices if self.freeze_routing else None
        if fixed is not None and fixed.shape[0] != B:
            fixed = None
        dec = cosine_topk_gate(pbar, self.prototypes, self.cfg.top_k, indices=fixed)
        if self.freeze_routing and self._frozen_indices is None:
            self._frozen_indices = dec.indices
        return dec, lay

    def expert_delta(self, xd: Tensor, pixel_gates: Tensor) -> Tensor:
        """alpha * sum_e g_e (x A_e B_e) at every location; pixel_gates is B×H×W×N_e."""
        B, C, H, W = xd.shape
        n, _, r = self.lora_a.shape
        xl = F.transpose(xd, (0, 2, 3, 1)).reshape(B * H * W, C)
        a_cat = F.transpose(self.lora_a, (1, 0, 2)).reshape(C, n * r)
        u = (xl @ a_cat).reshape(B * H * W, n, r) * pixel_gates.reshape(B * H * W, n, 1)
        mixed = u.reshape(B * H * W, n * r) @ self.lora_b.reshape(n * r, C)
        return F.transpose(mixed.reshape(B, H, W, C), (0, 3, 1, 2)) * self.alpha

    def __call__(self, x: Tensor) -> tuple[Tensor, RoutingStats]:
        xd = self.daa(x)
        B, C, H, W = xd.shape
        dec, lay = self.route(xd)
        n = self.cfg.num_experts
        g = F.transpose(dec.dense, (0, 3, 1, 2)).reshape(B, n, lay.rows, 1, lay.cols, 1)
        g = F.expand(g, (B, n, lay.rows, lay.patch_h, lay.cols, lay.patch_w))
        g = g.reshape(B, n, lay.rows * lay.patch_h, lay.cols * lay.patch_w)[:, :, :H, :W]
        pixel_gates = F.transpose(g, (0, 2, 3, 1))
        y = x + F.conv2d(xd, self.shared_w, self.shared_b, padding=1) + self.expert_delta(xd, pixel_gates)
        return y, routing_stats(dec, n)


def expert_apply(patch: Tensor, e: int, block: PLMoEBlock, alpha=None) -> Tensor:
    """Output of expert ``e`` alone on a B×C×h×w input: C_shared(P) + alpha * P A_e B_e."""
    patch = F.as_tensor(patch)
    alpha = block.alpha if alpha is None else F.as_tensor(alpha)
    B, C, H, W = patch.shape
    xl = F.transpose(patch, (0, 2, 3, 1)).reshape(-1, C)
    delta = (xl @ block.lora_a[e] @ block.lora_b[e]).reshape(B, H, W, C)
    delta = F.transpose(delta, (0, 3, 1, 2)) * alpha
    return F.conv2d(patch, block.shared_w, block.shared_b, padding=1) + delta


def plmoe_block(x, block: PLMoEBlock) -> tuple[Tensor, RoutingStats]:
    return block(F.as_tensor(x))


class Backbone(Module):
    """Strided stem to stride 8, PL-MoE cascade, one more strided stage to stride 16.

    Two normalized coordinate channels are appended to the image so that the
    features can encode absolute position.
    """

    strides = (8, 16)

    def __init__(self, cfg: MoEConfig, rng: np.random.Generator, in_channels: int = 3):
        C = cfg.channels
        self.cfg = cfg
        # (width, stride) per 3x3 conv; three stride-2 layers reach stride 8
        self.stem_layers = ((16, 2), (16, 1), (C, 2), (C, 1), (C, 2))
        self.stem_w, self.stem_b = [], []
        prev = in_channels + 2
        for width, _ in self.stem_layers:
            self.stem_w.append(conv_weight(rng, width, prev, 3))
            self.stem_b.append(param(np.zeros(width)))
            prev = width
        self.blocks = [PLMoEBlock(cfg, rng) for _ in range(cfg.depth)]
        self.down_w = conv_weight(rng, C, C, 3)
        self.down_b = param(np.zeros(C))

    def __call__(self, image) -> tuple[list[Tensor], list[RoutingStats]]:
        return build_pyramid(image, self)


def coord_channels(batch: int, height: int, width: int) -> np.ndarray:
    ys = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    xs = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    grid = np.stack(np.broadcast_arrays(xs[None, :], ys[:, None]))
    return np.broadcast_to(grid, (batch, 2, height, width))


def build_pyramid(image, net: Backbone) -> tuple[list[Tensor], list[RoutingStats]]:
    """Feature maps at strides 8 and 16 (width C each) plus per-block routing stats."""
    image = F.as_tensor(image)
    B, _, H, W = image.shape
    if H % 16 or W % 16:
        raise ContractViolation(f"image size {H}x{W} is not divisible by 16")
    x = F.concat([image, Tensor(coord_channels(B, H, W))], axis=1)
    for w, b, (_, stride) in zip(net.stem_w, net.stem_b, net.stem_layers):
        x = F.relu(F.conv2d(x, w, b, stride=stride, padding=1))
    stats = []
    for blk in net.blocks:
        x, st = blk(x)
        stats.append(st)
    p3 = x
    p4 = F.relu(F.conv2d(p3, net.down_w, net.down_b, stride=2, padding=1))
    return [p3, p4], stats
