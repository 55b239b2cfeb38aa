"""Region embedding, calibrated text scoring, box distributions, grid head, retrieval.

Boxes are regressed anchor-free: each location predicts four side distances
(left, top, right, bottom) as softmax distributions over ``R + 1`` bins in
stride units, decoded by their expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import F, Tensor
from .numerics.module import Module, conv_weight, param

REG_MAX = 8
BN_EPS = 1e-5


@dataclass(frozen=True)
class GridConfig:
    rows: int = 3
    cols: int = 3

    @property
    def classes(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class LevelGeometry:
    stride: int
    height: int
    width: int

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel centers (cx, cy) of every location, flattened row-major."""
        ys, xs = np.divmod(np.arange(self.height * self.width), self.width)
        return (xs + 0.5) * self.stride, (ys + 0.5) * self.stride


def pyramid_geometry(image_h: int, image_w: int, strides=(8, 16)) -> list[LevelGeometry]:
    return [LevelGeometry(s, image_h // s, image_w // s) for s in strides]


def _channel_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1x1 convolution expressed as a per-location matmul; w is out×in."""
    B, C, H, W = x.shape
    y = F.transpose(x, (0, 2, 3, 1)).reshape(B * H * W, C) @ F.transpose(w, (1, 0)) + b
    return F.transpose(y.reshape(B, H, W, w.shape[0]), (0, 3, 1, 2))


class RegionEmbedder(Module):
    """Two 1x1 convs (C -> C -> D), batch standardization, per-location L2 norm."""

    def __init__(self, channels: int, dim: int, rng: np.random.Generator, momentum: float = 0.1):
        self.w1 = param(rng.standard_normal((channels, channels)) * np.sqrt(2.0 / channels))
        self.b1 = param(np.zeros(channels))
        self.w2 = param(rng.standard_normal((dim, channels)) / np.sqrt(channels))
        self.b2 = param(np.zeros(dim))
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(dim))
        self.register_buffer("running_var", np.ones(dim))

    def __call__(self, feat: Tensor) -> Tensor:
        return embed_regions(feat, self)


def embed_regions(feat, emb: RegionEmbedder) -> Tensor:
    feat = F.as_tensor(feat)
    h = F.relu(_channel_linear(feat, emb.w1, emb.b1))
    z = _channel_linear(h, emb.w2, emb.b2)
    D = z.shape[1]
    if emb.training:
        mu = z.mean(axis=(0, 2, 3), keepdims=True)
        centered = z - mu
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        n = z.size // D
        m = emb.momentum
        emb.running_mean = (1 - m) * emb.running_mean + m * mu.data.reshape(D)
        emb.running_var = (1 - m) * emb.running_var + m * var.data.reshape(D) * n / max(n - 1, 1)
        zn = centered / F.sqrt(var + BN_EPS)
    else:
        zn = (z - emb.running_mean.reshape(1, D, 1, 1)) / np.sqrt(emb.running_var.reshape(1, D, 1, 1) + BN_EPS)
    norm = F.sqrt((zn * zn).sum(axis=1, keepdims=True) + 1e-12)
    return zn / norm


class Calibration(Module):
    def __init__(self, scale: float = 10.0, bias: float = -6.0):
        self.gamma = param(scale)
        self.bias = param(bias)


def score_texts(emb, texts, cal: Calibration) -> Tensor:
    """S[b, k, h, w] = gamma * <E[b, :, h, w], t_k> + bias; texts is K×D or B×K×D."""
    emb, texts = F.as_tensor(emb), F.as_tensor(texts)
    B, D, H, W = emb.shape
    if texts.shape[-1] != D:
        raise ContractViolation(f"text dimension {texts.shape[-1]} != embedding dimension {D}")
    sims = texts @ emb.reshape(B, D, H * W)  # B, K, HW
    return (sims * cal.gamma + cal.bias).reshape(B, texts.shape[-2], H, W)


class BoxHead(Module):
    def __init__(self, channels: int, rng: np.random.Generator, reg_max: int = REG_MAX):
        self.reg_max = reg_max
        self.w1 = conv_weight(rng, channels, channels, 3)
        self.b1 = param(np.zeros(channels))
        self.w2 = param(rng.standard_normal((4 * (reg_max + 1), channels)) * 0.01)
        self.b2 = param(np.zeros(4 * (reg_max + 1)))

    def __call__(self, feat: Tensor) -> Tensor:
        """B×4×(R+1)×H×W side-distance logits."""
        B, _, H, W = feat.shape
        h = F.relu(F.conv2d(feat, self.w1, self.b1, padding=1))
        return _channel_linear(h, self.w2, self.b2).reshape(B, 4, self.reg_max + 1, H, W)


def expected_distances(logits: Tensor) -> Tensor:
    """Expectation over bins on the last axis, in bin units."""
    probs = F.softmax(logits, axis=-1)
    bins = np.arange(logits.shape[-1], dtype=np.float64)
    return (probs * bins).sum(axis=-1)


def boxes_from_distances(dist: Tensor, cx: np.ndarray, cy: np.ndarray, stride: float) -> Tensor:
    """(n, 4) side distances in stride units -> (n, 4) pixel boxes, unclipped."""
    d = dist * float(stride)
    x0 = F.as_tensor(cx) - d[:, 0]
    y0 = F.as_tensor(cy) - d[:, 1]
    x1 = F.as_tensor(cx) + d[:, 2]
    y1 = F.as_tensor(cy) + d[:, 3]
    return F.stack([x0, y0, x1, y1], axis=1)


def decode_box(location: int, dist_logits: np.ndarray, geometry: LevelGeometry,
               image_size: tuple[int, int] | None = None) -> np.ndarray:
    """Pixel box at flat ``location`` from 4×(R+1) side logits, clipped to the image."""
    if not 0 <= location < geometry.height * geometry.width:
        raise ContractViolation(f"location {location} outside a {geometry.height}x{geometry.width} map")
    z = dist_logits - dist_logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    d = (p * np.arange(dist_logits.shape[-1])).sum(axis=-1) * geometry.stride
    row, col = divmod(location, geometry.width)
    cx, cy = (col + 0.5) * geometry.stride, (row + 0.5) * geometry.stride
    box = np.array([cx - d[0], cy - d[1], cx + d[2], cy + d[3]])
    if image_size is None:
        image_size = (geometry.height * geometry.stride, geometry.width * geometry.stride)
    h, w = image_size
    return np.clip(box, 0.0, [w, h, w, h])


@dataclass
class Assignment:
    level: int
    locations: np.ndarray  # flat indices on that level
    targets: np.ndarray  # (n, 4) clamped side distances in stride units


def choose_level(box, levels: list[LevelGeometry]) -> int:
    side = math.sqrt((box[2] - box[0]) * (box[3] - box[1]))
    costs = [abs(math.log2(side / g.stride)) for g in levels]
    best = min(costs)
    # ties (up to rounding) go to the coarser (larger-stride) level
    return max((i for i, c in enumerate(costs) if c - best <= 1e-9), key=lambda i: levels[i].stride)


def assign_targets(box, levels: list[LevelGeometry], reg_max: int = REG_MAX, shrink: float = 0.5) -> Assignment:
    """Center-sampling assignment on the level whose stride best matches sqrt(area)."""
    x0, y0, x1, y1 = (float(v) for v in box)
    if x1 <= x0 or y1 <= y0:
        raise ContractViolation(f"box {box} has non-positive area")
    li = choose_level(box, levels)
    geo = levels[li]
    cx, cy = geo.centers()
    bx, by = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    hw, hh = (x1 - x0) * shrink / 2.0, (y1 - y0) * shrink / 2.0
    inside = (np.abs(cx - bx) <= hw) & (np.abs(cy - by) <= hh)
    locs = np.flatnonzero(inside)
    if locs.size == 0:
        locs = np.array([int(np.argmin((cx - bx) ** 2 + (cy - by) ** 2))])
    s = geo.stride
    targets = np.stack([cx[locs] - x0, cy[locs] - y0, x1 - cx[locs], y1 - cy[locs]], axis=1) / s
    return Assignment(li, locs, np.clip(targets, 0.0, reg_max))


def region_grid_labels(geometry: LevelGeometry, image_size: tuple[int, int], grid: GridConfig = GridConfig()) -> np.ndarray:
    """Grid cell label of every location's center: row * cols + col."""
    h, w = image_size
    cx, cy = geometry.centers()
    # same boundary rule as the direction phrases: a center on a cell edge
    # belongs to the lower-index cell
    rows = np.clip(np.ceil(cy / h * grid.rows).astype(int) - 1, 0, grid.rows - 1)
    cols = np.clip(np.ceil(cx / w * grid.cols).astype(int) - 1, 0, grid.cols - 1)
    return (rows * grid.cols + cols).reshape(geometry.height, geometry.width)


class RegionAuxHead(Module):
    def __init__(self, channels: int, classes: int, rng: np.random.Generator):
        self.w = param(rng.standard_normal((classes, channels)) / np.sqrt(channels))
        self.b = param(np.zeros(classes))

    def __call__(self, z: Tensor) -> Tensor:
        return region_aux_logits(z, self)


def region_aux_logits(z, head: RegionAuxHead) -> Tensor:
    return _channel_linear(F.as_tensor(z), head.w, head.b)


@dataclass
class GroundingResult:
    box: list[float]
    score: float
    level: int
    location: int

    def to_json(self) -> dict:
        return {"box": [float(v) for v in self.box], "score": float(self.score),
                "level": int(self.level), "location": int(self.location)}


def select_location(score_maps: list[np.ndarray], strides: list[int]) -> tuple[int, int, float]:
    """Global argmax over (level, location); ties -> coarser level, then lower flat index."""
    order = sorted(range(len(score_maps)), key=lambda i: -strides[i])
    best = None
    for li in order:
        flat = np.asarray(score_maps[li]).reshape(-1)
        loc = int(np.argmax(flat))
        if best is None or flat[loc] > best[2]:
            best = (li, loc, float(flat[loc]))
    return best


def ground(score_maps: list[np.ndarray], box_logits: list[np.ndarray], levels: list[LevelGeometry],
           image_size: tuple[int, int]) -> GroundingResult:
    """Retrieve the best-scoring location and decode its box.

    ``score_maps[l]`` is the H_l×W_l calibrated logit map for the single query,
    ``box_logits[l]`` the matching 4×(R+1)×H_l×W_l side logits.
    """
    li, loc, logit = select_location(score_maps, [g.stride for g in levels])
    geo = levels[li]
    r, c = divmod(loc, geo.width)
    box = decode_box(loc, np.asarray(box_logits[li])[:, :, r, c], geo, image_size)
    score = 1.0 / (1.0 + math.exp(-logit)) if logit >= 0 else math.exp(logit) / (1.0 + math.exp(logit))
    return GroundingResult(box=box.tolist(), score=score, level=li, location=loc)
