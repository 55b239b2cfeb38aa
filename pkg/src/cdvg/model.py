"""Full grounding network: MoE backbone, per-level fusion, contrastive and box heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, MoEConfig, RoutingStats
from .errors import ContractViolation
from .fusion import FusionConfig, TextGuidedFusion
from .heads import (
    REG_MAX,
    BoxHead,
    Calibration,
    GridConfig,
    GroundingResult,
    RegionAuxHead,
    RegionEmbedder,
    ground,
    pyramid_geometry,
    score_texts,
)
from .numerics import F, Tensor, no_grad
from .numerics.module import Module
from .textenc import EMBED_DIM, encode_texts


@dataclass(frozen=True)
class ModelConfig:
    moe: MoEConfig = field(default_factory=MoEConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    embed_dim: int = EMBED_DIM
    reg_max: int = REG_MAX
    grid: GridConfig = field(default_factory=GridConfig)
    use_fusion: bool = True
    use_region_head: bool = True


def to_input(images) -> np.ndarray:
    """uint8 H×W×3 / H×W images -> standardized B×3×H×W float array (gray is replicated)."""
    out = []
    for img in images:
        a = np.asarray(img, dtype=np.float64)
        if a.ndim == 2:
            a = np.repeat(a[..., None], 3, axis=2)
        out.append(a.transpose(2, 0, 1))
    x = np.stack(out)
    return (x / 255.0 - 0.5) / 0.25


@dataclass
class Outputs:
    features: list[Tensor]
    embeddings: list[Tensor]
    box_logits: list[Tensor]  # per level B×4×(R+1)×H×W
    region_logits: Tensor | None
    routing: list[RoutingStats]


class GroundingModel(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        C = cfg.moe.channels
        self.backbone = Backbone(cfg.moe, rng)
        n = len(Backbone.strides)
        self.fusions = [TextGuidedFusion(C, cfg.embed_dim, cfg.fusion, rng) for _ in range(n)] if cfg.use_fusion else []
        self.embedders = [RegionEmbedder(C, cfg.embed_dim, rng) for _ in range(n)]
        self.box_heads = [BoxHead(C, rng, cfg.reg_max) for _ in range(n)]
        self.calibration = Calibration()
        self.region_head = RegionAuxHead(C, cfg.grid.classes, rng) if cfg.use_region_head else None

    @property
    def strides(self) -> tuple[int, ...]:
        return Backbone.strides

    def forward(self, x, fusion_texts) -> Outputs:
        """``fusion_texts`` is N×D (shared) or B×N×D guidance for the fusion gates."""
        feats, routing = self.backbone(F.as_tensor(x))
        if self.fusions:
            feats = [fu(f, fusion_texts) for fu, f in zip(self.fusions, feats)]
        emb = [e(f) for e, f in zip(self.embedders, feats)]
        boxes = [h(f) for h, f in zip(self.box_heads, feats)]
        region = self.region_head(feats[-1]) if self.region_head is not None and self.training else None
        return Outputs(feats, emb, boxes, region, routing)

    def scores(self, out: Outputs, texts) -> list[Tensor]:
        return [score_texts(e, texts, self.calibration) for e in out.embeddings]

    def renormalize(self) -> None:
        for blk in self.backbone.blocks:
            blk.renormalize()

    # -- inference -----------------------------------------------------------

    def ground_batch(self, images, captions: list[str], text_vectors: np.ndarray | None = None) -> list[GroundingResult]:
        """One query per image; each image's features are fused with its own query."""
        if len(images) != len(captions):
            raise ContractViolation("one caption per image is required")
        if not images:
            return []
        x = to_input(images)
        H, W = x.shape[2:]
        t = encode_texts(captions, self.cfg.embed_dim) if text_vectors is None else text_vectors
        was = self.training
        self.eval()
        try:
            with no_grad():
                out = self.forward(x, t[:, None, :])
                maps = [s.data[:, 0] for s in self.scores(out, t[:, None, :])]
                levels = pyramid_geometry(H, W, self.strides)
                results = []
                for b in range(len(images)):
                    results.append(ground([m[b] for m in maps], [bl.data[b] for bl in out.box_logits], levels, (H, W)))
        finally:
            self.train(was)
        return results

    def ground(self, image, caption: str) -> GroundingResult:
        return self.ground_batch([image], [caption])[0]

    def score_maps(self, image, caption: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Raw per-level logit maps and box logits for one query (for exhaustive checks)."""
        x = to_input([image])
        t = encode_texts([caption], self.cfg.embed_dim)
        was = self.training
        self.eval()
        try:
            with no_grad():
                out = self.forward(x, t[:, None, :])
                maps = [s.data[0, 0] for s in self.scores(out, t[:, None, :])]
                boxes = [bl.data[0] for bl in out.box_logits]
        finally:
            self.train(was)
        return maps, boxes
