"""Training loop: batching, text sampling, target assignment, optimization, logging."""

from __future__ import annotations

import contextlib
import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .backbone import load_balance_loss
from .config import RunConfig
from .data.pipeline import GEOMETRIC_OPS, augment_geometric, subsample
from .data.synth import Sample
from .errors import ContractViolation, NumericalFailure
from .heads import (
    assign_targets,
    boxes_from_distances,
    expected_distances,
    pyramid_geometry,
    region_grid_labels,
)
from .losses import box_iou_giou, box_loss, cls_loss, dfl_loss, region_loss, total_loss
from .metrics import EvalRecord, mean_iou
from .model import GroundingModel, Outputs, to_input
from .numerics import AdamW, F, Schedule, cosine_lr
from .textenc import EMBED_DIM, encode_texts, sample_batch_texts

log = logging.getLogger(__name__)


class TextCache:
    """Memoizes encoder output for repeated captions (the encoder itself is stateless)."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        self._vecs: dict[str, np.ndarray] = {}

    def __call__(self, texts: list[str]) -> np.ndarray:
        missing = [t for t in dict.fromkeys(texts) if t not in self._vecs]
        if missing:
            for t, v in zip(missing, encode_texts(missing, self.dim)):
                self._vecs[t] = v
        return np.stack([self._vecs[t] for t in texts])


@dataclass
class BatchTargets:
    cls: np.ndarray  # B×K×L (L = locations over all levels)
    pos_index: list[tuple[int, int, int, int]]  # (b, k, level, loc) per positive
    pos_gt: np.ndarray  # n×4 pixel boxes
    pos_dist: np.ndarray  # n×4 clamped side distances (stride units)


def build_targets(batch: list[Sample], texts: list[str], levels, reg_max: int) -> BatchTargets:
    """Positive (text, location) pairs: every scene object whose caption is in the text list."""
    offsets = np.cumsum([0] + [g.height * g.width for g in levels])
    cls = np.zeros((len(batch), len(texts), offsets[-1]))
    text_index = {t: k for k, t in enumerate(texts)}
    pos, gts, dists = [], [], []
    for b, s in enumerate(batch):
        objects = s.objects or [_target_object(s)]
        for o in objects:
            k = text_index.get(o.caption)
            if k is None:
                continue
            a = assign_targets(o.box, levels, reg_max)
            cls[b, k, offsets[a.level] + a.locations] = 1.0
            for loc, d in zip(a.locations, a.targets):
                pos.append((b, k, a.level, int(loc)))
                gts.append(o.box)
                dists.append(d)
    return BatchTargets(cls, pos, np.asarray(gts, dtype=np.float64).reshape(-1, 4),
                        np.asarray(dists, dtype=np.float64).reshape(-1, 4))


def _target_object(s: Sample):
    from .data.synth import SceneObject

    return SceneObject(s.category, "", s.box, s.caption)


def compute_losses(model: GroundingModel, out: Outputs, texts_vec: np.ndarray, tg: BatchTargets,
                   levels, image_size) -> dict:
    B = out.embeddings[0].shape[0]
    K = texts_vec.shape[0]
    scores = model.scores(out, texts_vec)
    logits = F.concat([s.reshape(B, K, -1) for s in scores], axis=2)

    # gather positive box distributions level by level
    R1 = model.cfg.reg_max + 1
    pred_boxes, pred_logits, order = [], [], []
    for li, geo in enumerate(levels):
        sel = [i for i, p in enumerate(tg.pos_index) if p[2] == li]
        if not sel:
            continue
        hw = geo.height * geo.width
        flat = F.transpose(out.box_logits[li], (0, 3, 4, 1, 2)).reshape(B * hw, 4, R1)
        rows = np.array([tg.pos_index[i][0] * hw + tg.pos_index[i][3] for i in sel])
        lg = flat[rows]
        cx, cy = geo.centers()
        locs = np.array([tg.pos_index[i][3] for i in sel])
        pred_boxes.append(boxes_from_distances(expected_distances(lg), cx[locs], cy[locs], geo.stride))
        pred_logits.append(lg)
        order.extend(sel)
    order = np.asarray(order)
    boxes = F.concat(pred_boxes, axis=0) if len(pred_boxes) > 1 else pred_boxes[0]
    dist_logits = F.concat(pred_logits, axis=0) if len(pred_logits) > 1 else pred_logits[0]
    gt = tg.pos_gt[order]

    iou_t, _ = box_iou_giou(boxes.detach(), gt)
    quality = np.clip(iou_t.data, 0.0, 1.0)
    weights = np.ones_like(tg.cls)
    offsets = np.cumsum([0] + [g.height * g.width for g in levels])
    for q, i in zip(quality, order):
        b, k, li, loc = tg.pos_index[i]
        weights[b, k, offsets[li] + loc] = q

    comps = {
        "cls": cls_loss(logits, tg.cls, np.where(tg.cls == 1, weights, 1.0)),
        "box": box_loss(boxes, gt),
        "dfl": dfl_loss(dist_logits, tg.pos_dist[order]),
    }
    if out.region_logits is not None:
        labels = region_grid_labels(levels[-1], image_size, model.cfg.grid)
        comps["region"] = region_loss(out.region_logits, labels)
    else:
        comps["region"] = F.as_tensor(0.0)
    lbs = [load_balance_loss(st, model.cfg.moe.num_experts) for st in out.routing]
    comps["lb"] = sum(lbs[1:], lbs[0]) * (1.0 / len(lbs))
    return comps


@dataclass
class TrainResult:
    model: GroundingModel
    steps: int
    history: list[dict] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    seconds: float = 0.0
    train_ids: list[str] = field(default_factory=list)


def evaluate_mean_iou(model: GroundingModel, samples: list[Sample], batch_size: int = 64) -> float:
    records = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        res = model.ground_batch([s.image for s in chunk], [s.caption for s in chunk])
        records.extend(EvalRecord(s.id, tuple(r.box), s.box, s.domain) for s, r in zip(chunk, res))
    return mean_iou(records)


def _grad_norm_ok(params) -> bool:
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params)


def train(config: RunConfig, train_samples: list[Sample], val_samples: list[Sample] | None = None,
          log_path: str | Path | None = None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train a fresh model; deterministic for a fixed config when ``config.deterministic``."""
    limits = threadpool_limits(1) if config.deterministic else contextlib.nullcontext()
    with limits:
        return _train(config, train_samples, val_samples, log_path, progress)


def _train(config, train_samples, val_samples, log_path, progress) -> TrainResult:
    if not train_samples:
        raise ContractViolation("no training samples")
    t0 = time.perf_counter()
    ids = [s.id for s in train_samples]
    if config.data.data_ratio < 1.0:
        keep = set(subsample(ids, config.data.data_ratio, config.seed))
        train_samples = [s for s in train_samples if s.id in keep]

    model = GroundingModel(config.model_config_(), seed=config.seed)
    params = model.parameters()
    # decay only weight matrices and kernels; prototypes are renormalized anyway
    no_decay = {i for i, (n, p) in enumerate(model.named_parameters()) if p.ndim < 2 or n.endswith("prototypes")}
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay, no_decay=no_decay)
    bs = config.batch_size
    steps_per_epoch = math.ceil(len(train_samples) / bs)
    schedule = Schedule(config.lr, config.final_lr_factor, steps_per_epoch * config.epochs)
    sampling = config.sampling_()
    rng = np.random.default_rng(config.seed)
    cache = TextCache(model.cfg.embed_dim)
    weights = config.loss_weights_()

    pool = sorted({o.caption for s in train_samples for o in (s.objects or [])} | {s.caption for s in train_samples})
    size = train_samples[0].height
    levels = pyramid_geometry(size, size, model.strides)

    recent: deque = deque(maxlen=10)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    result = TrainResult(model, 0, train_ids=[s.id for s in train_samples])
    step = 0
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(train_samples))
            for start in range(0, len(order), bs):
                batch = [train_samples[i] for i in order[start:start + bs]]
                if config.data.augment:
                    ops = rng.integers(0, len(GEOMETRIC_OPS) + 1, len(batch))
                    batch = [s if o == 0 else augment_geometric(s, GEOMETRIC_OPS[o - 1]) for s, o in zip(batch, ops)]
                positives = [s.caption for s in batch]
                texts, _ = sample_batch_texts(positives, pool, sampling, rng)
                tvec = cache(texts)
                if config.sampling.fusion_texts == "pool":
                    guide = tvec
                else:
                    guide = cache(positives)[:, None, :]
                x = to_input([s.image for s in batch])
                tg = build_targets(batch, texts, levels, model.cfg.reg_max)

                lr = cosine_lr(step, schedule)
                opt.zero_grad()
                out = model.forward(x, guide)
                comps = compute_losses(model, out, tvec, tg, levels, (size, size))
                try:
                    loss, report = total_loss(comps, weights)
                except NumericalFailure:
                    _dump_recent(log_path, recent)
                    raise
                loss.backward()
                if not _grad_norm_ok(params):
                    _dump_recent(log_path, recent)
                    raise NumericalFailure(f"non-finite gradient at step {step}")
                opt.step(lr)
                model.renormalize()

                report.routing = {
                    "routing_entropy": float(np.mean([st.entropy() for st in out.routing])),
                    "expert_load": [float(v) for v in np.mean([st.assignment for st in out.routing], axis=0)],
                }
                row = {"step": step, "epoch": epoch, "lr": lr, **report.to_json()}
                recent.append(row)
                result.history.append(row)
                if log_fh:
                    log_fh.write(json.dumps(row) + "\n")
                if progress:
                    progress(row)
                step += 1
            if val_samples and config.val_every and ((epoch + 1) % config.val_every == 0 or epoch + 1 == config.epochs):
                miou = evaluate_mean_iou(model, val_samples)
                entry = {"epoch": epoch, "step": step, "val_mean_iou": miou}
                result.validation.append(entry)
                log.info("epoch %d val meanIoU %.2f", epoch, miou)
                if log_fh:
                    log_fh.write(json.dumps(entry) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    result.steps = step
    result.seconds = time.perf_counter() - t0
    return result


def _dump_recent(log_path, recent) -> None:
    rows = list(recent)
    if log_path:
        with open(str(log_path) + ".abort.jsonl", "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")
    for r in rows:
        log.error("recent step: %s", json.dumps(r))
