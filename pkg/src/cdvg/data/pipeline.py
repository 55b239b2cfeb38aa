"""Annotation cleaning, geometric augmentation, direction checks, splits, caption masking."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from ..textenc import DIRECTIONS, direction_from_center
from .synth import Sample, SceneObject, bare_caption

GEOMETRIC_OPS = ("hflip", "vflip", "rot180")
SPLIT_NAMES = ("train", "val", "test")


# -- cleaning ---------------------------------------------------------------

@dataclass(frozen=True)
class Removal:
    id: str
    reason: str


def check_box(box, width: int, height: int) -> str | None:
    """Reason code for an invalid box, or None when it is usable."""
    x0, y0, x1, y1 = box
    if not all(math.isfinite(v) for v in box) or x1 <= x0 or y1 <= y0:
        return "degenerate"
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        return "out-of-bounds"
    return None


def clean_annotations(records: list[dict]) -> tuple[list[dict], list[Removal]]:
    """Split annotation records into kept ones and (id, reason) removals.

    Records carry their own image size under ``w`` and ``h``.
    """
    kept, removed = [], []
    for rec in records:
        reason = check_box(rec["box"], rec["w"], rec["h"])
        if reason is None:
            kept.append(rec)
        else:
            removed.append(Removal(rec["id"], reason))
    return kept, removed


# -- geometric augmentation ---------------------------------------------------

def _transform_box(box, op: str, w: int, h: int):
    x0, y0, x1, y1 = box
    if op in ("hflip", "rot180"):
        x0, x1 = w - x1, w - x0
    if op in ("vflip", "rot180"):
        y0, y1 = h - y1, h - y0
    return (float(x0), float(y0), float(x1), float(y1))


def _transform_image(img: np.ndarray, op: str) -> np.ndarray:
    if op == "hflip":
        return np.ascontiguousarray(img[:, ::-1])
    if op == "vflip":
        return np.ascontiguousarray(img[::-1])
    return np.ascontiguousarray(img[::-1, ::-1])


def rewrite_direction(caption: str, box, w: int, h: int) -> str:
    """Replace the direction phrase with the one matching ``box``'s center."""
    cx, cy = (box[0] + box[2]) / 2.0 / w, (box[1] + box[3]) / 2.0 / h
    phrase = direction_from_center(cx, cy)
    # right to left so earlier offsets stay valid
    for start, end, _ in reversed(DIRECTIONS.find(caption)):
        caption = caption[:start] + phrase + caption[end:]
    return caption


def augment_geometric(sample: Sample, op: str) -> Sample:
    """Flip or rotate image and boxes; direction phrases are recomputed from the new centers."""
    if op not in GEOMETRIC_OPS:
        raise ContractViolation(f"unknown geometric op {op!r}; expected one of {GEOMETRIC_OPS}")
    w, h = sample.width, sample.height
    box = _transform_box(sample.box, op, w, h)
    objects = []
    for o in sample.objects:
        ob = _transform_box(o.box, op, w, h)
        objects.append(SceneObject(o.category, o.size, ob, rewrite_direction(o.caption, ob, w, h)))
    return sample.with_(
        image=_transform_image(sample.image, op),
        box=box,
        caption=rewrite_direction(sample.caption, box, w, h),
        objects=objects,
    )


# -- verification ------------------------------------------------------------

@dataclass(frozen=True)
class DirectionCheck:
    id: str
    ok: bool
    expected: str
    found: str | None


def verify_direction(sample: Sample) -> DirectionCheck:
    """Does the caption's direction phrase match the grid cell of the box center?"""
    cx = (sample.box[0] + sample.box[2]) / 2.0 / sample.width
    cy = (sample.box[1] + sample.box[3]) / 2.0 / sample.height
    expected = direction_from_center(cx, cy)
    hits = DIRECTIONS.find(sample.caption)
    if not hits:
        return DirectionCheck(sample.id, True, expected, None)
    bad = [h[2] for h in hits if h[2] != expected]
    found = bad[0] if bad else hits[0][2]
    return DirectionCheck(sample.id, not bad, expected, found)


# -- splitting ---------------------------------------------------------------

def split_dataset(samples, seed: int = 0, ratios=(8, 1, 1)) -> dict[str, list[str]]:
    """Stratified (domain, category) split.

    Val and test take their shares rounded half-up, train keeps the rest, so every
    split stays within one sample of its exact share in each stratum.
    """
    total = sum(ratios)
    strata: dict[tuple, list[str]] = defaultdict(list)
    for s in samples:
        strata[(s.domain, s.category)].append(s.id)
    rng = np.random.default_rng(seed)
    out = {name: [] for name in SPLIT_NAMES}
    for key in sorted(strata):
        ids = sorted(strata[key])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n = len(ids)
        n_val = (2 * n * ratios[1] + total) // (2 * total)
        n_test = (2 * n * ratios[2] + total) // (2 * total)
        out["val"].extend(ids[:n_val])
        out["test"].extend(ids[n_val:n_val + n_test])
        out["train"].extend(ids[n_val + n_test:])
    return out


def subsample(ids: list[str], ratio: float, seed: int = 0) -> list[str]:
    """Nested seeded subset: smaller ratios keep a prefix of the same permutation."""
    if not 0 < ratio <= 1:
        raise ContractViolation(f"data ratio must lie in (0, 1], got {ratio}")
    order = np.random.default_rng(seed).permutation(len(ids))
    keep = int(math.floor(ratio * len(ids) + 0.5))
    return [ids[i] for i in sorted(order[:keep])]


# -- caption masking ---------------------------------------------------------

def mask_captions(samples: list[Sample], ratio: float, seed: int = 0) -> list[Sample]:
    """Strip size and direction from round(ratio * N) captions.

    The chosen subset is a prefix of one seeded permutation, so the masked set
    for a smaller ratio is contained in the set for a larger one.
    """
    if not 0 <= ratio <= 1:
        raise ContractViolation(f"mask ratio must lie in [0, 1], got {ratio}")
    count = int(math.floor(ratio * len(samples) + 0.5))
    chosen = set(np.random.default_rng(seed).permutation(len(samples))[:count].tolist())
    return [
        s.with_(caption=bare_caption(s.domain, s.category)) if i in chosen else s
        for i, s in enumerate(samples)
    ]
