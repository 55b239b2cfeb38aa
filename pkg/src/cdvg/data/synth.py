"""Synthetic two-domain scenes with referring captions.

Optical scenes are colored shapes on smooth colored backgrounds. SAR scenes
are bright blobs on a dark background, multiplied by gamma speckle (shape 4,
mean 1). Every scene holds 1-3 objects; one is the referred target and its
caption names size, modality, category and the thirds-grid direction of the
box center. Objects sharing a category never share a direction cell, so the
direction phrase always disambiguates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractViolation
from ..textenc import MODALITIES, direction_from_center

OPTICAL_CATEGORIES = ("ship", "airplane", "tank", "bridge")
SAR_CATEGORIES = ("ship", "tower")
CATEGORIES = {"optical": OPTICAL_CATEGORIES, "sar": SAR_CATEGORIES}
SIZE_CLASSES = ("small", "medium", "large")
SIZE_RANGES = {"small": (8, 12), "medium": (14, 20), "large": (22, 28)}
# (width, height) of the box as fractions of the nominal side
ASPECT = {"ship": (1.0, 0.5), "airplane": (1.0, 1.0), "tank": (0.8, 0.8), "bridge": (1.0, 0.35), "tower": (0.5, 1.0)}
OPTICAL_COLORS = {
    "ship": (235, 235, 240),
    "airplane": (200, 60, 60),
    "tank": (240, 200, 40),
    "bridge": (150, 110, 70),
}
SPECKLE_SHAPE = 4.0
MAX_OVERLAP_IOU = 0.1
MAX_ATTEMPTS = 100
# keep box centers off the thirds boundaries so direction words are unambiguous
BOUNDARY_MARGIN = 1.5


class GenerationError(RuntimeError):
    """Objects could not be placed within the attempt budget."""


def domain_word(domain: str) -> str:
    return MODALITIES.sar if domain == "sar" else MODALITIES.optical


def make_caption(size: str, domain: str, category: str, direction: str) -> str:
    return f"the {size} {domain_word(domain)} {category} in the {direction} of the image"


def bare_caption(domain: str, category: str) -> str:
    return f"the {domain_word(domain)} {category}"


@dataclass(frozen=True)
class ObjectSpec:
    category: str
    size: str
    style: int = 0  # fill variant: 0 solid, 1 outlined/hollow, 2 textured


@dataclass(frozen=True)
class SceneSpec:
    domain: str
    objects: tuple[ObjectSpec, ...]
    size: int = 64
    background_seed: int = 0
    target: int = 0
    # force two same-category objects at mirrored columns (direction probe)
    mirrored_pair: bool = False


@dataclass
class SceneObject:
    category: str
    size: str
    box: tuple[float, float, float, float]
    caption: str


@dataclass
class Sample:
    id: str
    image: np.ndarray  # H×W×3 uint8 (optical) or H×W uint8 (sar)
    domain: str
    caption: str
    box: tuple[float, float, float, float]
    category: str
    objects: list[SceneObject] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def with_(self, **changes) -> "Sample":
        return replace(self, **changes)


def _box_iou(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _near_boundary(center: float, extent: int) -> bool:
    return any(abs(center - extent * k / 3.0) < BOUNDARY_MARGIN for k in (1, 2))


def _box_dims(obj: ObjectSpec, rng: np.random.Generator) -> tuple[int, int]:
    lo, hi = SIZE_RANGES[obj.size]
    side = int(rng.integers(lo, hi + 1))
    fw, fh = ASPECT[obj.category]
    w, h = max(4, int(round(side * fw))), max(4, int(round(side * fh)))
    # ships and bridges lie either way
    if obj.category in ("ship", "bridge") and rng.random() < 0.5:
        w, h = h, w
    return w, h


def _place(dims, size: int, rng: np.random.Generator, taken: list, cells: set, category: str):
    w, h = dims
    for _ in range(MAX_ATTEMPTS):
        x0 = int(rng.integers(1, size - w))
        y0 = int(rng.integers(1, size - h))
        box = (float(x0), float(y0), float(x0 + w), float(y0 + h))
        cx, cy = x0 + w / 2.0, y0 + h / 2.0
        if _near_boundary(cx, size) or _near_boundary(cy, size):
            continue
        if any(_box_iou(box, t) > MAX_OVERLAP_IOU for t in taken):
            continue
        direction = direction_from_center(cx / size, cy / size)
        if (category, direction) in cells:
            continue
        return box, direction
    return None


def _place_mirrored(dims, size: int, rng: np.random.Generator):
    w, h = dims
    for _ in range(MAX_ATTEMPTS):
        x0 = int(rng.integers(1, size // 3 - w // 2))
        y0 = int(rng.integers(1, size - h))
        a = (float(x0), float(y0), float(x0 + w), float(y0 + h))
        b = (float(size - x0 - w), float(y0), float(size - x0), float(y0 + h))
        cx, cy = x0 + w / 2.0, y0 + h / 2.0
        if cx < 0 or _near_boundary(cx, size) or _near_boundary(cy, size):
            continue
        if _box_iou(a, b) > MAX_OVERLAP_IOU:
            continue
        if direction_from_center(cx / size, cy / size).endswith("left"):
            return a, b
    return None


def _background(domain: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    if domain == "sar":
        base = 25.0 + 15.0 * rng.random() + 10.0 * (rng.random() * xx + rng.random() * yy)
        return base[..., None]
    palette = np.array([[60, 110, 60], [50, 80, 140], [120, 120, 110], [140, 120, 80]], dtype=np.float64)
    c0, c1 = palette[rng.integers(len(palette))], palette[rng.integers(len(palette))]
    t = (rng.random() * xx + rng.random() * yy)[..., None] / 2.0
    img = c0 * (1 - t) + c1 * t
    return img + rng.normal(0.0, 6.0, img.shape)


def _shape_mask(category: str, box, size: int, style: int) -> np.ndarray:
    x0, y0, x1, y1 = box
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    inside = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
    u = (xx - (x0 + x1) / 2.0) / ((x1 - x0) / 2.0)
    v = (yy - (y0 + y1) / 2.0) / ((y1 - y0) / 2.0)
    if category in ("ship", "tank"):
        mask = u * u + v * v <= 1.0
    elif category == "airplane":
        mask = (np.abs(u) <= 0.25) | (np.abs(v) <= 0.25)
    elif category == "tower":
        mask = np.abs(u) <= 1.0 - 0.6 * (v + 1.0) / 2.0
    else:
        mask = np.ones_like(inside)
    mask &= inside
    if style == 1:
        core = (np.abs(u) < 0.55) & (np.abs(v) < 0.55)
        mask &= ~core
    return mask


def render(spec: SceneSpec, boxes: list, rng: np.random.Generator) -> np.ndarray:
    size = spec.size
    img = _background(spec.domain, size, rng)
    for obj, box in zip(spec.objects, boxes):
        mask = _shape_mask(obj.category, box, size, obj.style)
        if spec.domain == "sar":
            level = 170.0 + 60.0 * rng.random() if obj.category == "ship" else 140.0 + 50.0 * rng.random()
            img[mask] = level
        else:
            color = np.array(OPTICAL_COLORS[obj.category], dtype=np.float64)
            jitter = rng.normal(0.0, 8.0, 3)
            img[mask] = color + jitter
            if obj.style == 2:
                img[mask] += rng.normal(0.0, 12.0, (int(mask.sum()), 3))
    if spec.domain == "sar":
        speckle = rng.gamma(SPECKLE_SHAPE, 1.0 / SPECKLE_SHAPE, img.shape)
        img = img * speckle
        return np.clip(img[..., 0], 0, 255).astype(np.uint8)
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_sample(spec: SceneSpec, rng: np.random.Generator, sample_id: str = "s0") -> Sample:
    """Place, render and caption one scene; the caption refers to ``spec.target``."""
    if spec.domain not in CATEGORIES:
        raise ContractViolation(f"unknown domain {spec.domain!r}")
    size = spec.size
    boxes: list = []
    directions: list[str] = []
    cells: set = set()
    objects = list(spec.objects)
    start = 0
    if spec.mirrored_pair:
        if len(objects) < 2 or objects[0].category != objects[1].category:
            raise ContractViolation("mirrored pair needs two same-category objects first")
        dims = _box_dims(objects[0], rng)
        placed = _place_mirrored(dims, size, rng)
        if placed is None:
            raise GenerationError("could not place mirrored pair")
        for box in placed:
            cx, cy = (box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0
            d = direction_from_center(cx / size, cy / size)
            boxes.append(box)
            directions.append(d)
            cells.add((objects[0].category, d))
        start = 2
    for obj in objects[start:]:
        placed = _place(_box_dims(obj, rng), size, rng, boxes, cells, obj.category)
        if placed is None:
            raise GenerationError(f"could not place {obj.category} after {MAX_ATTEMPTS} attempts")
        boxes.append(placed[0])
        directions.append(placed[1])
        cells.add((obj.category, placed[1]))
    image = render(spec, boxes, rng)
    scene = [
        SceneObject(o.category, o.size, b, make_caption(o.size, spec.domain, o.category, d))
        for o, b, d in zip(objects, boxes, directions)
    ]
    tgt = scene[spec.target]
    return Sample(sample_id, image, spec.domain, tgt.caption, tgt.box, tgt.category, scene)


def random_scene_spec(rng: np.random.Generator, size: int = 64, optical_fraction: float = 0.75) -> SceneSpec:
    domain = "optical" if rng.random() < optical_fraction else "sar"
    cats = CATEGORIES[domain]
    n = int(rng.choice([1, 2, 3], p=[0.3, 0.4, 0.3]))
    first = ObjectSpec(str(cats[rng.integers(len(cats))]), str(SIZE_CLASSES[rng.integers(3)]), int(rng.integers(3)))
    objs = [first]
    for _ in range(n - 1):
        # half the distractors share the first object's category
        cat = first.category if rng.random() < 0.5 else str(cats[rng.integers(len(cats))])
        objs.append(ObjectSpec(cat, str(SIZE_CLASSES[rng.integers(3)]), int(rng.integers(3))))
    return SceneSpec(domain, tuple(objs), size, int(rng.integers(2**31)), int(rng.integers(n)))


def generate_scenes(count: int, seed: int, size: int = 64, optical_fraction: float = 0.75,
                    prefix: str = "s") -> list[Sample]:
    """``count`` scenes from one seeded stream; unplaceable specs are redrawn."""
    rng = np.random.default_rng(seed)
    out = []
    width = max(5, len(str(count)))
    while len(out) < count:
        spec = random_scene_spec(rng, size, optical_fraction)
        try:
            out.append(generate_sample(spec, rng, f"{prefix}{len(out):0{width}d}"))
        except GenerationError:
            continue
    return out


def generate_probe_scenes(count: int, seed: int, size: int = 64, optical_fraction: float = 0.75):
    """Mirrored-pair scenes: two same-category objects, left and right; caption names one."""
    from ..metrics import ProbeItem

    rng = np.random.default_rng(seed)
    items = []
    while len(items) < count:
        domain = "optical" if rng.random() < optical_fraction else "sar"
        cats = CATEGORIES[domain]
        cat = str(cats[rng.integers(len(cats))])
        sz = str(SIZE_CLASSES[rng.integers(3)])
        obj = ObjectSpec(cat, sz, int(rng.integers(3)))
        target = int(rng.integers(2))
        spec = SceneSpec(domain, (obj, obj), size, int(rng.integers(2**31)), target, mirrored_pair=True)
        try:
            s = generate_sample(spec, rng, f"p{len(items):05d}")
        except GenerationError:
            continue
        other = s.objects[1 - target]
        items.append(ProbeItem(s.image, s.caption, s.box, other.box, domain))
    return items
