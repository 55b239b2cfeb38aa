"""On-disk corpus: PNM images, JSON-lines annotations, split files, manifest."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from ..errors import ContractViolation
from .synth import Sample, SceneObject

ANNOTATION_SCHEMA = {
    "type": "object",
    "required": ["id", "image", "domain", "w", "h", "box", "caption", "category"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "image": {"type": "string", "minLength": 1},
        "domain": {"enum": ["optical", "sar"]},
        "w": {"type": "integer", "minimum": 1},
        "h": {"type": "integer", "minimum": 1},
        "box": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        "caption": {"type": "string"},
        "category": {"type": "string"},
    },
}
_VALIDATOR = jsonschema.Draft202012Validator(ANNOTATION_SCHEMA)

ANNOTATIONS = "annotations.jsonl"
SCENES = "scenes.jsonl"
MANIFEST = "manifest.json"


def validate_record(record: dict) -> None:
    errors = sorted(_VALIDATOR.iter_errors(record), key=lambda e: list(e.path))
    if errors:
        raise ContractViolation(f"annotation {record.get('id', '?')}: {errors[0].message}")


def write_image(path: Path, image: np.ndarray) -> None:
    """P6 for 3-channel images, P5 for single-channel ones."""
    mode = "RGB" if image.ndim == 3 else "L"
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode=mode).save(path, format="PPM")


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def image_name(sample: Sample) -> str:
    return f"images/{sample.id}.{'pgm' if sample.image.ndim == 2 else 'ppm'}"


def to_record(sample: Sample) -> dict:
    return {
        "id": sample.id,
        "image": image_name(sample),
        "domain": sample.domain,
        "w": int(sample.width),
        "h": int(sample.height),
        "box": [float(v) for v in sample.box],
        "caption": sample.caption,
        "category": sample.category,
    }


def _dump_lines(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_split_files(root: Path, splits: dict[str, list[str]]) -> None:
    (root / "splits").mkdir(parents=True, exist_ok=True)
    for name, ids in splits.items():
        (root / "splits" / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_split(root: str | Path, name: str) -> list[str]:
    path = Path(root) / "splits" / f"{name}.txt"
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def corpus_counts(samples) -> dict[str, dict[str, int]]:
    counts: dict[str, Counter] = {}
    for s in samples:
        counts.setdefault(s.domain, Counter())[s.category] += 1
    return {d: dict(sorted(c.items())) for d, c in sorted(counts.items())}


def write_corpus(root: str | Path, samples: list[Sample], splits: dict[str, list[str]] | None = None,
                 extra_manifest: dict | None = None) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        rec = to_record(s)
        validate_record(rec)
        write_image(root / rec["image"], s.image)
        records.append(rec)
    _dump_lines(root / ANNOTATIONS, records)
    _dump_lines(root / SCENES, (
        {"id": s.id, "objects": [
            {"box": [float(v) for v in o.box], "caption": o.caption, "category": o.category, "size": o.size}
            for o in s.objects]}
        for s in samples))
    if splits is not None:
        write_split_files(root, splits)
    manifest = {
        "scenes": len(samples),
        "counts": corpus_counts(samples),
        "splits": {k: len(v) for k, v in (splits or {}).items()},
        **(extra_manifest or {}),
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root


@dataclass
class LoadReport:
    samples: list[Sample]
    skipped: list[tuple[str, str]]  # (id, reason)


def load_corpus(root: str | Path, ids: list[str] | None = None, annotations: str | Path | None = None) -> LoadReport:
    """Load samples (optionally a subset of ids, in that order); unreadable images are skipped."""
    root = Path(root)
    records = read_jsonl(annotations or root / ANNOTATIONS)
    by_id = {r["id"]: r for r in records}
    scenes = {}
    if (root / SCENES).exists():
        scenes = {row["id"]: row["objects"] for row in read_jsonl(root / SCENES)}
    wanted = ids if ids is not None else [r["id"] for r in records]
    out, skipped = [], []
    for i in wanted:
        rec = by_id.get(i)
        if rec is None:
            skipped.append((i, "missing-annotation"))
            continue
        validate_record(rec)
        try:
            image = read_image(root / rec["image"])
        except (OSError, ValueError) as exc:
            skipped.append((i, f"unreadable-image: {exc}"))
            continue
        objs = [SceneObject(o["category"], o["size"], tuple(o["box"]), o["caption"]) for o in scenes.get(i, [])]
        out.append(Sample(i, image, rec["domain"], rec["caption"], tuple(rec["box"]), rec["category"], objs))
    return LoadReport(out, skipped)
