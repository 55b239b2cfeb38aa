"""Synthetic corpus, dataset pipeline and on-disk format."""

from .corpus import (
    ANNOTATION_SCHEMA,
    load_corpus,
    read_image,
    read_jsonl,
    read_split,
    to_record,
    validate_record,
    write_corpus,
    write_image,
)
from .pipeline import (
    GEOMETRIC_OPS,
    DirectionCheck,
    Removal,
    augment_geometric,
    clean_annotations,
    mask_captions,
    split_dataset,
    subsample,
    verify_direction,
)
from .synth import (
    CATEGORIES,
    GenerationError,
    ObjectSpec,
    Sample,
    SceneObject,
    SceneSpec,
    generate_probe_scenes,
    generate_sample,
    generate_scenes,
    make_caption,
)

__all__ = [
    "ANNOTATION_SCHEMA",
    "CATEGORIES",
    "DirectionCheck",
    "GEOMETRIC_OPS",
    "GenerationError",
    "ObjectSpec",
    "Removal",
    "Sample",
    "SceneObject",
    "SceneSpec",
    "augment_geometric",
    "clean_annotations",
    "generate_probe_scenes",
    "generate_sample",
    "generate_scenes",
    "load_corpus",
    "make_caption",
    "mask_captions",
    "read_image",
    "read_jsonl",
    "read_split",
    "split_dataset",
    "subsample",
    "to_record",
    "validate_record",
    "verify_direction",
    "write_corpus",
    "write_image",
]
