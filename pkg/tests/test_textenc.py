import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdvg.data.synth import CATEGORIES, SIZE_CLASSES, make_caption
from cdvg.errors import ContractViolation
from cdvg.textenc import (
    DIRECTION_GRID,
    DIRECTIONS,
    DirectionLexicon,
    NegativeSamplingConfig,
    direction_from_center,
    encode_text,
    encode_texts,
    make_modality_negative,
    make_orientation_negative,
    sample_batch_texts,
)

ALL_DIRECTIONS = [d for row in DIRECTION_GRID for d in row]


def all_captions():
    return [make_caption(sz, dom, cat, d) for dom, cats in CATEGORIES.items() for cat in cats
            for sz in SIZE_CLASSES for d in ALL_DIRECTIONS]


def test_encoding_is_deterministic_and_unit_norm():
    a = encode_text("the large SAR ship in the center of the image")
    b = encode_text("the large SAR ship in the center of the image")
    assert a.tobytes() == b.tobytes()
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)


def test_thousand_distinct_captions_have_distinct_embeddings():
    base = all_captions()
    # the template space is smaller than 1,000, so tag each caption with a scene number
    texts = [f"{c} scene {i}" for i, c in zip(range(1000), itertools.cycle(base))]
    assert len(set(texts)) == 1000
    emb = encode_texts(texts)
    gram = emb @ emb.T
    np.fill_diagonal(gram, -np.inf)
    assert gram.max() < 1.0 - 1e-9


def test_encoder_ignores_case_and_punctuation():
    np.testing.assert_array_equal(encode_text("The SAR ship."), encode_text("the sar ship"))


def test_orientation_negative_examples():
    rng = np.random.default_rng(0)
    assert make_orientation_negative("a plane in the upper left of the optical image", rng) == \
        "a plane in the upper right of the optical image"
    assert make_orientation_negative("a large ship near the dock", rng) is None
    assert make_orientation_negative("lower right", rng) == "lower left"
    assert make_orientation_negative("the tank at the top", rng) == "the tank at the bottom"
    # the centre has no mirror partner
    assert make_orientation_negative("the tank in the center", rng) is None


def test_mirror_table_is_involution():
    for phrase, other in DIRECTIONS.mirror.items():
        assert DIRECTIONS.mirror[other] == phrase


def test_bad_mirror_table_rejected():
    with pytest.raises(ContractViolation):
        DirectionLexicon({"left": "right", "right": "top", "top": "left"})


def test_modality_negative_examples():
    assert make_modality_negative("the SAR ship at the bottom") == "the optical ship at the bottom"
    assert make_modality_negative("two vehicles on a road") is None


@given(st.sampled_from(all_captions()))
@settings(max_examples=60, deadline=None)
def test_modality_swap_is_involution(caption):
    assert make_modality_negative(make_modality_negative(caption)) == caption


@pytest.mark.parametrize("cx,cy,expected", [
    (0.1, 0.1, "upper left"), (0.5, 0.5, "center"), (0.9, 0.5, "right"),
    (0.5, 0.9, "bottom"), (0.9, 0.9, "lower right"), (1 / 3, 0.0, "upper left"), (2 / 3, 1.0, "bottom"),
])
def test_direction_from_center(cx, cy, expected):
    assert direction_from_center(cx, cy) == expected


def test_direction_from_center_out_of_range():
    with pytest.raises(ContractViolation):
        direction_from_center(1.2, 0.5)


POOL = all_captions()


def test_two_positives_get_one_adversarial():
    pos = [make_caption("small", "optical", "ship", "left"), make_caption("large", "sar", "tower", "top")]
    cfg = NegativeSamplingConfig(random_negatives=(0, 0))
    texts, mask = sample_batch_texts(pos, POOL, cfg, np.random.default_rng(1))
    assert len(texts) == 20 and mask.sum() == 2
    mirrored = {make_orientation_negative(p, np.random.default_rng(0)) for p in pos}
    assert len(mirrored & set(texts[2:3])) == 1


@given(st.lists(st.sampled_from(POOL), min_size=1, max_size=12), st.integers(0, 2**16))
@settings(max_examples=50, deadline=None)
def test_batch_texts_shape_and_content(positives, seed):
    texts, mask = sample_batch_texts(positives, POOL, NegativeSamplingConfig(), np.random.default_rng(seed))
    assert len(texts) == 20
    assert len(set(texts)) == 20
    unique = list(dict.fromkeys(positives))
    assert texts[:len(unique)] == unique
    assert mask.sum() == len(unique)


def test_batch_texts_deterministic():
    pos = POOL[:5]
    a = sample_batch_texts(pos, POOL, NegativeSamplingConfig(), np.random.default_rng(7))
    b = sample_batch_texts(pos, POOL, NegativeSamplingConfig(), np.random.default_rng(7))
    assert a[0] == b[0]


def test_capacity_exceeded_by_positives():
    with pytest.raises(ContractViolation):
        sample_batch_texts(POOL[:21], POOL, NegativeSamplingConfig(), np.random.default_rng(0))
