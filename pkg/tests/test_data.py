from collections import Counter

import numpy as np
import pytest

from cdvg.data import (
    CATEGORIES,
    GEOMETRIC_OPS,
    ObjectSpec,
    SceneObject,
    SceneSpec,
    augment_geometric,
    clean_annotations,
    generate_probe_scenes,
    generate_sample,
    generate_scenes,
    load_corpus,
    mask_captions,
    read_image,
    read_jsonl,
    split_dataset,
    subsample,
    to_record,
    validate_record,
    verify_direction,
    write_corpus,
    write_image,
)
from cdvg.data.synth import GenerationError, Sample, bare_caption
from cdvg.errors import ContractViolation
from cdvg.textenc import DIRECTIONS, direction_from_center, make_orientation_negative


@pytest.fixture(scope="module")
def scenes():
    return generate_scenes(400, seed=11)


def sample_with(box, caption="the small optical ship in the upper left of the image", w=100, h=60):
    img = np.arange(h * w * 3, dtype=np.uint8).reshape(h, w, 3)
    return Sample("x", img, "optical", caption, box, "ship", [SceneObject("ship", "small", box, caption)])


# -- generation ---------------------------------------------------------------

def test_generation_is_deterministic():
    a, b = generate_scenes(20, seed=3), generate_scenes(20, seed=3)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert (x.caption, x.box, x.id) == (y.caption, y.box, y.id)
    c = generate_scenes(20, seed=4)
    assert any(x.image.tobytes() != z.image.tobytes() for x, z in zip(a, c))


def test_boxes_in_bounds_and_captions_agree(scenes):
    for s in scenes:
        x0, y0, x1, y1 = s.box
        assert 0 <= x0 < x1 <= s.width and 0 <= y0 < y1 <= s.height
        assert verify_direction(s).ok
        assert s.caption in [o.caption for o in s.objects]
        assert s.category in CATEGORIES[s.domain]


def test_domain_rendering(scenes):
    opt = next(s for s in scenes if s.domain == "optical")
    sar = next(s for s in scenes if s.domain == "sar")
    assert opt.image.shape == (64, 64, 3)
    assert sar.image.shape == (64, 64)
    # SAR backgrounds are dark; the object region is brighter on average
    x0, y0, x1, y1 = (int(round(v)) for v in sar.box)
    assert sar.image[y0:y1, x0:x1].mean() > sar.image.mean()
    assert "SAR" in sar.caption and "optical" in opt.caption


def test_domain_mix_is_roughly_three_to_one(scenes):
    frac = sum(s.domain == "optical" for s in scenes) / len(scenes)
    assert 0.68 < frac < 0.82


def test_same_category_objects_have_distinct_captions(scenes):
    for s in scenes:
        caps = [o.caption for o in s.objects]
        assert len(caps) == len(set(caps))


def test_unplaceable_spec_fails():
    spec = SceneSpec("optical", [ObjectSpec("bridge", "large", 0)] * 12, size=64, background_seed=0)
    with pytest.raises(GenerationError):
        generate_sample(spec, np.random.default_rng(0))


def test_probe_scenes_are_mirrored_pairs():
    for item in generate_probe_scenes(20, seed=1):
        t, d = item.target, item.distractor
        assert t[2] - t[0] == pytest.approx(d[2] - d[0])
        cx_t, cx_d = (t[0] + t[2]) / 2, (d[0] + d[2]) / 2
        assert cx_t + cx_d == pytest.approx(64.0)
        assert DIRECTIONS.find(item.caption)


# -- cleaning -----------------------------------------------------------------

def rec(i, box, w=100, h=50):
    return {"id": f"r{i}", "box": list(box), "w": w, "h": h}


def test_clean_examples():
    records = [rec(0, (30, 5, 20, 10)), rec(1, (80, 5, 101, 10)), rec(2, (10, 5, 20, 10)),
               rec(3, (5, 9, 6, 9)), rec(4, (-1, 0, 5, 5)), rec(5, (0, 0, 100, 50))]
    kept, removed = clean_annotations(records)
    assert [r["id"] for r in kept] == ["r2", "r5"]
    assert {(r.id, r.reason) for r in removed} == {
        ("r0", "degenerate"), ("r1", "out-of-bounds"), ("r3", "degenerate"), ("r4", "out-of-bounds")}
    assert kept[0] is records[2]


def test_clean_idempotent():
    rng = np.random.default_rng(0)
    records = [rec(i, rng.uniform(-10, 110, size=4)) for i in range(200)]
    once, _ = clean_annotations(records)
    twice, removed = clean_annotations(once)
    assert twice == once and not removed


# -- augmentation ---------------------------------------------------------------

def test_hflip_arithmetic():
    out = augment_geometric(sample_with((10.0, 20.0, 30.0, 40.0), h=100), "hflip")
    assert out.box == (70.0, 20.0, 90.0, 40.0)
    assert "upper right" in out.caption
    assert out.caption.replace("upper right", "upper left") == sample_with((0, 0, 1, 1)).caption


def test_vflip_and_rot180_rewrite():
    s = sample_with((10.0, 5.0, 30.0, 15.0))
    assert "lower left" in augment_geometric(s, "vflip").caption
    assert "lower right" in augment_geometric(s, "rot180").caption


def assert_same(a, b):
    assert a.image.tobytes() == b.image.tobytes()
    assert (a.box, a.caption, a.category, a.id) == (b.box, b.caption, b.category, b.id)
    assert a.objects == b.objects


@pytest.mark.parametrize("op", GEOMETRIC_OPS)
def test_involutions(scenes, op):
    for s in scenes[:60]:
        assert_same(augment_geometric(augment_geometric(s, op), op), s)


def test_rot180_is_hflip_then_vflip(scenes):
    for s in scenes[:60]:
        assert_same(augment_geometric(s, "rot180"), augment_geometric(augment_geometric(s, "hflip"), "vflip"))


def test_augmentation_preserves_area_and_verification(scenes):
    for s in scenes[:100]:
        for op in GEOMETRIC_OPS:
            a = augment_geometric(s, op)
            area = lambda b: (b[2] - b[0]) * (b[3] - b[1])
            assert area(a.box) == pytest.approx(area(s.box))
            assert a.category == s.category
            assert verify_direction(a).ok


def test_unknown_op():
    with pytest.raises(ContractViolation):
        augment_geometric(sample_with((1.0, 1.0, 2.0, 2.0)), "rot90")


# -- verification ---------------------------------------------------------------

def test_verify_flags_mirror_corruption(scenes):
    rng = np.random.default_rng(0)
    flagged = total = 0
    for s in scenes:
        bad = make_orientation_negative(s.caption, rng)
        if bad is None:
            continue
        total += 1
        check = verify_direction(s.with_(caption=bad))
        flagged += not check.ok
        assert check.expected == direction_from_center((s.box[0] + s.box[2]) / 128, (s.box[1] + s.box[3]) / 128)
    assert total > 100 and flagged == total


def test_verify_vacuous_without_direction():
    s = sample_with((10.0, 20.0, 30.0, 40.0), caption="the optical ship")
    check = verify_direction(s)
    assert check.ok and check.found is None


# -- splitting ------------------------------------------------------------------

def uniform_samples(n, domain="optical", category="ship", prefix="u"):
    img = np.zeros((4, 4), np.uint8)
    return [Sample(f"{prefix}{i:05d}", img, domain, "c", (0, 0, 1, 1), category, []) for i in range(n)]


def test_split_sizes():
    sp = split_dataset(uniform_samples(1000), seed=0)
    assert [len(sp[k]) for k in ("train", "val", "test")] == [800, 100, 100]
    sp10 = split_dataset(uniform_samples(10), seed=5)
    assert [len(sp10[k]) for k in ("train", "val", "test")] == [8, 1, 1]


def test_split_disjoint_exhaustive_deterministic(scenes):
    a, b = split_dataset(scenes, seed=2), split_dataset(scenes, seed=2)
    assert a == b
    ids = a["train"] + a["val"] + a["test"]
    assert sorted(ids) == sorted(s.id for s in scenes)
    assert len(set(ids)) == len(ids)
    assert split_dataset(scenes, seed=3) != a


def test_split_stratified_within_one(scenes):
    sp = split_dataset(scenes, seed=0)
    by = {s.id: (s.domain, s.category) for s in scenes}
    sizes = Counter(by.values())
    for name, share in (("train", 0.8), ("val", 0.1), ("test", 0.1)):
        got = Counter(by[i] for i in sp[name])
        for key, n in sizes.items():
            assert abs(got[key] - share * n) <= 1


def test_subsample_exact_and_nested():
    ids = [f"i{k}" for k in range(2000)]
    small, mid, full = (subsample(ids, r, seed=1) for r in (0.3, 0.6, 1.0))
    assert (len(small), len(mid), len(full)) == (600, 1200, 2000)
    assert set(small) <= set(mid) <= set(full)
    with pytest.raises(ContractViolation):
        subsample(ids, 0.0)


# -- masking --------------------------------------------------------------------

def test_mask_counts_and_nesting():
    base = generate_scenes(1000, seed=9)
    m0 = mask_captions(base, 0.0, seed=1)
    assert [s.caption for s in m0] == [s.caption for s in base]
    m3 = mask_captions(base, 0.3, seed=1)
    changed = {s.id for s, o in zip(m3, base) if s.caption != o.caption}
    assert len(changed) == 300
    m1 = mask_captions(base, 0.1, seed=1)
    assert {s.id for s, o in zip(m1, base) if s.caption != o.caption} <= changed
    full = mask_captions(base, 1.0, seed=1)
    assert all(s.caption == bare_caption(s.domain, s.category) for s in full)
    assert all(not DIRECTIONS.find(s.caption) for s in full)


# -- persistence ----------------------------------------------------------------

def test_image_roundtrip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, size=(8, 16, 3), dtype=np.uint8)
    gray = rgb[..., 0].copy()
    write_image(tmp_path / "a.ppm", rgb)
    write_image(tmp_path / "b.pgm", gray)
    assert read_image(tmp_path / "a.ppm").tobytes() == rgb.tobytes()
    assert read_image(tmp_path / "b.pgm").tobytes() == gray.tobytes()
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")
    assert (tmp_path / "b.pgm").read_bytes().startswith(b"P5")


def test_corpus_roundtrip_and_determinism(tmp_path):
    samples = generate_scenes(30, seed=2)
    split = split_dataset(samples, seed=0)
    write_corpus(tmp_path / "a", samples, split)
    write_corpus(tmp_path / "b", generate_scenes(30, seed=2), split_dataset(generate_scenes(30, seed=2), seed=0))
    for f in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    for r in read_jsonl(tmp_path / "a" / "annotations.jsonl"):
        validate_record(r)
    loaded = load_corpus(tmp_path / "a")
    assert not loaded.skipped
    for x, y in zip(loaded.samples, samples):
        assert x.image.tobytes() == y.image.tobytes()
        assert (x.caption, x.id, x.category) == (y.caption, y.id, y.category)
        np.testing.assert_allclose(x.box, y.box)


def test_load_skips_missing_images(tmp_path):
    samples = generate_scenes(5, seed=0)
    write_corpus(tmp_path, samples)
    victim = to_record(samples[2])["image"]
    (tmp_path / victim).unlink()
    rep = load_corpus(tmp_path)
    assert len(rep.samples) == 4
    assert [i for i, _ in rep.skipped] == [samples[2].id]


def test_schema_rejects_bad_records():
    good = to_record(generate_scenes(1, seed=0)[0])
    validate_record(good)
    for bad in ({**good, "domain": "lidar"}, {**good, "extra": 1}, {k: v for k, v in good.items() if k != "box"},
                {**good, "box": [1, 2, 3]}):
        with pytest.raises(ContractViolation):
            validate_record(bad)
