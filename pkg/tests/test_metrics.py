import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdvg.errors import ContractViolation
from cdvg.metrics import (
    EvalRecord,
    ProbeItem,
    cum_iou,
    direction_probe,
    iou,
    mean_iou,
    metrics_report,
    pr_at,
)

from oracles import raster, raster_iou


def random_box(rng, size=40):
    x0, y0 = rng.integers(0, size - 1, size=2)
    return (float(x0), float(y0), float(rng.integers(x0 + 1, size + 1)), float(rng.integers(y0 + 1, size + 1)))


def random_records(rng, n):
    return [EvalRecord(f"r{i}", random_box(rng), random_box(rng), "optical" if rng.random() < 0.7 else "sar")
            for i in range(n)]


def test_iou_matches_raster_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        a, b = random_box(rng), random_box(rng)
        assert iou(a, b) == pytest.approx(raster_iou(a, b), abs=1e-12)


def test_iou_examples():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)
    # touching edges share no area
    assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0


@given(st.lists(st.floats(0, 100), min_size=8, max_size=8))
@settings(max_examples=80, deadline=None)
def test_iou_symmetric_and_bounded(v):
    a = (v[0], v[1], v[0] + v[2] / 2 + 0.1, v[1] + v[3] / 2 + 0.1)
    b = (v[4], v[5], v[4] + v[6] / 2 + 0.1, v[5] + v[7] / 2 + 0.1)
    assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-15)
    assert 0.0 <= iou(a, b) <= 1.0


def test_aggregates_match_raster_oracles():
    rng = np.random.default_rng(1)
    for _ in range(200):
        recs = random_records(rng, int(rng.integers(1, 12)))
        ious = [raster_iou(r.pred, r.gt) for r in recs]
        inter = sum((raster(r.pred) & raster(r.gt)).sum() for r in recs)
        union = sum((raster(r.pred) | raster(r.gt)).sum() for r in recs)
        assert mean_iou(recs) == pytest.approx(100 * sum(ious) / len(ious), abs=1e-9)
        assert cum_iou(recs) == pytest.approx(100 * inter / union, abs=1e-9)
        for t in (0.5, 0.7, 0.9):
            assert pr_at(recs, t) == pytest.approx(100 * sum(x >= t - 1e-12 for x in ious) / len(ious), abs=1e-9)


def test_pr_threshold_is_inclusive():
    # IoU exactly 0.5: 10x10 against 10x5 half
    rec = [EvalRecord("a", (0, 0, 10, 10), (0, 0, 10, 5))]
    assert pr_at(rec, 0.5) == 100.0
    assert pr_at(rec, 0.5000001) == 0.0


def test_pr_monotone_in_threshold():
    recs = random_records(np.random.default_rng(2), 50)
    values = [pr_at(recs, t) for t in np.linspace(0, 1, 21)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_cum_iou_weights_large_boxes():
    small_miss = EvalRecord("s", (0, 0, 2, 2), (10, 10, 12, 12))
    big_hit = EvalRecord("b", (0, 0, 20, 20), (0, 0, 20, 20))
    assert mean_iou([small_miss, big_hit]) == pytest.approx(50.0)
    assert cum_iou([small_miss, big_hit]) == pytest.approx(100 * 400 / 408)


def test_empty_records_rejected():
    for fn in (mean_iou, cum_iou):
        with pytest.raises(ContractViolation):
            fn([])
    with pytest.raises(ContractViolation):
        pr_at([], 0.5)


def test_report_domains_partition():
    recs = random_records(np.random.default_rng(3), 40)
    rep = metrics_report(recs)
    assert rep.n == 40
    assert sum(sub.n for sub in rep.domains.values()) == 40
    d = rep.to_dict()
    assert set(d) >= {"pr50", "pr60", "pr70", "pr80", "pr90", "mean_iou", "cum_iou", "n"}
    opt = [r for r in recs if r.domain == "optical"]
    assert d["optical"]["mean_iou"] == pytest.approx(mean_iou(opt))


def test_direction_probe_counts():
    img = np.zeros((8, 8))
    left, right = (0.0, 0.0, 3.0, 3.0), (5.0, 0.0, 8.0, 3.0)
    items = [ProbeItem(img, "left one", left, right), ProbeItem(img, "right one", right, left)]
    assert direction_probe(lambda im, cap: left, items) == 50.0
    assert direction_probe(lambda im, cap: left if "left" in cap else right, items) == 100.0
    with pytest.raises(ContractViolation):
        direction_probe(lambda im, cap: left, [])
