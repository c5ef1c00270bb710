import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masc.detections import Detection, PlantClass
from masc.errors import EmptyInput, NoRangesFound, NoRowsFound
from masc.layout import (
    CountReport,
    FieldLayout,
    LayoutConfig,
    count_rows,
    detect_ranges,
    detect_rows,
    histogram_peaks,
    nursery_layout,
    production_mode_layout,
)
from masc.synth import FieldSpec, generate_field


def dot(x, y, cls=PlantClass.SINGLE):
    return Detection(cls, x, y, 10, 10)


def brute_profile(pos, start, end, bin, window):
    nb = int(np.ceil((end - start) / bin))
    counts = [0] * nb
    for p in pos:
        counts[min(max(int((p - start) // bin), 0), nb - 1)] += 1
    half = window // 2
    out = []
    for i in range(nb):
        acc = 0
        for k in range(i - half, i + half + 1):
            j = k
            if j < 0:
                j = -j - 1  # symmetric reflection
            if j >= nb:
                j = 2 * nb - j - 1
            acc += counts[j]
        out.append(acc / window)
    return out


def test_two_clusters():
    rng = np.random.default_rng(0)
    pos = np.concatenate([rng.uniform(97, 103, 50), rng.uniform(297, 303, 50)])
    res = histogram_peaks(pos, 400, bin=4, window=5)
    assert len(res.peaks) == 2 and len(res.gaps) == 1
    prof = brute_profile(pos, 0, 400, 4, 5)
    assert np.allclose(res.profile, prof)
    for lo, hi, peak in ((0, 50, res.peaks[0]), (50, 100, res.peaks[1])):
        k = lo + int(np.argmax(prof[lo:hi]))
        assert abs(peak - (k + 0.5) * 4) <= 4
    assert abs(res.gaps[0] - 200) <= 4
    assert abs(res.peaks[0] - 100) <= 4 and abs(res.peaks[1] - 300) <= 4


def test_uniform_scatter_is_flat():
    flats = 0
    for seed in range(20):
        pos = np.random.default_rng(seed).uniform(0, 1000, 2000)
        flats += histogram_peaks(pos, 1000).flat
    assert flats == 20


def test_peak_on_the_edge_is_found():
    res = histogram_peaks(np.r_[np.zeros(20) + 1.0, np.zeros(20) + 150], 160, bin=4, window=3)
    assert len(res.peaks) == 2


def test_histogram_arguments():
    with pytest.raises(ValueError):
        histogram_peaks([1.0], 10, bin=0.5)
    with pytest.raises(ValueError):
        histogram_peaks([1.0], 10, window=4)
    with pytest.raises(EmptyInput):
        histogram_peaks([], 10)


def test_three_ranges_on_synthetic_field():
    f = generate_field(FieldSpec(double_rate=0.1, seed=4))
    h, w = f.image.shape[:2]
    ext = (-0.5, -0.5, w - 0.5, h - 0.5)
    ranges = detect_ranges(f.truth, ext)
    assert len(ranges) == 3
    for (a, b), (ta, tb) in zip(ranges, f.layout.ranges):
        assert a <= ta and tb <= b
    for k, (a, b) in enumerate(ranges):
        members = [d for d in f.truth if a <= d.cy < b]
        assert len(members) == sum(len(r.detections) for r in f.report.rows if r.range_idx == k + 1)


def test_four_rows_at_known_pitch():
    rng = np.random.default_rng(1)
    xs = [50 + 91 * j for j in range(4)]
    dets = [dot(x + rng.uniform(-2, 2), y) for x in xs for y in np.arange(20, 600, 30)]
    rows = detect_rows(dets, (0, 0, 420, 620))
    assert len(rows) == 4
    for (a, b), x in zip(rows, xs):
        assert a < x < b
        assert sum(a <= d.cx < b for d in dets) == 20


def test_rows_closer_than_window_merge():
    dets = [dot(x, y) for x in (100, 130) for y in range(0, 300, 30)]
    assert len(detect_rows(dets, (0, 0, 300, 300))) == 1


def test_empty_and_missing():
    with pytest.raises(EmptyInput):
        detect_ranges([], (0, 0, 10, 10))
    with pytest.raises(EmptyInput):
        production_mode_layout([], (0, 0, 10, 10))
    # everything in a single bin with window 1: the profile is one spike, the
    # mirrored samples equal it, so there is no peak
    lonely = [dot(0.0, 0.0)]
    with pytest.raises(NoRangesFound, match="production"):
        detect_ranges(lonely, (-0.5, -0.5, 0.5, 0.5), LayoutConfig(bin=8, window=1))
    with pytest.raises(NoRowsFound):
        detect_rows(lonely, (-0.5, -0.5, 0.5, 0.5), LayoutConfig(bin=8, window=1))


def test_nursery_counts_match_truth_with_mixed_classes():
    f = generate_field(FieldSpec(double_rate=0.15, triple_rate=0.05, plants_per_row=(12, 20), seed=5))
    h, w = f.image.shape[:2]
    lay = nursery_layout(f.truth, (-0.5, -0.5, w - 0.5, h - 0.5))
    rep = count_rows(lay, f.truth)
    assert rep.as_dict() == f.report.as_dict()
    assert rep.unassigned == []


def test_production_mode_on_continuous_rows():
    f = generate_field(FieldSpec(ranges=1, rows_per_range=5, plants_per_row=60, seed=6))
    h, w = f.image.shape[:2]
    ext = (-0.5, -0.5, w - 0.5, h - 0.5)
    lay = production_mode_layout(f.truth, ext)
    assert len(lay.ranges) == 1 and len(lay.rows_per_range[0]) == 5
    assert count_rows(lay, f.truth).as_dict() == f.report.as_dict()


def test_nursery_forced_into_production_sums_over_ranges():
    f = generate_field(FieldSpec(double_rate=0.1, seed=7))
    h, w = f.image.shape[:2]
    lay = production_mode_layout(f.truth, (-0.5, -0.5, w - 0.5, h - 0.5))
    rep = count_rows(lay, f.truth)
    want = {}
    for r in f.report.rows:
        want[(1, r.row_idx)] = want.get((1, r.row_idx), 0) + r.count
    assert rep.as_dict() == want


def test_unassigned_bucket_and_half_open_intervals():
    lay = FieldLayout(0.0, [(0, 100), (100, 200)], [[(0, 50), (50, 100)], [(0, 100)]])
    dets = [dot(50, 100), dot(100, 100), dot(10, 200), dot(150, 20, PlantClass.DOUBLE), dot(10, 250)]
    rep = count_rows(lay, dets)
    assert rep.as_dict() == {(1, 1): 0, (1, 2): 0, (2, 1): 3}
    assert rep.unassigned_count == 3
    assert rep.total + rep.unassigned_count == sum(d.multiplicity for d in dets)
    assert rep.to_csv() == "range,row,count\n1,1,0\n1,2,0\n2,1,3\n"


def test_layout_json_round_trip():
    lay = FieldLayout(12.0, [(0.0, 10.0)], [[(0.0, 5.0), (5.0, 9.0)]], "nursery", (0, 0, 9, 10))
    back = FieldLayout.from_json(lay.to_json())
    assert back == FieldLayout(12.0, [(0.0, 10.0)], [[(0.0, 5.0), (5.0, 9.0)]], "nursery", (0, 0, 9, 10))


@st.composite
def layouts_and_dets(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    cuts_y = np.sort(rng.uniform(0, 1000, draw(st.integers(0, 4))))
    ys = [0.0, *cuts_y, 1000.0]
    ranges = list(zip(ys[:-1], ys[1:]))
    rows = []
    for _ in ranges:
        cx = np.sort(rng.uniform(50, 450, draw(st.integers(0, 5))))
        bounds = [20.0, *cx, 480.0]
        rows.append(list(zip(bounds[:-1], bounds[1:])))
    n = draw(st.integers(0, 200))
    dets = [
        Detection(PlantClass(int(rng.integers(3))), rng.uniform(-20, 520), rng.uniform(-20, 1020), 5, 5)
        for _ in range(n)
    ]
    return FieldLayout(0.0, ranges, rows), dets


@settings(max_examples=100, deadline=None)
@given(layouts_and_dets())
def test_count_conservation(case):
    lay, dets = case
    rep = count_rows(lay, dets)
    assert rep.total + rep.unassigned_count == sum(d.multiplicity for d in dets)
    seen = [d for r in rep.rows for d in r.detections] + rep.unassigned
    assert len(seen) == len(dets)


@settings(max_examples=10, deadline=None)
@given(st.floats(-5000, 5000), st.floats(-5000, 5000), st.integers(0, 50))
def test_translation_invariance(dx, dy, seed):
    f = generate_field(FieldSpec(ranges=2, rows_per_range=3, plants_per_row=(10, 15), seed=seed))
    h, w = f.image.shape[:2]
    ext = (-0.5, -0.5, w - 0.5, h - 0.5)
    base = count_rows(nursery_layout(f.truth, ext), f.truth)
    # snap the shift to whole bins so float rounding cannot move a boundary
    dx, dy = 8 * round(dx / 8), 8 * round(dy / 8)
    moved = [d.moved(cx=d.cx + dx, cy=d.cy + dy) for d in f.truth]
    ext2 = (ext[0] + dx, ext[1] + dy, ext[2] + dx, ext[3] + dy)
    again = count_rows(nursery_layout(moved, ext2), moved)
    assert again.as_dict() == base.as_dict()
