import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from masc import raster as r
from masc.errors import BadWindow, ChannelMismatch, DegenerateImage, EmptyMask, MarkerOffMask
from masc.geometry import Point2

import oracles

SOIL = (128, 98, 70)
LEAF = (60, 150, 50)


def disk_mask(shape, centres, radius):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    m = np.zeros(shape, dtype=bool)
    for cx, cy in centres:
        m |= (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    return m


def paint(mask):
    img = np.empty(mask.shape + (3,), dtype=np.uint8)
    img[:] = SOIL
    img[mask] = LEAF
    return img


# -- median ------------------------------------------------------------------


def test_median_constant_and_salt():
    flat = np.full((9, 9), 40, dtype=np.uint8)
    assert np.array_equal(r.median_filter(flat, 3, 3), flat)
    salt = flat.copy()
    salt[4, 4] = 255
    assert np.array_equal(r.median_filter(salt, 3, 3), flat)


def test_median_matches_naive_sort():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (32, 32)).astype(np.uint8)
    want = np.array(oracles.naive_median(img.tolist(), 5, 5), dtype=np.uint8)
    assert np.array_equal(r.median_filter(img, 5, 5), want)
    rect = np.array(oracles.naive_median(img.tolist(), 3, 7), dtype=np.uint8)
    assert np.array_equal(r.median_filter(img, 3, 7), rect)


def test_median_per_channel():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (12, 10, 3)).astype(np.uint8)
    out = r.median_filter(img, 3, 3)
    for c in range(3):
        assert np.array_equal(out[..., c], np.array(oracles.naive_median(img[..., c].tolist(), 3, 3)))


@pytest.mark.parametrize("m,n", [(4, 3), (3, 0), (0, 0)])
def test_median_bad_window(m, n):
    with pytest.raises(BadWindow):
        r.median_filter(np.zeros((5, 5)), m, n)


# -- excess green -------------------------------------------------------------


def test_exg_examples():
    px = np.array([[[50, 100, 30], [7, 7, 7], [0, 255, 0], [255, 0, 255]]], dtype=np.uint8)
    assert r.exg(px).tolist() == [[120, 0, 510, -510]]
    with pytest.raises(ChannelMismatch):
        r.exg(np.zeros((4, 4)))


# -- Otsu -----------------------------------------------------------------------


def test_otsu_perfect_bimodal():
    img = np.full((10, 10), 10.0)
    img[:, 5:] = 200
    thr, mask = r.otsu_threshold(img)
    assert np.array_equal(mask, img == 200)
    assert thr == 10.0


def test_otsu_constant_raises():
    with pytest.raises(DegenerateImage):
        r.otsu_threshold(np.ones((4, 4)))


def test_otsu_within_one_bin_of_exhaustive_scan():
    rng = np.random.default_rng(2)
    for seed in range(10):
        a = rng.normal(rng.uniform(-50, 0), rng.uniform(5, 20), 3000)
        b = rng.normal(rng.uniform(40, 120), rng.uniform(5, 30), 1500)
        vals = np.concatenate([a, b])
        hist = np.bincount(
            np.minimum(((vals - vals.min()) / np.ptp(vals) * 256).astype(int), 255), minlength=256
        )
        got = r.otsu_bin(hist)
        want = oracles.exhaustive_otsu(vals.tolist())
        assert abs(got - want) <= 1
        thr, mask = r.otsu_threshold(vals.reshape(50, 90))
        assert np.array_equal(mask, vals.reshape(50, 90) > thr)


# -- erosion ------------------------------------------------------------------------


def test_disk_element():
    d = r.disk(2)
    assert d.shape == (5, 5) and d.sum() == 13
    assert r.disk(0).tolist() == [[True]]


def test_erosion_square_set_definition():
    mask = np.zeros((20, 20), dtype=bool)
    mask[5:15, 5:15] = True
    out = r.erode_disk(mask, 2)
    want = np.zeros_like(mask)
    want[7:13, 7:13] = True
    assert np.array_equal(out, want)
    assert np.array_equal(out, np.array(oracles.set_erosion(mask.tolist(), 2)))
    assert np.array_equal(r.erode_disk(mask, 0), mask)


def test_erosion_matches_oracle_on_random_masks():
    rng = np.random.default_rng(3)
    for rad in (1, 2, 3):
        mask = rng.uniform(size=(24, 24)) < 0.8
        assert np.array_equal(r.erode_disk(mask, rad), np.array(oracles.set_erosion(mask.tolist(), rad)))


def test_erosion_negative_radius():
    with pytest.raises(ValueError):
        r.erode_disk(np.ones((3, 3), bool), -1)


masks = arrays(bool, st.tuples(st.integers(1, 20), st.integers(1, 20)))


@settings(max_examples=100, deadline=None)
@given(masks, st.integers(0, 3))
def test_erosion_anti_extensive(mask, rad):
    assert not np.any(r.erode_disk(mask, rad) & ~mask)


@settings(max_examples=100, deadline=None)
@given(masks, st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_erosion_monotone(mask, rad, seed):
    smaller = mask & (np.random.default_rng(seed).uniform(size=mask.shape) < 0.7)
    assert not np.any(r.erode_disk(smaller, rad) & ~r.erode_disk(mask, rad))


# -- minor axis / auto radius -------------------------------------------------------------


def test_minor_axis_matches_moment_oracle():
    mask = np.zeros((12, 16), dtype=bool)
    mask[4:8, 3:13] = True  # 10 wide x 4 tall
    (got,) = r.component_minor_axes(mask)
    pix = [(y, x) for y in range(4, 8) for x in range(3, 13)]
    assert got == pytest.approx(oracles.moment_minor_axis(pix), abs=1e-12)
    assert got == pytest.approx(16 / math.sqrt(12), abs=1e-12)
    assert r.auto_disk_radius(mask) == 1


def test_auto_radius_mean_of_equal_disks():
    one = disk_mask((40, 40), [(12, 12)], 5)
    two = disk_mask((40, 40), [(12, 12), (28, 28)], 5)
    assert r.auto_disk_radius(one) == r.auto_disk_radius(two)
    with pytest.raises(EmptyMask):
        r.auto_disk_radius(np.zeros((5, 5), bool))


def test_minor_axis_random_blobs():
    rng = np.random.default_rng(4)
    mask = rng.uniform(size=(30, 30)) < 0.3
    from scipy import ndimage

    lab, k = ndimage.label(mask, structure=np.ones((3, 3)))
    got = r.component_minor_axes(mask)
    for i in range(1, k + 1):
        pix = list(zip(*np.nonzero(lab == i)))
        assert got[i - 1] == pytest.approx(oracles.moment_minor_axis(pix), abs=1e-9)


# -- distance transform ------------------------------------------------------------------


def test_distance_trivial_cases():
    assert not r.distance_transform(np.zeros((5, 5), bool)).any()
    one = np.zeros((5, 5), bool)
    one[2, 2] = True
    d = r.distance_transform(one)
    assert d[2, 2] == 1.0 and d.sum() == 1.0


def test_distance_matches_brute_force():
    rng = np.random.default_rng(5)
    mask = rng.uniform(size=(64, 64)) < 0.85
    want = np.array(oracles.brute_edt(mask.tolist()))
    assert np.max(np.abs(r.distance_transform(mask) - want)) < 1e-6
    full = np.ones((7, 9), bool)
    assert np.max(np.abs(r.distance_transform(full) - np.array(oracles.brute_edt(full.tolist())))) < 1e-6


def test_distance_normalised():
    mask = disk_mask((30, 30), [(15, 15)], 8)
    d = r.distance_transform(mask, normalized=True)
    assert d.max() == 1.0 and d.min() == 0.0


@settings(max_examples=60, deadline=None)
@given(masks)
def test_distance_is_one_lipschitz(mask):
    d = r.distance_transform(mask)
    assert np.all(np.abs(np.diff(d, axis=0)) <= 1 + 1e-9)
    assert np.all(np.abs(np.diff(d, axis=1)) <= 1 + 1e-9)
    assert np.all(np.abs(d[1:, 1:] - d[:-1, :-1]) <= math.sqrt(2) + 1e-9)


# -- maxima and watershed --------------------------------------------------------------------


def test_maxima_two_disjoint_disks():
    centres = [(15, 20), (45, 22)]
    mask = disk_mask((40, 64), centres, 7)
    d = r.distance_transform(mask, normalized=True)
    peaks = r.regional_maxima(d, 3)
    assert len(peaks) == 2
    # brute force: the argmax inside each disk
    for cx, cy in centres:
        near = min(peaks, key=lambda p: (p.x - cx) ** 2 + (p.y - cy) ** 2)
        assert abs(near.x - cx) <= 1 and abs(near.y - cy) <= 1


def test_maxima_trivial():
    assert len(r.regional_maxima(r.distance_transform(disk_mask((30, 30), [(14, 14)], 6)), 2)) == 1
    assert r.regional_maxima(np.zeros((8, 8))) == []
    with pytest.raises(ValueError):
        r.regional_maxima(np.ones((3, 3)), 0.5)


def test_maxima_plateau_reported_once():
    d = np.zeros((7, 9))
    d[2:5, 2:7] = 1.0
    (p,) = r.regional_maxima(d)
    assert (p.x, p.y) == (4, 3)


def test_maxima_respects_min_separation():
    d = np.zeros((5, 20))
    d[2, 5], d[2, 8], d[2, 15] = 1.0, 0.9, 0.8
    assert [(p.x, p.y) for p in r.regional_maxima(d, 4)] == [(5, 2), (15, 2)]


def test_watershed_splits_touching_disks_on_bisector():
    c1, c2 = (20.0, 25.0), (33.0, 25.0)
    mask = disk_mask((50, 54), [c1, c2], 8)
    d = r.distance_transform(mask, normalized=True)
    lab = r.watershed(d, [Point2(20, 25), Point2(33, 25)], mask)
    assert set(np.unique(lab[mask])) == {1, 2}
    assert not lab[~mask].any()
    bis = (c1[0] + c2[0]) / 2
    ys, xs = np.nonzero(mask)
    for y, x in zip(ys, xs):
        # a pixel more than 1 px beyond the bisector must carry that side's label
        if x < bis - 1:
            assert lab[y, x] == 1
        elif x > bis + 1:
            assert lab[y, x] == 2


def test_watershed_trivial_cases():
    mask = disk_mask((20, 20), [(10, 10)], 5)
    d = r.distance_transform(mask)
    assert np.array_equal(r.watershed(d, [Point2(10, 10)], mask), mask.astype(np.int32))
    assert not r.watershed(d, [], mask).any()
    with pytest.raises(MarkerOffMask):
        r.watershed(d, [Point2(0, 0)], mask)


@settings(max_examples=60, deadline=None)
@given(masks, st.integers(0, 2**32 - 1))
def test_watershed_partitions_marked_components(mask, seed):
    from scipy import ndimage

    d = r.distance_transform(mask)
    rng = np.random.default_rng(seed)
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return
    pick = rng.choice(len(ys), size=min(len(ys), 4), replace=False)
    markers = [Point2(int(xs[i]), int(ys[i])) for i in pick]
    lab = r.watershed(d, markers, mask)
    assert not lab[~mask].any()
    comp, _ = ndimage.label(mask)  # 4-connected, same as the flooding
    seeded = {comp[m.y, m.x] for m in markers}
    for c in seeded:
        assert np.all(lab[comp == c] > 0)
    assert set(np.unique(lab[lab > 0])) <= set(range(1, len(markers) + 1))


# -- classical detector ----------------------------------------------------------------------------


def test_classical_twenty_separated_disks():
    rng = np.random.default_rng(6)
    centres = [(30 + 45 * (i % 5) + rng.uniform(-3, 3), 30 + 45 * (i // 5) + rng.uniform(-3, 3)) for i in range(20)]
    img = paint(disk_mask((210, 250), centres, 8))
    dets = r.classical_detect(img)
    assert len(dets) == 20
    for cx, cy in centres:
        assert any(abs(d.cx - cx) < 2 and abs(d.cy - cy) < 2 for d in dets)


def test_classical_blank_soil():
    img = np.empty((60, 80, 3), np.uint8)
    img[:] = SOIL
    assert r.classical_detect(img) == []
    noisy = np.clip(img + np.random.default_rng(7).normal(0, 6, img.shape), 0, 255).astype(np.uint8)
    assert r.classical_detect(noisy) == []


def test_classical_two_touching_disks():
    img = paint(disk_mask((50, 60), [(22, 25), (37, 25)], 8))
    dets = r.classical_detect(img)
    assert len(dets) == 2
    left, right = sorted(dets, key=lambda d: d.cx)
    for d, (cx, cy) in ((left, (22, 25)), (right, (37, 25))):
        x0, y0, x1, y1 = d.xyxy
        assert x0 < cx < x1 and y0 < cy < y1
    assert left.xyxy[2] <= 30.5 and right.xyxy[0] >= 28.5


def test_segment_stages_and_gray_dump():
    img = paint(disk_mask((40, 40), [(20, 20)], 9))
    st_ = r.segment(img)
    assert st_.mask.dtype == bool and st_.labels.max() == 1
    g8 = r.to_gray8(st_.distance)
    assert g8.dtype == np.uint8 and g8.max() == 255
    assert r.to_gray8(np.zeros((3, 3))).max() == 0
    with pytest.raises(ChannelMismatch):
        r.segment(np.zeros((5, 5)))


def test_image_io_round_trip(tmp_path):
    img = paint(disk_mask((10, 12), [(5, 5)], 3))
    r.write_image(tmp_path / "x.png", img)
    assert np.array_equal(r.read_image(tmp_path / "x.png"), img)
