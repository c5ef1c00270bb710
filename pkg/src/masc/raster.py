"""Image operations and the classical (colour segmentation) plant detector.

Rasters are plain numpy arrays indexed ``[row, col]`` (``[y, x]``); RGB
rasters are ``(H, W, 3)`` uint8, derived maps are float ``(H, W)`` arrays and
masks are bool ``(H, W)`` arrays.  Label maps are int32 with 0 for
background.

The detector chains: median filter -> excess green -> Otsu -> disk erosion
(radius from the mean minor axis of the mask's components) -> Euclidean
distance transform -> regional maxima -> marker watershed.  Every watershed
cell becomes one ``Single`` detection.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy import ndimage

from .detections import Detection, PlantClass
from .errors import BadWindow, ChannelMismatch, DegenerateImage, EmptyMask, MarkerOffMask
from .geometry import Point2

_EIGHT = np.ones((3, 3), dtype=bool)


# -- I/O -----------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path, img):
    from PIL import Image

    Image.fromarray(np.asarray(img)).save(path)


def to_gray8(values) -> np.ndarray:
    """Min-max scale a scalar map (or mask) to uint8 for debug dumps."""
    v = np.asarray(values)
    if v.dtype == bool:
        return v.astype(np.uint8) * 255
    v = v.astype(float)
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.round((v - lo) / (hi - lo) * 255).astype(np.uint8)


# -- filters ---------------------------------------------------------------------


def median_filter(img, m: int = 5, n: int = 5) -> np.ndarray:
    """``m x n`` (rows x cols) median per channel, edge-replicated borders."""
    if m < 1 or n < 1 or m % 2 == 0 or n % 2 == 0:
        raise BadWindow(f"median window must be odd and positive, got {m}x{n}")
    img = np.asarray(img)
    if img.ndim == 2:
        return ndimage.median_filter(img, size=(m, n), mode="nearest")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.median_filter(img[..., c], size=(m, n), mode="nearest")
    return out


def exg(img) -> np.ndarray:
    """Excess green ``2G - R - B`` as float, unclamped."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelMismatch(f"excess green needs an RGB raster, got shape {img.shape}")
    f = img.astype(float)
    return 2.0 * f[..., 1] - f[..., 0] - f[..., 2]


def otsu_threshold(img, bins: int = 256):
    """Otsu's threshold on a ``bins``-bin histogram of the min-max normalised map.

    Returns ``(threshold, mask)``.  ``threshold`` is the largest value that
    falls in the lower class, so ``mask = img > threshold`` holds exactly.
    """
    v = np.asarray(img, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DegenerateImage("Otsu threshold needs at least two distinct values")
    idx = np.minimum(((v - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx.ravel(), minlength=bins).astype(float)
    k = otsu_bin(hist)
    mask = idx > k
    threshold = float(v[~mask].max())
    return threshold, mask


def otsu_bin(hist) -> int:
    """Last bin of the lower class maximising between-class variance."""
    hist = np.asarray(hist, dtype=float)
    p = hist / hist.sum()
    centers = np.arange(len(p))
    w0 = np.cumsum(p)[:-1]
    mu_cum = np.cumsum(p * centers)[:-1]
    mu_t = float((p * centers).sum())
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_t * w0 - mu_cum) ** 2 / (w0 * w1)
    sigma_b[~np.isfinite(sigma_b)] = -1.0
    return int(np.argmax(sigma_b))


# -- morphology ----------------------------------------------------------------


def disk(radius: int) -> np.ndarray:
    """Structuring element ``{(dx, dy): dx^2 + dy^2 <= r^2}``."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def erode_disk(mask, radius: int) -> np.ndarray:
    """Binary erosion by a disk.  Pixels outside the image count as
    foreground, so objects are not eaten away from the image border."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=disk(radius), border_value=1)


def component_minor_axes(mask) -> np.ndarray:
    """Minor axis length of the ellipse with the same second moments as each
    8-connected component.

    Pixels are treated as unit squares, which adds 1/12 to each central
    second moment; the minor axis is then ``4 * sqrt(smallest eigenvalue)``.
    """
    lab, k = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    if k == 0:
        return np.zeros(0)
    ys, xs = np.nonzero(lab)
    ids = lab[ys, xs] - 1
    area = np.bincount(ids, minlength=k).astype(float)
    mx = np.bincount(ids, xs, k) / area
    my = np.bincount(ids, ys, k) / area
    dx = xs - mx[ids]
    dy = ys - my[ids]
    cxx = np.bincount(ids, dx * dx, k) / area + 1.0 / 12
    cyy = np.bincount(ids, dy * dy, k) / area + 1.0 / 12
    cxy = np.bincount(ids, dx * dy, k) / area
    half_tr = (cxx + cyy) / 2
    disc = np.sqrt(((cxx - cyy) / 2) ** 2 + cxy**2)
    lam_min = np.maximum(half_tr - disc, 0.0)
    return 4.0 * np.sqrt(lam_min)


def auto_disk_radius(mask, alpha: float = 0.25) -> int:
    """``round(alpha * mean minor axis)`` over the connected components."""
    axes = component_minor_axes(mask)
    if axes.size == 0:
        raise EmptyMask("mask has no foreground components")
    return int(math.floor(alpha * float(axes.mean()) + 0.5))


# -- distance & markers ----------------------------------------------------------


def distance_transform(mask, normalized: bool = False) -> np.ndarray:
    """Exact Euclidean distance from each foreground pixel to the nearest
    background pixel; the area outside the image counts as background."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    d = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    if normalized:
        top = d.max()
        if top > 0:
            d = d / top
    return d


def _shift(a, dy, dx, fill):
    out = np.full_like(a, fill)
    h, w = a.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = a[ys, xs]
    return out


def regional_maxima(dist, min_separation: float = 1.0) -> List[Point2]:
    """Markers at the regional maxima (8-connected plateaus) of a positive map.

    Each plateau is reported once, at its pixel nearest the plateau centroid
    (so the marker always lies on the plateau).  Markers are then visited by
    decreasing value and dropped when closer than ``min_separation`` to an
    already accepted marker.
    """
    if min_separation < 1:
        raise ValueError("min_separation must be >= 1")
    d = np.asarray(dist, dtype=float)
    if d.size == 0 or not np.any(d > 0):
        return []
    neigh_max = ndimage.maximum_filter(d, footprint=_EIGHT, mode="constant", cval=-np.inf)
    cand = (d >= neigh_max) & (d > 0)
    # a plateau that touches an equal-valued non-candidate pixel is not a
    # regional maximum: that pixel has a higher neighbour somewhere
    leak = np.zeros_like(cand)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nd = _shift(d, dy, dx, np.nan)
            nc = _shift(cand, dy, dx, True)
            leak |= cand & (nd == d) & ~nc
    lab, k = ndimage.label(cand, structure=_EIGHT)
    if k == 0:
        return []
    bad = np.unique(lab[leak])
    ok = np.ones(k + 1, dtype=bool)
    ok[bad] = False
    ok[0] = False

    ys, xs = np.nonzero(lab)
    ids = lab[ys, xs]
    cnt = np.bincount(ids, minlength=k + 1).astype(float)
    cnt[0] = 1
    my = np.bincount(ids, ys, k + 1) / cnt
    mx = np.bincount(ids, xs, k + 1) / cnt
    # nearest plateau pixel to centroid; ties -> row-major first
    dd = (ys - my[ids]) ** 2 + (xs - mx[ids]) ** 2
    order = np.lexsort((ys * d.shape[1] + xs, dd, ids))
    first = np.ones(len(order), dtype=bool)
    first[1:] = ids[order][1:] != ids[order][:-1]
    rep = order[first]
    peaks = [
        (float(d[ys[i], xs[i]]), int(ys[i]), int(xs[i]))
        for i in rep
        if ok[ids[i]]
    ]
    peaks.sort(key=lambda t: (-t[0], t[1], t[2]))

    kept: List[Point2] = []
    sep2 = float(min_separation) ** 2
    for _, y, x in peaks:
        if all((x - p.x) ** 2 + (y - p.y) ** 2 >= sep2 for p in kept):
            kept.append(Point2(x, y))
    return kept


def watershed(dist, markers, mask) -> np.ndarray:
    """Marker-seeded flooding of ``-dist`` restricted to ``mask``.

    Marker ``i`` seeds label ``i + 1``.  Pixels are processed in order of
    decreasing distance value, ties by row-major index; an unlabelled
    4-neighbour takes the label of the pixel that reaches it first.
    Foreground regions that hold no marker stay 0.
    """
    d = np.asarray(dist, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    flat_d = d.ravel()
    flat_m = mask.ravel()
    flat_l = labels.ravel()
    heap = []
    for i, p in enumerate(markers):
        x, y = int(round(p[0])), int(round(p[1]))
        if not (0 <= x < w and 0 <= y < h) or not mask[y, x]:
            raise MarkerOffMask(f"marker {i} at ({p[0]}, {p[1]}) is not on the foreground")
        idx = y * w + x
        if flat_l[idx]:
            raise ValueError(f"marker {i} duplicates the position of another marker")
        flat_l[idx] = i + 1
        heap.append((-flat_d[idx], idx))
    heapq.heapify(heap)
    while heap:
        _, idx = heapq.heappop(heap)
        lab = flat_l[idx]
        y, x = divmod(idx, w)
        for ny, nx in ((y - 1, x), (y, x - 1), (y, x + 1), (y + 1, x)):
            if 0 <= ny < h and 0 <= nx < w:
                j = ny * w + nx
                if flat_m[j] and not flat_l[j]:
                    flat_l[j] = lab
                    heapq.heappush(heap, (-flat_d[j], j))
    return labels


# -- detector ------------------------------------------------------------------


@dataclass
class ClassicalConfig:
    median_size: int = 5
    alpha: float = 0.25  # erosion radius as a fraction of the mean minor axis
    min_separation: Optional[float] = None  # None: half the mean minor axis
    erosion_radius: Optional[int] = None  # None: automatic
    expand_boxes: bool = False  # grow cell boxes back by the erosion radius
    min_exg: float = 20.0  # absolute excess-green floor for vegetation


@dataclass
class Stages:
    """Intermediate maps of one classical detection run."""

    filtered: np.ndarray
    exg: np.ndarray
    mask: np.ndarray
    eroded: np.ndarray
    distance: np.ndarray
    labels: np.ndarray
    threshold: float = 0.0
    radius: int = 0


def segment(img, cfg: Optional[ClassicalConfig] = None) -> Optional[Stages]:
    """Run the segmentation chain; ``None`` when the image holds no vegetation."""
    cfg = cfg or ClassicalConfig()
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelMismatch(f"classical detection needs RGB input, got shape {img.shape}")
    filtered = median_filter(img, cfg.median_size, cfg.median_size)
    g = exg(filtered)
    try:
        thr, mask = otsu_threshold(g)
    except DegenerateImage:
        return None
    # Otsu always splits, even bare soil; require real greenness as well
    mask &= g > cfg.min_exg
    if not mask.any():
        return None
    axes = component_minor_axes(mask)
    if cfg.erosion_radius is not None:
        radius = cfg.erosion_radius
    else:
        radius = int(math.floor(cfg.alpha * float(axes.mean()) + 0.5))
    eroded = erode_disk(mask, radius)
    dist = distance_transform(eroded, normalized=True)
    if cfg.min_separation is not None:
        sep = cfg.min_separation
    else:
        sep = max(1.0, float(axes.mean()) / 2 if axes.size else 1.0)
    markers = regional_maxima(dist, sep)
    markers = _ensure_marker_per_component(dist, eroded, markers)
    labels = watershed(dist, markers, eroded)
    return Stages(filtered, g, mask, eroded, dist, labels, thr, radius)


def _ensure_marker_per_component(dist, mask, markers):
    lab, k = ndimage.label(mask, structure=_EIGHT)
    if k == 0:
        return markers
    has = np.zeros(k + 1, dtype=bool)
    for p in markers:
        has[lab[int(p[1]), int(p[0])]] = True
    out = list(markers)
    missing = [i for i in range(1, k + 1) if not has[i]]
    if missing:
        pos = ndimage.maximum_position(dist, lab, missing)
        for y, x in pos:
            out.append(Point2(int(x), int(y)))
    return out


def cells_to_detections(stages: Stages, expand: bool = False, source: int = 0) -> List[Detection]:
    labels = stages.labels
    h, w = labels.shape
    k = int(labels.max())
    if k == 0:
        return []
    slices = ndimage.find_objects(labels)
    peaks = ndimage.maximum(stages.distance, labels, np.arange(1, k + 1))
    pad = stages.radius if expand else 0
    out = []
    for i, sl in enumerate(slices):
        if sl is None:
            continue
        y0, y1 = sl[0].start, sl[0].stop - 1
        x0, x1 = sl[1].start, sl[1].stop - 1
        bx0 = max(x0 - 0.5 - pad, -0.5)
        bx1 = min(x1 + 0.5 + pad, w - 0.5)
        by0 = max(y0 - 0.5 - pad, -0.5)
        by1 = min(y1 + 0.5 + pad, h - 0.5)
        conf = float(min(max(peaks[i], 0.0), 1.0))
        out.append(
            Detection(
                PlantClass.SINGLE,
                (bx0 + bx1) / 2,
                (by0 + by1) / 2,
                bx1 - bx0,
                by1 - by0,
                conf,
                source=source,
                index=len(out),
            )
        )
    return out


def classical_detect(img, cfg: Optional[ClassicalConfig] = None, source: int = 0) -> List[Detection]:
    """One ``Single`` detection per watershed cell; confidence is the cell's
    peak normalised distance value."""
    cfg = cfg or ClassicalConfig()
    stages = segment(img, cfg)
    if stages is None:
        return []
    return cells_to_detections(stages, cfg.expand_boxes, source)
