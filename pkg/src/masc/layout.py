"""Range and row segmentation from detection centroids, and per-row counts.

Detections are expected in the standard orientation: rows run top to bottom,
so ranges are bands stacked along y (separated by horizontal alleys) and the
rows of a range are intervals along x.  Ranges and rows are numbered from 1
in reading order (top to bottom, left to right).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from .detections import Detection
from .errors import EmptyInput, NoRangesFound, NoRowsFound

Interval = Tuple[float, float]
Extent = Tuple[float, float, float, float]  # x0, y0, x1, y1


@dataclass
class LayoutConfig:
    bin: float = 8.0  # pixels per histogram bin
    window: int = 9  # moving-average length in bins (odd)
    prominence: float = 0.10  # peak prominence floor, fraction of profile max
    depth: float = 0.8  # peak prominence floor, fraction of the peak's own height


@dataclass
class Peaks:
    peaks: List[float]
    gaps: List[float]
    profile: np.ndarray  # smoothed counts per bin
    flat: bool = False  # no peak cleared the prominence floor


def histogram_peaks(
    positions, extent, bin: float = 8.0, window: int = 9, prominence: float = 0.10, depth: float = 0.8
) -> Peaks:
    """Peaks and inter-peak gaps of the smoothed 1-D centroid histogram.

    ``extent`` is ``(start, end)`` or a length (start 0).  Counts per bin are
    smoothed by a uniform window of ``window`` bins (reflected at the ends,
    so a cluster against the edge still peaks).  A peak survives when its
    prominence reaches ``prominence`` times the profile maximum and
    ``depth`` times its own height; the second floor rejects the ripple of
    a planted stretch while keeping short rows.  A gap is the midpoint of
    the lowest stretch of the profile between two consecutive peaks.
    """
    if bin < 1:
        raise ValueError("bin must be >= 1")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and positive")
    pos = np.asarray(positions, dtype=float).ravel()
    if pos.size == 0:
        raise EmptyInput("no positions to histogram")
    start, end = (0.0, float(extent)) if np.isscalar(extent) else (float(extent[0]), float(extent[1]))
    nb = max(int(math.ceil((end - start) / bin)), 1)
    idx = np.clip(np.floor((pos - start) / bin).astype(np.int64), 0, nb - 1)
    counts = np.bincount(idx, minlength=nb).astype(float)
    half = window // 2
    padded = np.pad(counts, half, mode="symmetric") if half else counts
    smooth = np.convolve(padded, np.ones(window) / window, mode="valid")[:nb]

    top = float(smooth.max())
    # one mirrored sample each side lets a maximum sit on the first/last bin
    ext = np.concatenate([smooth[1:2], smooth, smooth[-2:-1]]) if nb > 1 else smooth
    off = 1 if nb > 1 else 0
    pk, _ = find_peaks(ext)
    if top > 0 and len(pk):
        prom = _prominences(ext, pk)
        pk = pk[(prom >= prominence * top) & (prom >= depth * ext[pk] - 1e-12 * top)]
    pk = [p - off for p in pk if off <= p < nb + off]
    peaks = [start + (p + 0.5) * bin for p in pk]
    gaps = []
    for a, b in zip(pk[:-1], pk[1:]):
        seg = smooth[a : b + 1]
        low = np.flatnonzero(seg <= seg.min() + 1e-9)
        mid = a + (low[0] + low[-1]) / 2
        gaps.append(start + (mid + 0.5) * bin)
    return Peaks(peaks, gaps, smooth, flat=not peaks)


def _prominences(x, peaks):
    """Peak prominence, with equal-height peaks ranked by position.

    Counts are discrete, so neighbouring ripple peaks often have exactly the
    same height; the usual definition then gives each of them the full
    height.  Here the earlier of two equal peaks counts as the higher one:
    the left search stops at a value ``>=`` the peak, the right search at a
    value ``>`` it.  A search that reaches the border without stopping says
    nothing about a valley on that side (a row cut by the image edge), so
    when only one side is bounded its base alone is used; the highest peak,
    bounded on neither side, is measured from the lower of the two bases.
    """
    out = np.empty(len(peaks))
    n = len(x)
    for k, p in enumerate(peaks):
        v = x[p]
        a = p
        while a > 0 and x[a - 1] == v:  # walk to the plateau edges
            a -= 1
        b = p
        while b < n - 1 and x[b + 1] == v:
            b += 1
        left = np.flatnonzero(x[:a] >= v)
        lo = left[-1] + 1 if left.size else 0
        right = np.flatnonzero(x[b + 1 :] > v)
        hi = b + 1 + right[0] if right.size else n
        base_l, base_r = x[lo : a + 1].min(), x[b:hi].min()
        if left.size and not right.size:
            base = base_l
        elif right.size and not left.size:
            base = base_r
        elif left.size:
            base = max(base_l, base_r)
        else:
            base = min(base_l, base_r)
        out[k] = v - base
    return out


def _intervals(gaps, start, end) -> List[Interval]:
    bounds = [start] + list(gaps) + [end]
    return [(float(bounds[i]), float(bounds[i + 1])) for i in range(len(bounds) - 1)]


def detect_ranges(dets: Sequence[Detection], extent: Extent, cfg: Optional[LayoutConfig] = None) -> List[Interval]:
    cfg = cfg or LayoutConfig()
    if not dets:
        raise EmptyInput("no detections")
    y0, y1 = extent[1], extent[3]
    res = histogram_peaks([d.cy for d in dets], (y0, y1), cfg.bin, cfg.window, cfg.prominence, cfg.depth)
    if not res.peaks:
        raise NoRangesFound("no range peaks found; try the production layout (no alleys)")
    return _intervals(res.gaps, y0, y1)


def detect_rows(dets: Sequence[Detection], extent: Extent, cfg: Optional[LayoutConfig] = None) -> List[Interval]:
    cfg = cfg or LayoutConfig()
    if not dets:
        raise EmptyInput("no detections")
    x0, x1 = extent[0], extent[2]
    res = histogram_peaks([d.cx for d in dets], (x0, x1), cfg.bin, cfg.window, cfg.prominence, cfg.depth)
    if not res.peaks:
        raise NoRowsFound("no row peaks found")
    return _intervals(res.gaps, x0, x1)


@dataclass
class FieldLayout:
    theta: float
    ranges: List[Interval]
    rows_per_range: List[List[Interval]]
    mode: str = "nursery"
    extent: Extent = (0.0, 0.0, 0.0, 0.0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta": self.theta,
                "mode": self.mode,
                "extent": list(self.extent),
                "ranges": [list(r) for r in self.ranges],
                "rows": [[list(iv) for iv in rows] for rows in self.rows_per_range],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text) -> "FieldLayout":
        d = json.loads(text)
        return cls(
            theta=d["theta"],
            ranges=[tuple(r) for r in d["ranges"]],
            rows_per_range=[[tuple(iv) for iv in rows] for rows in d["rows"]],
            mode=d.get("mode", "nursery"),
            extent=tuple(d.get("extent", (0, 0, 0, 0))),
        )


def _members(values, intervals):
    """Interval index per value (half-open, last one closed), -1 if none."""
    values = np.asarray(values, dtype=float)
    out = np.full(len(values), -1, dtype=np.int64)
    for k, (a, b) in enumerate(intervals):
        last = k == len(intervals) - 1
        hit = (values >= a) & ((values <= b) if last else (values < b)) & (out < 0)
        out[hit] = k
    return out


def nursery_layout(dets, extent: Extent, cfg: Optional[LayoutConfig] = None, theta: float = 0.0) -> FieldLayout:
    """Ranges first, then rows inside each range."""
    ranges = detect_ranges(dets, extent, cfg)
    which = _members([d.cy for d in dets], ranges)
    rows = []
    for k in range(len(ranges)):
        members = [d for d, w in zip(dets, which) if w == k]
        rows.append(detect_rows(members, extent, cfg) if members else [])
    return FieldLayout(theta, ranges, rows, "nursery", tuple(extent))


def production_mode_layout(dets, extent: Extent, cfg: Optional[LayoutConfig] = None, theta: float = 0.0) -> FieldLayout:
    """Whole rows: one range over the full height."""
    if not dets:
        raise EmptyInput("no detections")
    rows = detect_rows(dets, extent, cfg)
    return FieldLayout(theta, [(float(extent[1]), float(extent[3]))], [rows], "production", tuple(extent))


@dataclass
class RowCount:
    range_idx: int
    row_idx: int
    count: int
    detections: List[Detection] = field(default_factory=list)


@dataclass
class CountReport:
    rows: List[RowCount]
    unassigned: List[Detection] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(r.count for r in self.rows)

    @property
    def unassigned_count(self) -> int:
        return sum(d.multiplicity for d in self.unassigned)

    def as_dict(self) -> Dict[Tuple[int, int], int]:
        return {(r.range_idx, r.row_idx): r.count for r in self.rows}

    def to_csv(self) -> str:
        lines = ["range,row,count"]
        lines += [f"{r.range_idx},{r.row_idx},{r.count}" for r in self.rows]
        return "\n".join(lines) + "\n"


def count_rows(layout: FieldLayout, dets: Sequence[Detection]) -> CountReport:
    """Assign each detection by centroid to its (range, row); rows add up
    plant multiplicities.  Detections outside every row are kept aside."""
    rng = _members([d.cy for d in dets], layout.ranges)
    buckets: Dict[Tuple[int, int], List[Detection]] = {}
    unassigned = []
    for k, rows in enumerate(layout.rows_per_range):
        sel = [i for i in range(len(dets)) if rng[i] == k]
        col = _members([dets[i].cx for i in sel], rows)
        for i, c in zip(sel, col):
            if c < 0:
                unassigned.append(dets[i])
            else:
                buckets.setdefault((k, int(c)), []).append(dets[i])
    unassigned.extend(dets[i] for i in range(len(dets)) if rng[i] < 0)
    out = []
    for k, rows in enumerate(layout.rows_per_range):
        for c in range(len(rows)):
            members = buckets.get((k, c), [])
            out.append(RowCount(k + 1, c + 1, sum(d.multiplicity for d in members), members))
    return CountReport(out, unassigned)
