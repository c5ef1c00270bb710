"""Synthetic nursery fields and UAV flights with exact ground truth.

Fields are drawn at 100 px/m by default, so the nursery geometry of
0.91 m row spacing, 1.22 m alleys and ~0.30 m plant spacing maps to 91, 122
and 30 pixels.  Rows run top to bottom; ranges are stacked vertically.
Plants are lobed ellipses; a double (triple) is two (three) touching plants
sharing one truth box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import geometry
from .detections import Detection, PlantClass, write_labels
from .errors import SpecInvalid
from .layout import CountReport, FieldLayout, RowCount
from .rawframe_mode import FrameRecord
from .raster import write_image

SOIL = (128, 98, 70)
LEAF = (62, 150, 52)


@dataclass
class FieldSpec:
    ranges: int = 3
    rows_per_range: int = 4
    plants_per_row: Union[int, Tuple[int, int]] = 20  # fixed, or inclusive (lo, hi)
    row_pitch: float = 91.0
    alley_gap: float = 122.0
    plant_spacing: float = 30.0
    double_rate: float = 0.0
    triple_rate: float = 0.0
    weed_density: float = 0.0  # weeds per megapixel
    seed: int = 0
    plant_radius: float = 7.0
    radius_jitter: float = 0.8
    position_jitter: float = 1.5
    row_phase: float = 0.25  # per-row offset along the row, fraction of spacing
    margin: int = 60
    noise: float = 5.0  # soil colour noise (std, 8-bit levels)

    def validate(self):
        if self.ranges < 1 or self.rows_per_range < 1:
            raise SpecInvalid("need at least one range and one row")
        lo, hi = self.count_bounds
        if lo < 0 or hi < lo or hi < 1:
            raise SpecInvalid("bad plants_per_row")
        if not self.alley_gap > self.row_pitch:
            raise SpecInvalid("alley_gap must exceed row_pitch")
        for name in ("double_rate", "triple_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecInvalid(f"{name} must be a probability")
        if self.double_rate + self.triple_rate > 1.0:
            raise SpecInvalid("double_rate + triple_rate exceeds 1")
        if self.weed_density < 0 or self.plant_radius <= 1 or self.plant_spacing <= 0:
            raise SpecInvalid("bad size or density")

    @property
    def count_bounds(self):
        p = self.plants_per_row
        return (p, p) if isinstance(p, (int, np.integer)) else (int(p[0]), int(p[1]))

    @property
    def range_length(self) -> float:
        return self.count_bounds[1] * self.plant_spacing

    @property
    def size(self) -> Tuple[int, int]:
        w = 2 * self.margin + self.rows_per_range * self.row_pitch
        h = 2 * self.margin + self.ranges * self.range_length + (self.ranges - 1) * self.alley_gap
        return int(math.ceil(w)), int(math.ceil(h))


@dataclass
class SynthField:
    image: np.ndarray
    truth: List[Detection]
    report: CountReport
    layout: FieldLayout
    spec: FieldSpec
    weeds: List[Tuple[float, float]] = field(default_factory=list)


def _ellipse(canvas_mask, cx, cy, a, b, angle):
    h, w = canvas_mask.shape
    r = int(math.ceil(max(a, b))) + 1
    x0, x1 = max(int(cx) - r, 0), min(int(cx) + r + 2, w)
    y0, y1 = max(int(cy) - r, 0), min(int(cy) + r + 2, h)
    if x0 >= x1 or y0 >= y1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    c, s = math.cos(angle), math.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    canvas_mask[y0:y1, x0:x1] |= (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _plant(mask, rng, cx, cy, radius):
    """Elliptic core with 2-4 narrow leaf lobes."""
    _ellipse(mask, cx, cy, radius, radius * rng.uniform(0.85, 1.0), rng.uniform(0, math.pi))
    for _ in range(rng.integers(2, 5)):
        ang = rng.uniform(0, 2 * math.pi)
        length = radius * rng.uniform(1.2, 1.5)
        lx = cx + math.cos(ang) * length * 0.55
        ly = cy + math.sin(ang) * length * 0.55
        _ellipse(mask, lx, ly, length * 0.55, radius * 0.28, ang)


_GROUP_OFFSETS = {
    PlantClass.SINGLE: [(0.0, 0.0)],
    PlantClass.DOUBLE: [(0.0, -1.0), (0.0, 1.0)],
    PlantClass.TRIPLE: [(-1.0, -0.6), (1.0, -0.6), (0.0, 1.1)],
}


def generate_field(spec: Optional[FieldSpec] = None) -> SynthField:
    """Render a field and its exact truth (boxes, per-row counts, layout)."""
    spec = spec or FieldSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    w, h = spec.size
    img = np.empty((h, w, 3), dtype=float)
    img[:] = SOIL
    img += rng.normal(0, spec.noise, img.shape)
    leaf = np.zeros((h, w), dtype=bool)

    lo, hi = spec.count_bounds
    truth: List[Detection] = []
    rows: List[RowCount] = []
    ranges, rows_per_range = [], []
    y_start = spec.margin
    for k in range(spec.ranges):
        y_end = y_start + spec.range_length
        ranges.append((y_start, y_end))
        row_ivs = []
        for j in range(spec.rows_per_range):
            x_row = spec.margin + (j + 0.5) * spec.row_pitch
            row_ivs.append((x_row - spec.row_pitch / 2, x_row + spec.row_pitch / 2))
            n_pos = hi
            n = int(rng.integers(lo, hi + 1))
            keep = np.sort(rng.choice(n_pos, size=n, replace=False)) if n < n_pos else np.arange(n_pos)
            phase = rng.uniform(-spec.row_phase, spec.row_phase) * spec.plant_spacing
            members = []
            for i in keep:
                cy = y_start + (i + 0.5) * spec.plant_spacing + phase + rng.uniform(-1, 1) * spec.position_jitter
                cx = x_row + rng.uniform(-1, 1) * spec.position_jitter
                u = rng.uniform()
                if u < spec.triple_rate:
                    cls = PlantClass.TRIPLE
                elif u < spec.triple_rate + spec.double_rate:
                    cls = PlantClass.DOUBLE
                else:
                    cls = PlantClass.SINGLE
                # draw into a clipped local window; a plant never reaches past 4 radii
                reach = int(4 * (spec.plant_radius + spec.radius_jitter)) + 4
                gx0, gy0 = max(int(cx) - reach, 0), max(int(cy) - reach, 0)
                gx1, gy1 = min(int(cx) + reach + 1, w), min(int(cy) + reach + 1, h)
                group = np.zeros((gy1 - gy0, gx1 - gx0), dtype=bool)
                for ox, oy in _GROUP_OFFSETS[cls]:
                    r = spec.plant_radius + rng.uniform(-1, 1) * spec.radius_jitter
                    _plant(group, rng, cx + ox * spec.plant_radius - gx0, cy + oy * spec.plant_radius - gy0, r)
                ys, xs = np.nonzero(group)
                leaf[gy0:gy1, gx0:gx1] |= group
                xs, ys = xs + gx0, ys + gy0
                bx0, bx1 = xs.min() - 0.5, xs.max() + 0.5
                by0, by1 = ys.min() - 0.5, ys.max() + 0.5
                det = Detection(
                    cls,
                    (bx0 + bx1) / 2,
                    (by0 + by1) / 2,
                    bx1 - bx0,
                    by1 - by0,
                    1.0,
                    source=0,
                    index=len(truth),
                )
                truth.append(det)
                members.append(det)
            rows.append(RowCount(k + 1, j + 1, sum(d.multiplicity for d in members), members))
        rows_per_range.append(row_ivs)
        y_start = y_end + spec.alley_gap

    weeds = []
    n_weeds = rng.poisson(spec.weed_density * w * h / 1e6) if spec.weed_density > 0 else 0
    for _ in range(n_weeds):
        wx, wy = rng.uniform(0, w), rng.uniform(0, h)
        _ellipse(leaf, wx, wy, rng.uniform(2, 4), rng.uniform(1.5, 3), rng.uniform(0, math.pi))
        weeds.append((wx, wy))

    shade = rng.normal(0, 6, (h, w, 1))
    img = np.where(leaf[..., None], np.asarray(LEAF, dtype=float) + shade, img)
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    layout = FieldLayout(90.0, ranges, rows_per_range, "nursery", (-0.5, -0.5, w - 0.5, h - 0.5))
    return SynthField(img, truth, CountReport(rows), layout, spec, weeds)


# -- flights -----------------------------------------------------------------------


def _axis_origins(length, frame, stride):
    out = list(range(0, max(length - frame, 0) + 1, stride))
    if out[-1] + frame < length:
        out.append(length - frame)
    return out


def flight_origins(field_size, frame_size, stride) -> List[Tuple[int, int]]:
    """Serpentine (lawn-mower) frame origins covering the field."""
    W, H = field_size
    fw, fh = frame_size
    xs = _axis_origins(W, fw, stride[0])
    ys = _axis_origins(H, fh, stride[1])
    out = []
    for c, x in enumerate(xs):
        col = ys if c % 2 == 0 else ys[::-1]
        out.extend((x, y) for y in col)
    return out


def generate_flight(
    field_img,
    truth: Sequence[Detection],
    frame_size: Tuple[int, int] = (400, 300),
    stride: Tuple[int, int] = (300, 150),
    hom_noise_sigma: float = 0.0,
    seed: int = 0,
    conf_range: Tuple[float, float] = (0.5, 0.95),
    drop: Sequence[Tuple[int, int]] = (),
    drop_rate: float = 0.0,
) -> List[FrameRecord]:
    """Crop overlapping frames and emit pairwise translations.

    A truth box appears in every frame that contains it entirely, with a
    fresh random confidence.  ``drop`` lists ``(frame_id, truth_index)`` pairs
    to omit on purpose; ``drop_rate`` omits boxes at random.  Pairwise
    translations get Gaussian noise of ``hom_noise_sigma`` pixels.
    """
    img = np.asarray(field_img)
    H, W = img.shape[:2]
    fw, fh = min(frame_size[0], W), min(frame_size[1], H)
    if stride[0] >= fw and W > fw or stride[1] >= fh and H > fh:
        raise ValueError("stride must be smaller than the frame so frames overlap")
    rng = np.random.default_rng(seed)
    dropped = set(drop)
    boxes = np.array([d.xyxy for d in truth]) if truth else np.zeros((0, 4))
    frames = []
    prev = None
    for fid, (ox, oy) in enumerate(flight_origins((W, H), (fw, fh), stride)):
        if prev is None:
            pair = geometry.identity()
        else:
            dx = ox - prev[0] + rng.normal(0, hom_noise_sigma) if hom_noise_sigma else ox - prev[0]
            dy = oy - prev[1] + rng.normal(0, hom_noise_sigma) if hom_noise_sigma else oy - prev[1]
            pair = geometry.translation(dx, dy)
        pair = pair.with_frames(fid, fid - 1 if fid else fid)
        inside = (
            (boxes[:, 0] >= ox - 0.5)
            & (boxes[:, 1] >= oy - 0.5)
            & (boxes[:, 2] <= ox + fw - 0.5)
            & (boxes[:, 3] <= oy + fh - 0.5)
        )
        dets = []
        for t in np.flatnonzero(inside):
            if (fid, int(t)) in dropped or (drop_rate and rng.uniform() < drop_rate):
                continue
            d = truth[t]
            dets.append(
                d.moved(
                    cx=d.cx - ox,
                    cy=d.cy - oy,
                    conf=float(np.round(rng.uniform(*conf_range), 6)),
                    source=fid,
                    index=len(dets),
                )
            )
        frames.append(
            FrameRecord(
                fid,
                pair,
                dets,
                image=img[oy : oy + fh, ox : ox + fw].copy(),
                size=(fw, fh),
                origin=(ox, oy),
            )
        )
        prev = (ox, oy)
    return frames


def truth_csv(report: CountReport) -> str:
    return report.to_csv()


def write_flight(directory, frames: Sequence[FrameRecord], images: bool = True):
    """Write the raw-frame directory layout: ``frame_%06d.png``,
    ``frame_%06d.txt`` and ``hom_%06d.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for fr in frames:
        fw, fh = fr.size
        if images and fr.image is not None:
            write_image(d / f"frame_{fr.frame_id:06d}.png", fr.image)
        write_labels(d / f"frame_{fr.frame_id:06d}.txt", fr.detections, fw, fh)
        geometry.save_homography(d / f"hom_{fr.frame_id:06d}.txt", fr.pairwise_h)
