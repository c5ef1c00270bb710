"""Detection records, YOLO-style label files, IoU and non-maximum suppression."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .errors import ParseError, RangeError

DEFAULT_IOU_THRESH = 0.25
DEFAULT_CONF_THRESH = 0.25
_SLACK = 1e-6


class PlantClass(IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2

    @property
    def multiplicity(self) -> int:
        return int(self) + 1


@dataclass(frozen=True)
class Detection:
    """An axis-aligned box holding one, two or three plants.

    ``cx, cy, w, h`` are pixels in whatever frame the context implies.
    ``source`` (frame or patch number) and ``index`` (line number within that
    source) only serve as the deterministic tie-break in NMS.
    """

    cls: PlantClass
    cx: float
    cy: float
    w: float
    h: float
    conf: float = 1.0
    source: int = 0
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cls", PlantClass(self.cls))
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")
        if not (0.0 <= self.conf <= 1.0):
            raise ValueError(f"confidence {self.conf} outside [0, 1]")

    @property
    def multiplicity(self) -> int:
        return self.cls.multiplicity

    @property
    def xyxy(self):
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    def moved(self, **kw) -> "Detection":
        return replace(self, **kw)


def to_array(dets: Sequence[Detection]) -> np.ndarray:
    """``(N, 8)`` float array: cls, cx, cy, w, h, conf, source, index."""
    if not dets:
        return np.zeros((0, 8))
    return np.array(
        [(d.cls, d.cx, d.cy, d.w, d.h, d.conf, d.source, d.index) for d in dets],
        dtype=float,
    )


def from_array(arr) -> List[Detection]:
    return [
        Detection(PlantClass(int(r[0])), r[1], r[2], r[3], r[4], r[5], int(r[6]), int(r[7]))
        for r in np.asarray(arr, dtype=float).tolist()
    ]


# -- label files -----------------------------------------------------------


def parse_labels(text: str, img_w: float, img_h: float, source: int = 0) -> List[Detection]:
    """Parse ``class cx cy w h [conf]`` lines normalised to the image size.

    Normalised values are scaled by the image width/height as-is, so a
    normalised ``0.5`` on a 1000 px wide image becomes ``x = 500``.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (5, 6):
            raise ParseError(f"expected 5 or 6 fields, got {len(fields)}", lineno)
        try:
            cls_f = float(fields[0])
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if cls_f != int(cls_f) or int(cls_f) not in (0, 1, 2):
            raise RangeError(f"class id {fields[0]} not in {{0, 1, 2}}", lineno)
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno)
        for v in vals:
            if v < -_SLACK or v > 1 + _SLACK:
                raise RangeError(f"value {v} outside [0, 1]", lineno)
        cx, cy, w, h = (min(max(v, 0.0), 1.0) for v in vals[:4])
        conf = min(max(vals[4], 0.0), 1.0) if len(vals) == 5 else 1.0
        if w <= 0 or h <= 0:
            raise RangeError("box width and height must be positive", lineno)
        out.append(
            Detection(
                PlantClass(int(cls_f)),
                cx * img_w,
                cy * img_h,
                w * img_w,
                h * img_h,
                conf,
                source=source,
                index=lineno - 1,
            )
        )
    return out


def format_labels(
    dets: Iterable[Detection],
    img_w: float,
    img_h: float,
    origin=(0.0, 0.0),
    with_conf: bool = True,
) -> str:
    """Serialise to label text, normalising against an image (or extent)
    whose top-left lies at ``origin``."""
    ox, oy = origin
    lines = []
    for d in dets:
        fields = [
            (d.cx - ox) / img_w,
            (d.cy - oy) / img_h,
            d.w / img_w,
            d.h / img_h,
        ]
        if with_conf:
            fields.append(d.conf)
        lines.append(f"{int(d.cls)} " + " ".join(f"{v:.6f}" for v in fields))
    return "".join(line + "\n" for line in lines)


def read_labels(path, img_w, img_h, source=0) -> List[Detection]:
    return parse_labels(Path(path).read_text(), img_w, img_h, source=source)


def write_labels(path, dets, img_w, img_h, origin=(0.0, 0.0), with_conf=True):
    Path(path).write_text(format_labels(dets, img_w, img_h, origin, with_conf))


# -- overlap ---------------------------------------------------------------


def iou(a: Detection, b: Detection) -> float:
    ax0, ay0, ax1, ay1 = a.xyxy
    bx0, by0, bx1, by1 = b.xyxy
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return min(1.0, inter / union)


def _iou_one_to_many(box, others):
    """IoU of one xyxy box against an (M, 4) xyxy array."""
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (box[2] - box[0]) * (box[3] - box[1])
    area_b = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    return inter / (area_a + area_b - inter)


def nms_order(dets: Sequence[Detection]) -> List[int]:
    """Indices sorted by descending confidence, ties by (source, index), then
    input position."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].conf, dets[i].source, dets[i].index, i))


def nms(
    dets: Sequence[Detection],
    iou_thresh: float = DEFAULT_IOU_THRESH,
    conf_thresh: float = DEFAULT_CONF_THRESH,
) -> List[Detection]:
    """Greedy class-agnostic NMS.

    Boxes below ``conf_thresh`` are dropped first.  A box is suppressed when
    its IoU with an already kept box is strictly greater than ``iou_thresh``.
    Output is in descending-confidence order.

    Candidates are bucketed on a uniform grid whose cell is the largest box
    dimension, so each kept box only tests the 3x3 neighbourhood of cells.
    """
    if not (0.0 <= iou_thresh <= 1.0 and 0.0 <= conf_thresh <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    cand = [d for d in dets if d.conf >= conf_thresh]
    if not cand:
        return []
    order = nms_order(cand)
    n = len(order)
    arr = to_array([cand[i] for i in order])
    xyxy = np.column_stack(
        [
            arr[:, 1] - arr[:, 3] / 2,
            arr[:, 2] - arr[:, 4] / 2,
            arr[:, 1] + arr[:, 3] / 2,
            arr[:, 2] + arr[:, 4] / 2,
        ]
    )
    cell = float(max(arr[:, 3].max(), arr[:, 4].max()))
    gx = np.floor(arr[:, 1] / cell).astype(np.int64)
    gy = np.floor(arr[:, 2] / cell).astype(np.int64)
    buckets: dict = {}
    for i in range(n):
        buckets.setdefault((gx[i], gy[i]), []).append(i)
    buckets = {k: np.array(v) for k, v in buckets.items()}

    alive = np.ones(n, dtype=bool)
    keep = []
    for i in range(n):
        if not alive[i]:
            continue
        keep.append(i)
        alive[i] = False
        neigh = [
            buckets[key]
            for key in (
                (gx[i] + dx, gy[i] + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
            )
            if key in buckets
        ]
        idx = np.concatenate(neigh)
        idx = idx[alive[idx]]
        if idx.size:
            ov = _iou_one_to_many(xyxy[i], xyxy[idx])
            alive[idx[ov > iou_thresh]] = False
    return [cand[order[i]] for i in keep]
