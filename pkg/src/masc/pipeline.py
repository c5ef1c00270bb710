"""Counting stage shared by both input modes, plus artifact writers.

Both modes end with global detections and an extent (pixel-edge rectangle
in global coordinates).  From there: estimate row orientation on the excess
green map, rotate detections so rows run top to bottom, segment ranges and
rows, count.
"""
from __future__ import annotations

import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import geometry
from .detections import Detection, PlantClass, format_labels
from .layout import CountReport, FieldLayout, LayoutConfig, count_rows, nursery_layout, production_mode_layout
from .orientation import AngleEstimate, radon_variance, rotation_homography, rotated_shape
from .raster import exg

log = logging.getLogger(__name__)

CLASS_COLORS = {
    PlantClass.SINGLE: (255, 0, 255),  # magenta
    PlantClass.DOUBLE: (0, 0, 255),  # blue
    PlantClass.TRIPLE: (0, 200, 0),  # green
}
LAYOUT_COLOR = (255, 255, 0)
COUNT_COLOR = (255, 0, 0)


class Timer:
    """Collects wall-clock seconds per named stage."""

    def __init__(self):
        self.stages: Dict[str, float] = {}

    @contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            dt = time.perf_counter() - t0
            self.stages[name] = self.stages.get(name, 0.0) + dt
            log.info("stage %-12s %.3f s", name, dt)


def orientation_map(rgb, max_dim: int = 512) -> np.ndarray:
    """Excess green of a block-mean reduced copy of ``rgb``."""
    img = np.asarray(rgb, dtype=float)
    h, w = img.shape[:2]
    f = max(1, int(math.ceil(max(h, w) / max_dim)))
    if f > 1:
        h2, w2 = h // f, w // f
        img = img[: h2 * f, : w2 * f].reshape(h2, f, w2, f, 3).mean(axis=(1, 3))
    return exg(img)


@dataclass
class CountResult:
    layout: FieldLayout
    report: CountReport
    oriented: List[Detection]  # detections in the layout frame
    to_layout: geometry.Homography  # global -> layout frame
    estimate: Optional[AngleEstimate] = None

    @property
    def correction(self) -> float:
        return self.layout.theta


def count_stage(
    dets: Sequence[Detection],
    extent: Tuple[float, float, float, float],
    orientation: Union[str, float] = "auto",
    orient_map: Optional[np.ndarray] = None,
    layout_cfg: Optional[LayoutConfig] = None,
    field_mode: str = "nursery",
    timer: Optional[Timer] = None,
) -> CountResult:
    """Orient, segment and count.

    ``orientation`` is ``"auto"`` (Radon variance on ``orient_map``, the
    excess green of the scene), ``"none"``, or the row angle in degrees.
    The layout's ``theta`` records the rotation actually applied.
    """
    timer = timer or Timer()
    estimate = None
    with timer("orientation"):
        if orientation == "none":
            correction = 0.0
        elif orientation == "auto":
            if orient_map is None:
                correction = 0.0
            else:
                try:
                    estimate = radon_variance(orient_map)
                    correction = estimate.correction
                except Exception as exc:  # constant map etc.
                    log.warning("orientation estimate failed (%s); not rotating", exc)
                    correction = 0.0
        else:
            correction = 90.0 - float(orientation)
            correction = (correction + 90.0) % 180.0 - 90.0

        x0, y0, x1, y1 = extent
        W, H = x1 - x0, y1 - y0
        shift = geometry.translation(-x0 - 0.5, -y0 - 0.5)
        if correction:
            to_layout = geometry.compose([rotation_homography(W, H, correction), shift])
            nw, nh = rotated_shape(W, H, correction)
        else:
            to_layout = shift
            nw, nh = W, H
        boxes = geometry.project_boxes(to_layout, [(d.cx, d.cy, d.w, d.h) for d in dets])
        oriented = [
            d.moved(cx=float(b[0]), cy=float(b[1]), w=float(b[2]), h=float(b[3])) for d, b in zip(dets, boxes)
        ]
        lext = (-0.5, -0.5, nw - 0.5, nh - 0.5)

    with timer("layout"):
        if field_mode == "production":
            layout = production_mode_layout(oriented, lext, layout_cfg, theta=correction)
        elif field_mode == "nursery":
            layout = nursery_layout(oriented, lext, layout_cfg, theta=correction)
        else:
            raise ValueError(f"unknown field mode {field_mode!r}")
    with timer("counting"):
        report = count_rows(layout, oriented)
    if report.unassigned:
        log.warning("%d detections fell outside every row", len(report.unassigned))
    return CountResult(layout, report, oriented, to_layout, estimate)


# -- artifacts -------------------------------------------------------------------


def write_global_labels(path, dets, extent):
    """Labels normalised to the extent, measured from its first pixel centre
    so that reading them back at the extent size is lossless."""
    x0, y0, x1, y1 = extent
    Path(path).write_text(format_labels(dets, x1 - x0, y1 - y0, origin=(x0 + 0.5, y0 + 0.5)))


def layout_segments(result: CountResult):
    """Range and row boundary segments in layout coordinates."""
    lay = result.layout
    ex0, _, ex1, _ = lay.extent
    segs = []
    for (ya, yb), rows in zip(lay.ranges, lay.rows_per_range):
        segs.append(((ex0, ya), (ex1, ya)))
        segs.append(((ex0, yb), (ex1, yb)))
        for xa, xb in rows:
            segs.append(((xa, ya), (xa, yb)))
        if rows:
            segs.append(((rows[-1][1], ya), (rows[-1][1], yb)))
    return segs


def render_overlay(background, dets, result: CountResult, origin=(0.0, 0.0)) -> np.ndarray:
    """Boxes coloured by class, yellow layout lines, red per-row counts.

    ``origin`` is the global coordinate of background pixel (0, 0).
    """
    from PIL import Image, ImageDraw

    img = Image.fromarray(np.asarray(background, dtype=np.uint8)).convert("RGB")
    draw = ImageDraw.Draw(img)
    ox, oy = origin
    for d in dets:
        x0, y0, x1, y1 = d.xyxy
        draw.rectangle([x0 - ox, y0 - oy, x1 - ox, y1 - oy], outline=CLASS_COLORS[d.cls], width=2)
    back = geometry.invert(result.to_layout)
    for a, b in layout_segments(result):
        pa = geometry.project_point(back, a)
        pb = geometry.project_point(back, b)
        draw.line([pa.x - ox, pa.y - oy, pb.x - ox, pb.y - oy], fill=LAYOUT_COLOR, width=2)
    lay = result.layout
    k = 0
    for (ya, yb), rows in zip(lay.ranges, lay.rows_per_range):
        for xa, xb in rows:
            c = geometry.project_point(back, ((xa + xb) / 2, (ya + yb) / 2))
            draw.text((c.x - ox, c.y - oy), str(result.report.rows[k].count), fill=COUNT_COLOR)
            k += 1
    return np.asarray(img)


def write_artifacts(out_dir, dets, extent, result: CountResult, timings: Optional[Dict[str, float]] = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_global_labels(out / "global.txt", dets, extent)
    (out / "layout.json").write_text(result.layout.to_json() + "\n")
    (out / "counts.csv").write_text(result.report.to_csv())
    if result.estimate is not None:
        (out / "orientation.csv").write_text(result.estimate.to_csv())
    if timings:
        lines = [f"{k},{v:.6f}" for k, v in timings.items()]
        (out / "timings.csv").write_text("stage,seconds\n" + "\n".join(lines) + "\n")
