"""Raw-frame input: chain pairwise homographies into frame-0 coordinates,
project every frame's boxes there, and keep one box per plant by NMS.

Directory layout::

    frame_000000.png   optional image (any format Pillow reads)
    frame_000000.txt   labels, normalised to the frame size
    hom_000001.txt     9 decimals, maps frame 1 pixels into frame 0

``hom_<i>`` holds the factor ``H_{i-1 <- i}``.  When a dataset stores the
opposite direction (frame ``i-1`` into frame ``i``) pass
``invert_pairwise=True``.
"""
from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import geometry
from .detections import DEFAULT_CONF_THRESH, DEFAULT_IOU_THRESH, Detection, nms, read_labels
from .errors import ExtentTooLarge, MissingImage, PointAtInfinity, SingularMatrix
from .raster import read_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp", ".ppm")
DEFAULT_PIXEL_BUDGET = 400_000_000


@dataclass
class FrameRecord:
    """One frame: ``pairwise_h`` maps this frame's pixels into the previous
    frame (identity for frame 0); detections are in frame pixels."""

    frame_id: int
    pairwise_h: geometry.Homography
    detections: List[Detection] = field(default_factory=list)
    image: Optional[np.ndarray] = None
    image_path: Optional[Path] = None
    size: Optional[Tuple[int, int]] = None  # (width, height)
    origin: Optional[Tuple[float, float]] = None  # true placement, synthetic flights only

    def load_image(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.image_path is None or not Path(self.image_path).exists():
            raise MissingImage(f"frame {self.frame_id} has no image")
        return read_image(self.image_path)


@dataclass
class GlobalScene:
    detections: List[Detection]
    extent: Tuple[float, float, float, float]  # x0, y0, x1, y1 in frame-0 pixels

    @property
    def size(self) -> Tuple[int, int]:
        x0, y0, x1, y1 = self.extent
        return int(np.ceil(x1 - x0)), int(np.ceil(y1 - y0))


_FRAME_RE = re.compile(r"^(frame|hom)_(\d+)$")


def load_frames(directory, invert_pairwise: bool = False, frame_size=None) -> List[FrameRecord]:
    """Read a raw-frame directory.  Frame ids must run densely from 0.
    Frames without a label file have no detections.  ``frame_size`` is
    ``(width, height)`` and is only needed when images are absent."""
    d = Path(directory)
    images, labels, homs = {}, {}, {}
    for p in d.iterdir():
        m = _FRAME_RE.match(p.stem)
        if not m:
            continue
        i = int(m.group(2))
        if m.group(1) == "hom" and p.suffix == ".txt":
            homs[i] = p
        elif p.suffix == ".txt":
            labels[i] = p
        elif p.suffix.lower() in IMAGE_SUFFIXES:
            images[i] = p
    ids = sorted(set(images) | set(labels) | set(homs))
    if not ids:
        raise FileNotFoundError(f"no frames found in {d}")
    if ids != list(range(len(ids))):
        raise ValueError(f"frame ids in {d} are not dense from 0")

    frames = []
    for i in ids:
        if i == 0:
            pair = geometry.identity(0)
        else:
            if i not in homs:
                raise FileNotFoundError(f"missing hom_{i:06d}.txt")
            pair = geometry.load_homography(homs[i])
            if invert_pairwise:
                pair = geometry.invert(pair)
            pair = pair.with_frames(i, i - 1)
        size = frame_size
        if i in images:
            from PIL import Image

            with Image.open(images[i]) as im:
                size = im.size
        if size is None:
            raise ValueError(f"frame {i}: no image, so frame_size must be given")
        dets = read_labels(labels[i], size[0], size[1], source=i) if i in labels else []
        frames.append(FrameRecord(i, pair, dets, image_path=images.get(i), size=tuple(size)))
    return frames


def cumulative_chain(frames: Sequence[FrameRecord]) -> List[geometry.Homography]:
    """``H_{0<-i} = H_{0<-1} H_{1<-2} ... H_{i-1<-i}`` for every frame."""
    out = []
    for k, fr in enumerate(frames):
        if k == 0:
            out.append(geometry.identity(fr.frame_id))
            continue
        try:
            out.append(geometry.compose([out[-1], fr.pairwise_h]))
        except SingularMatrix as exc:
            raise SingularMatrix(str(exc), frame=fr.frame_id) from None
    return out


def _corners(size):
    w, h = size
    return np.array([[-0.5, -0.5], [w - 0.5, -0.5], [w - 0.5, h - 0.5], [-0.5, h - 0.5]])


def scene_extent(frames, chain, pixel_budget=DEFAULT_PIXEL_BUDGET):
    pts = np.vstack([geometry.project_points(h, _corners(fr.size)) for fr, h in zip(frames, chain)])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    area = (x1 - x0) * (y1 - y0)
    if area > pixel_budget:
        raise ExtentTooLarge(
            f"projected frames span {x1 - x0:.0f} x {y1 - y0:.0f} px, above the {pixel_budget} px budget; "
            "check the homographies (or --invert-pairwise)"
        )
    return float(x0), float(y0), float(x1), float(y1)


def project_all(
    frames: Sequence[FrameRecord],
    chain: Sequence[geometry.Homography],
    workers: int = 1,
    pixel_budget: int = DEFAULT_PIXEL_BUDGET,
) -> GlobalScene:
    """Project every detection box (corner envelope) into frame 0."""
    if len(frames) != len(chain):
        raise ValueError("chain must align with frames")
    extent = scene_extent(frames, chain, pixel_budget)

    def one(args):
        fr, h = args
        if not fr.detections:
            return []
        try:
            boxes = geometry.project_boxes(h, [(d.cx, d.cy, d.w, d.h) for d in fr.detections])
        except PointAtInfinity:
            for k, d in enumerate(fr.detections):
                try:
                    geometry.project_boxes(h, [(d.cx, d.cy, d.w, d.h)])
                except PointAtInfinity:
                    raise PointAtInfinity(f"frame {fr.frame_id}, detection {k}: box maps to infinity") from None
            raise
        return [
            d.moved(cx=float(b[0]), cy=float(b[1]), w=float(b[2]), h=float(b[3]), source=fr.frame_id)
            for d, b in zip(fr.detections, boxes)
        ]

    pairs = list(zip(frames, chain))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, pairs))
    else:
        parts = [one(p) for p in pairs]
    return GlobalScene([d for part in parts for d in part], extent)


def consensus(
    scene: GlobalScene,
    iou_thresh: float = DEFAULT_IOU_THRESH,
    conf_thresh: float = DEFAULT_CONF_THRESH,
) -> List[Detection]:
    """Class-agnostic NMS over all projected boxes (confidence filter first)."""
    return nms(scene.detections, iou_thresh, conf_thresh)


def render_mosaic(frames, chain, extent=None, pixel_budget=DEFAULT_PIXEL_BUDGET) -> np.ndarray:
    """Warp frames onto the global canvas in frame-id order; later frames
    overwrite earlier ones.  Canvas pixel ``(0, 0)`` is the extent corner
    rounded up to the pixel grid."""
    if extent is None:
        extent = scene_extent(frames, chain, pixel_budget)
    ox, oy, W, H = canvas_geometry(extent)
    canvas = np.zeros((H, W, 3), dtype=np.uint8)
    for fr, h in sorted(zip(frames, chain), key=lambda t: t[0].frame_id):
        img = fr.load_image()
        fh, fw = img.shape[:2]
        pc = geometry.project_points(h, _corners((fw, fh)))
        cx0 = max(int(np.floor(pc[:, 0].min() - ox)), 0)
        cx1 = min(int(np.ceil(pc[:, 0].max() - ox)) + 1, W)
        cy0 = max(int(np.floor(pc[:, 1].min() - oy)), 0)
        cy1 = min(int(np.ceil(pc[:, 1].max() - oy)) + 1, H)
        if cx0 >= cx1 or cy0 >= cy1:
            continue
        yy, xx = np.mgrid[cy0:cy1, cx0:cx1]
        src = geometry.project_points(
            geometry.invert(h), np.column_stack([xx.ravel() + ox, yy.ravel() + oy])
        )
        sx = src[:, 0].reshape(xx.shape)
        sy = src[:, 1].reshape(xx.shape)
        valid = (sx >= -0.5) & (sx <= fw - 0.5) & (sy >= -0.5) & (sy <= fh - 0.5)
        for c in range(3):
            vals = ndimage.map_coordinates(img[..., c].astype(float), [sy, sx], order=1, mode="nearest")
            region = canvas[cy0:cy1, cx0:cx1, c]
            region[valid] = np.clip(np.round(vals[valid]), 0, 255).astype(np.uint8)
    return canvas


def canvas_geometry(extent):
    """``(ox, oy, W, H)``: global coordinates of canvas pixel (0, 0) and the
    canvas size for an extent given by pixel edges."""
    x0, y0, x1, y1 = extent
    ox, oy = np.ceil(x0 + 0.5 - 1e-9), np.ceil(y0 + 0.5 - 1e-9)
    W = int(np.floor(x1 - 0.5 + 1e-9) - ox) + 1
    H = int(np.floor(y1 - 0.5 + 1e-9) - oy) + 1
    return float(ox), float(oy), max(W, 1), max(H, 1)


def run_raw_mode(
    frames: Sequence[FrameRecord],
    iou_thresh: float = DEFAULT_IOU_THRESH,
    conf_thresh: float = DEFAULT_CONF_THRESH,
    workers: int = 1,
    pixel_budget: int = DEFAULT_PIXEL_BUDGET,
):
    """Chain, project and deduplicate; returns ``(detections, scene)``."""
    chain = cumulative_chain(frames)
    scene = project_all(frames, chain, workers, pixel_budget)
    kept = consensus(scene, iou_thresh, conf_thresh)
    log.info("raw mode: %d frames, %d projected, %d kept", len(frames), len(scene.detections), len(kept))
    return kept, scene, chain
