"""Pre-mosaicked input: tile the mosaic into overlapping square patches,
detect per patch, shift detections back to mosaic pixels and deduplicate."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .detections import DEFAULT_CONF_THRESH, DEFAULT_IOU_THRESH, Detection, nms, read_labels
from .errors import GridMismatch, ProviderError
from .raster import ClassicalConfig, classical_detect

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Patch:
    row: int
    col: int
    x0: int
    y0: int
    width: int
    height: int

    @property
    def name(self) -> str:
        return f"patch_{self.row}_{self.col}"


@dataclass
class PatchGrid:
    patch_size: int
    overlap_frac: float
    mosaic_dims: Tuple[int, int]  # (width, height)
    xs: List[int]
    ys: List[int]

    @property
    def origins(self) -> List[Tuple[int, int]]:
        """Row-major ``(x0, y0)`` list."""
        return [(x, y) for y in self.ys for x in self.xs]

    @property
    def patches(self) -> List[Patch]:
        W, H = self.mosaic_dims
        pw, ph = min(self.patch_size, W), min(self.patch_size, H)
        return [
            Patch(r, c, x, y, pw, ph) for r, y in enumerate(self.ys) for c, x in enumerate(self.xs)
        ]

    def __len__(self):
        return len(self.xs) * len(self.ys)

    def manifest_csv(self) -> str:
        lines = ["patch_row,patch_col,x0,y0,size"]
        lines += [f"{p.row},{p.col},{p.x0},{p.y0},{self.patch_size}" for p in self.patches]
        return "\n".join(lines) + "\n"


def _axis(length, size, stride):
    if length <= size:
        return [0]
    out = []
    o = 0
    while o + size < length:
        out.append(o)
        o += stride
    out.append(length - size)
    return out


def patchify(mosaic_dims, patch_size: int = 1280, overlap_frac: float = 0.10) -> PatchGrid:
    """Square patches with stride ``patch_size * (1 - overlap_frac)``; the last
    patch on each axis is pulled back to end on the mosaic edge.  An axis
    shorter than the patch gets a single patch spanning it."""
    if patch_size < 64:
        raise ValueError("patch_size must be >= 64")
    if not 0.0 <= overlap_frac < 1.0:
        raise ValueError("overlap_frac must lie in [0, 1)")
    stride = max(1, int(patch_size * (1.0 - overlap_frac) + 1e-9))
    W, H = int(mosaic_dims[0]), int(mosaic_dims[1])
    return PatchGrid(patch_size, overlap_frac, (W, H), _axis(W, patch_size, stride), _axis(H, patch_size, stride))


def translate(dets: Sequence[Detection], dx: float, dy: float, source: Optional[int] = None) -> List[Detection]:
    out = []
    for d in dets:
        kw = dict(cx=d.cx + dx, cy=d.cy + dy)
        if source is not None:
            kw["source"] = source
        out.append(d.moved(**kw))
    return out


def merge_patch_detections(
    grid: PatchGrid,
    per_patch: Sequence[Sequence[Detection]],
    iou_thresh: float = DEFAULT_IOU_THRESH,
    conf_thresh: float = DEFAULT_CONF_THRESH,
) -> List[Detection]:
    """Shift patch-local detections by their patch origin, then run global
    class-agnostic NMS.  Each detection's ``source`` becomes its patch number
    (row-major)."""
    if len(per_patch) != len(grid):
        raise GridMismatch(f"{len(per_patch)} detection lists for {len(grid)} patches")
    pooled = []
    for k, ((x0, y0), dets) in enumerate(zip(grid.origins, per_patch)):
        pooled.extend(translate(dets, x0, y0, source=k))
    return nms(pooled, iou_thresh, conf_thresh)


# -- detection providers --------------------------------------------------------

Provider = Callable[[np.ndarray, Patch], List[Detection]]


class ClassicalProvider:
    def __init__(self, cfg: Optional[ClassicalConfig] = None):
        self.cfg = cfg or ClassicalConfig()

    def __call__(self, img, patch: Patch) -> List[Detection]:
        return classical_detect(img, self.cfg)


class LabelDirProvider:
    """Reads externally produced ``patch_<row>_<col>.txt`` label files,
    normalised to the patch size.  A missing file means no detections."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, img, patch: Patch) -> List[Detection]:
        path = self.directory / f"{patch.name}.txt"
        if not path.exists():
            return []
        return read_labels(path, patch.width, patch.height)


@dataclass
class MosaicConfig:
    patch_size: int = 1280
    overlap_frac: float = 0.10
    iou_thresh: float = DEFAULT_IOU_THRESH
    conf_thresh: float = DEFAULT_CONF_THRESH
    drop_edge_boxes: bool = True  # discard boxes cut by an interior patch edge
    edge_tol: float = 1.0
    workers: int = 1


def _interior_edge_filter(dets, patch: Patch, mosaic_dims, tol):
    W, H = mosaic_dims
    left, top = patch.x0 > 0, patch.y0 > 0
    right, bottom = patch.x0 + patch.width < W, patch.y0 + patch.height < H
    lo_x, hi_x = -0.5 + tol, patch.width - 0.5 - tol
    lo_y, hi_y = -0.5 + tol, patch.height - 0.5 - tol
    keep = []
    for d in dets:
        x0, y0, x1, y1 = d.xyxy
        if (left and x0 < lo_x) or (right and x1 > hi_x) or (top and y0 < lo_y) or (bottom and y1 > hi_y):
            continue
        keep.append(d)
    return keep


def detect_patches(mosaic, provider: Provider, grid: PatchGrid, cfg: MosaicConfig) -> List[List[Detection]]:
    """Provider output per patch, in patch-local pixels, in grid order."""
    mosaic = np.asarray(mosaic)

    def run(patch: Patch):
        crop = mosaic[patch.y0 : patch.y0 + patch.height, patch.x0 : patch.x0 + patch.width]
        try:
            dets = provider(crop, patch)
        except Exception as exc:
            raise ProviderError(f"detection failed on {patch.name} at origin ({patch.x0}, {patch.y0}): {exc}") from exc
        if cfg.drop_edge_boxes:
            dets = _interior_edge_filter(dets, patch, grid.mosaic_dims, cfg.edge_tol)
        return dets

    patches = grid.patches
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return list(pool.map(run, patches))
    return [run(p) for p in patches]


def run_mosaic_mode(mosaic, provider: Provider, cfg: Optional[MosaicConfig] = None) -> List[Detection]:
    """Patchify, detect per patch, merge: detections in mosaic pixels.

    Boxes touching a patch edge that lies inside the mosaic are discarded
    before merging (``drop_edge_boxes``); with an overlap at least as wide as
    a plant, the same plant is seen whole in the neighbouring patch.
    """
    cfg = cfg or MosaicConfig()
    mosaic = np.asarray(mosaic)
    h, w = mosaic.shape[:2]
    grid = patchify((w, h), cfg.patch_size, cfg.overlap_frac)
    per_patch = detect_patches(mosaic, provider, grid, cfg)
    merged = merge_patch_detections(grid, per_patch, cfg.iou_thresh, cfg.conf_thresh)
    log.info("mosaic mode: %d patches, %d raw, %d merged", len(grid), sum(map(len, per_patch)), len(merged))
    return merged
