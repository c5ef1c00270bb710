"""Dominant row orientation from Radon-projection variance, and rotation of
rasters and detections into the standard (rows top-to-bottom) orientation.

Angles are degrees, counter-clockwise as the image is displayed (y points
down).  The orientation of a family of lines is the angle of the lines
themselves: horizontal stripes are at 180 (== 0), vertical ones at 90.
Rows are standardised to run vertically, so the correcting rotation is
``90 - theta``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import geometry
from .detections import Detection
from .errors import DegenerateImage

log = logging.getLogger(__name__)

ANGLES = np.arange(1, 181)
LOW_CONFIDENCE_RATIO = 2.0


def rotated_shape(width: int, height: int, theta: float) -> Tuple[int, int]:
    """Canvas ``(width, height)`` that holds the whole rotated image."""
    t = math.radians(theta)
    c, s = abs(math.cos(t)), abs(math.sin(t))
    nw = int(math.ceil(width * c + height * s - 1e-6))
    nh = int(math.ceil(width * s + height * c - 1e-6))
    return max(nw, 1), max(nh, 1)


def rotation_homography(width: int, height: int, theta: float) -> geometry.Homography:
    """Map from source pixel coordinates to the enlarged rotated canvas.

    The source centre ``((W-1)/2, (H-1)/2)`` lands on the canvas centre.
    """
    nw, nh = rotated_shape(width, height, theta)
    return geometry.rotation(
        theta,
        center=((width - 1) / 2, (height - 1) / 2),
        new_center=((nw - 1) / 2, (nh - 1) / 2),
    )


def rotate(img, theta: float, fill: float = 0) -> np.ndarray:
    """Rotate about the image centre with bilinear interpolation onto an
    enlarged canvas; uncovered pixels get ``fill``.

    ``theta = 90`` sends pixel ``(x, y)`` of a ``W x H`` image to
    ``(y, W - 1 - x)`` of the ``H x W`` result.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    nw, nh = rotated_shape(w, h, theta)
    inv = np.linalg.inv(rotation_homography(w, h, theta).m)
    # affine_transform works in (row, col) index order
    matrix = np.array([[inv[1, 1], inv[1, 0]], [inv[0, 1], inv[0, 0]]])
    offset = np.array([inv[1, 2], inv[0, 2]])

    rr, cc = np.mgrid[0:nh, 0:nw]
    src_r = matrix[0, 0] * rr + matrix[0, 1] * cc + offset[0]
    src_c = matrix[1, 0] * rr + matrix[1, 1] * cc + offset[1]
    outside = (src_r < -0.5) | (src_r > h - 0.5) | (src_c < -0.5) | (src_c > w - 0.5)

    def one(ch):
        out = ndimage.affine_transform(
            ch.astype(float), matrix, offset=offset, output_shape=(nh, nw), order=1, mode="nearest"
        )
        out[outside] = fill
        return out

    if img.ndim == 2:
        res = one(img)
    else:
        res = np.stack([one(img[..., k]) for k in range(img.shape[2])], axis=-1)
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        res = np.clip(np.round(res), info.min, info.max).astype(img.dtype)
    elif img.dtype == bool:
        res = res >= 0.5
    return res


def rotate_detections(dets: Sequence[Detection], theta: float, width: int, height: int):
    """Apply the raster rotation rule to detections of a ``width x height``
    image.  Returns ``(detections, (new_width, new_height))``; boxes become the
    envelopes of their rotated corners."""
    nw, nh = rotated_shape(width, height, theta)
    if not dets:
        return [], (nw, nh)
    h = rotation_homography(width, height, theta)
    boxes = geometry.project_boxes(h, [(d.cx, d.cy, d.w, d.h) for d in dets])
    out = [
        d.moved(cx=float(b[0]), cy=float(b[1]), w=float(b[2]), h=float(b[3]))
        for d, b in zip(dets, boxes)
    ]
    return out, (nw, nh)


@dataclass
class AngleEstimate:
    theta: int
    variance_profile: np.ndarray  # index k holds angle k + 1
    low_confidence: bool = False

    @property
    def contrast(self) -> float:
        lo = float(self.variance_profile.min())
        return float("inf") if lo <= 0 else float(self.variance_profile.max()) / lo

    @property
    def correction(self) -> float:
        """Rotation that brings rows to vertical; 0 when the estimate is weak."""
        if self.low_confidence:
            return 0.0
        c = 90.0 - self.theta
        return c - 180.0 if c > 90 else c

    def to_csv(self) -> str:
        lines = ["angle,variance"]
        lines += [f"{a},{v:.9g}" for a, v in zip(ANGLES, self.variance_profile)]
        return "\n".join(lines) + "\n"


def _downsample(img, max_dim):
    h, w = img.shape
    f = int(math.ceil(max(h, w) / max_dim)) if max_dim else 1
    if f <= 1:
        return img
    h2, w2 = h // f, w // f
    return img[: h2 * f, : w2 * f].reshape(h2, f, w2, f).mean(axis=(1, 3))


def _tiles(img):
    """Square tiles along the long axis, last one anchored to the edge."""
    h, w = img.shape
    s = min(h, w)
    n = max(h, w)
    starts = list(range(0, n - s + 1, s))
    if starts[-1] + s < n:
        starts.append(n - s)
    if h >= w:
        return [img[a : a + s, :] for a in starts]
    return [img[:, a : a + s] for a in starts]


def _disk_projection(ys, xs, vals, s, theta):
    """Column sums of a disk-supported square map rotated by ``theta``.

    Each pixel centre is rotated and dropped into its nearest output column,
    so every pixel is counted exactly once at every angle; resampling with
    interpolation would smooth noise by an angle-dependent amount.
    """
    t = math.radians(theta)
    r = (s - 1) / 2
    col = np.cos(t) * (xs - r) + np.sin(t) * (ys - r) + r
    bins = np.clip(np.floor(col + 0.5).astype(np.int64), 0, s - 1)
    return np.bincount(bins, weights=vals, minlength=s)


def radon_variance(
    img, max_dim: int = 512, smooth: float = 0.0, angles: Sequence[int] = ANGLES
) -> AngleEstimate:
    """Orientation with the largest variance of the Radon projection.

    The projection at angle ``a`` integrates along lines of orientation ``a``:
    the map is rotated by ``90 - a`` (``rotate``'s convention) and its
    columns summed.  To keep the
    support shape out of the variance, the map is centred on its mean, split
    into square tiles along its long axis, and each tile is restricted to its
    inscribed disk; per-tile variances are summed.  The map is first reduced
    by block means to at most ``max_dim`` pixels and optionally blurred by a
    Gaussian of ``smooth`` pixels.
    """
    v = np.asarray(img, dtype=float)
    if v.ndim != 2:
        raise ValueError("orientation needs a scalar map")
    if not float(v.max()) > float(v.min()):
        raise DegenerateImage("cannot estimate orientation of a constant image")
    v = _downsample(v, max_dim)
    if smooth > 0:
        v = ndimage.gaussian_filter(v, smooth)
    profile = np.zeros(len(angles))
    for tile in _tiles(v):
        s = tile.shape[0]
        yy, xx = np.mgrid[0:s, 0:s]
        r = (s - 1) / 2
        inside = (xx - r) ** 2 + (yy - r) ** 2 <= (s / 2) ** 2
        ys, xs = np.nonzero(inside)
        vals = tile[ys, xs] - tile[ys, xs].mean()
        for k, a in enumerate(angles):
            profile[k] += _disk_projection(ys, xs, vals, s, 90.0 - a).var()
    best = int(np.argmax(profile))
    est = AngleEstimate(int(angles[best]), profile)
    est.low_confidence = est.contrast < LOW_CONFIDENCE_RATIO
    if est.low_confidence:
        log.warning(
            "weak row orientation (variance max/min %.2f); keeping 0 degree rotation",
            est.contrast,
        )
    return est


def angle_diff(a: float, b: float) -> float:
    """Smallest difference between two line orientations (mod 180)."""
    d = (a - b) % 180.0
    return min(d, 180.0 - d)
