"""Planar projective geometry between frame coordinate systems.

Coordinate convention used throughout the package: ``x`` is the column
axis (rightward), ``y`` the row axis (downward), and the origin sits on the
centre of the top-left pixel.

A homography ``H`` acts on homogeneous column vectors ``[x, y, 1]``.  A
``Homography`` optionally records which frames it links: ``src_frame`` is the
frame whose coordinates go in, ``dst_frame`` the frame whose coordinates come
out.  ``compose([A, B])`` is the matrix product ``A @ B``: points are first
mapped by ``B`` and then by ``A``, so a chain ``[H_0<-1, H_1<-2, ...]`` yields
the map from the last frame into the first one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import FrameChainMismatch, PointAtInfinity, SingularMatrix

DET_EPS = 1e-12
W_EPS = 1e-12


class Point2(NamedTuple):
    x: float
    y: float


def _normalized(m):
    m = np.array(m, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(m)):
        raise SingularMatrix("homography has non-finite entries")
    if abs(m[2, 2]) > W_EPS:
        m = m / m[2, 2]
    return m


@dataclass(frozen=True, eq=False)
class Homography:
    """Immutable 3x3 projective map, normalised so ``m[2, 2] == 1`` when possible."""

    m: np.ndarray
    src_frame: Optional[int] = None
    dst_frame: Optional[int] = None

    def __post_init__(self):
        m = _normalized(self.m)
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise SingularMatrix(
                "homography is not invertible",
                frame=self.src_frame,
            )
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __repr__(self):
        rows = "; ".join(" ".join(f"{v:.6g}" for v in r) for r in self.m)
        return f"Homography([{rows}], src={self.src_frame}, dst={self.dst_frame})"

    def with_frames(self, src_frame, dst_frame):
        return Homography(self.m, src_frame, dst_frame)

    def allclose(self, other, atol=1e-9):
        return bool(np.max(np.abs(self.m - other.m)) < atol)


def identity(frame=None):
    return Homography(np.eye(3), frame, frame)


def translation(tx, ty, src_frame=None, dst_frame=None):
    m = np.eye(3)
    m[0, 2] = tx
    m[1, 2] = ty
    return Homography(m, src_frame, dst_frame)


def rotation(theta_deg, center=(0.0, 0.0), new_center=None):
    """Rotation by ``theta_deg`` counter-clockwise as displayed (y points down).

    ``center`` is the fixed point in source coordinates; if ``new_center`` is
    given, the rotated ``center`` lands there instead (used for enlarged
    canvases).
    """
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    cx, cy = center
    nx, ny = (cx, cy) if new_center is None else new_center
    # x' = c*dx + s*dy ; y' = -s*dx + c*dy with d = p - center
    m = np.array(
        [
            [c, s, nx - c * cx - s * cy],
            [-s, c, ny + s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ]
    )
    return Homography(m)


def invert(h: Homography) -> Homography:
    return Homography(np.linalg.inv(h.m), src_frame=h.dst_frame, dst_frame=h.src_frame)


def compose(chain: Sequence[Homography]) -> Homography:
    """Matrix product of ``chain`` in the written order.

    Adjacent factors must chain: ``chain[k].src_frame == chain[k + 1].dst_frame``
    whenever both are known.
    """
    if len(chain) == 0:
        raise ValueError("compose needs at least one homography")
    for k in range(len(chain) - 1):
        a, b = chain[k], chain[k + 1]
        if a.src_frame is not None and b.dst_frame is not None and a.src_frame != b.dst_frame:
            raise FrameChainMismatch(
                f"factor {k} takes frame {a.src_frame} but factor {k + 1} yields frame {b.dst_frame}"
            )
    m = chain[0].m
    for h in chain[1:]:
        m = m @ h.m
    return Homography(m, src_frame=chain[-1].src_frame, dst_frame=chain[0].dst_frame)


def project_point(h: Homography, p) -> Point2:
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < W_EPS:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    return Point2(
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def project_points(h: Homography, pts) -> np.ndarray:
    """Vectorised ``project_point`` for an ``(N, 2)`` array."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    m = h.m
    w = pts[:, 0] * m[2, 0] + pts[:, 1] * m[2, 1] + m[2, 2]
    if np.any(np.abs(w) < W_EPS):
        bad = int(np.argmax(np.abs(w) < W_EPS))
        raise PointAtInfinity(f"point index {bad} maps to infinity")
    out = np.empty_like(pts)
    out[:, 0] = (pts[:, 0] * m[0, 0] + pts[:, 1] * m[0, 1] + m[0, 2]) / w
    out[:, 1] = (pts[:, 0] * m[1, 0] + pts[:, 1] * m[1, 1] + m[1, 2]) / w
    return out


def project_boxes(h: Homography, boxes) -> np.ndarray:
    """Project ``(N, 4)`` centre-form boxes ``(cx, cy, w, h)``; returns the
    axis-aligned envelopes of the four projected corners in the same form."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    n = len(boxes)
    if n == 0:
        return boxes.copy()
    cx, cy, hw, hh = boxes[:, 0], boxes[:, 1], boxes[:, 2] / 2, boxes[:, 3] / 2
    corners = np.stack(
        [
            np.stack([cx - hw, cy - hh], 1),
            np.stack([cx + hw, cy - hh], 1),
            np.stack([cx + hw, cy + hh], 1),
            np.stack([cx - hw, cy + hh], 1),
        ],
        1,
    ).reshape(-1, 2)
    m = h.m
    w = (corners[:, 0] * m[2, 0] + corners[:, 1] * m[2, 1] + m[2, 2]).reshape(n, 4)
    split = np.flatnonzero((w > 0).any(axis=1) & (w < 0).any(axis=1))
    if len(split):
        raise PointAtInfinity(f"box index {split[0]} straddles the line at infinity")
    pc = project_points(h, corners).reshape(n, 4, 2)
    lo = pc.min(axis=1)
    hi = pc.max(axis=1)
    return np.column_stack([(lo + hi) / 2, hi - lo])


def project_box(h: Homography, box):
    """Envelope of a projected ``(cx, cy, w, h)`` box."""
    if box[2] <= 0 or box[3] <= 0:
        raise ValueError("box must have positive width and height")
    return tuple(float(v) for v in project_boxes(h, [box])[0])


# -- file format -------------------------------------------------------------
# A homography is 9 whitespace separated decimals, row-major.  A file holds
# either a single matrix (any line layout) or one matrix per line.


def parse_homography(text, src_frame=None, dst_frame=None) -> Homography:
    vals = text.split()
    if len(vals) != 9:
        raise ValueError(f"expected 9 values for a homography, got {len(vals)}")
    return Homography(np.array([float(v) for v in vals]), src_frame, dst_frame)


def format_homography(h: Homography) -> str:
    return " ".join(repr(float(v)) for v in h.m.ravel())


def load_homography(path, src_frame=None, dst_frame=None) -> Homography:
    return parse_homography(Path(path).read_text(), src_frame, dst_frame)


def save_homography(path, h: Homography):
    Path(path).write_text(format_homography(h) + "\n")


def load_homography_lines(path):
    """One matrix per non-empty line; the line index is the frame binding."""
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(parse_homography(line))
    return out
