"""Maize stand counting from UAV imagery.

Detections (external labels or the built-in classical segmenter) are merged
into one global frame, either by tiling a pre-built mosaic or by chaining
raw-frame homographies, then split into ranges and rows and counted.
"""
from .detections import Detection, PlantClass, nms
from .evaluation import r_squared
from .geometry import Homography
from .layout import CountReport, FieldLayout, LayoutConfig
from .pipeline import count_stage

__all__ = [
    "CountReport",
    "Detection",
    "FieldLayout",
    "Homography",
    "LayoutConfig",
    "PlantClass",
    "count_stage",
    "nms",
    "r_squared",
]
__version__ = "0.1.0"
