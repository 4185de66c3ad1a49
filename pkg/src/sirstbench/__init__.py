"""Benchmark toolkit for single-frame infrared small-target detection."""

from .core import BBox, Detection, GrayImage, GtTarget, feature_lattice, iou
from .evaluation import EvalConfig, EvalReport, average_precision, match_detections, mnocoap
from .noco import NoCoConfig, NoCoMap, extend_region, image_noco_map, noco_lookup, target_noco

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "GrayImage",
    "GtTarget",
    "NoCoConfig",
    "NoCoMap",
    "average_precision",
    "extend_region",
    "feature_lattice",
    "image_noco_map",
    "iou",
    "match_detections",
    "mnocoap",
    "noco_lookup",
    "target_noco",
]
