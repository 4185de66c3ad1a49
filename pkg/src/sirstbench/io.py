"""Dataset index, image files and detection interchange.

Annotation file ``<root>/annotations.json``::

    {"images": [{"id": str, "file": str, "height": int, "width": int,
                 "targets": [{"bbox": [x0, y0, x1, y1], "centroid": [x, y]}]}]}

``centroid`` is optional. Detections are JSON lines, one object per
detection: ``{"image_id": str, "bbox": [x0, y0, x1, y1], "score": float}``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .core import BBox, Detection, GrayImage, GtTarget

log = logging.getLogger(__name__)

ANNOTATIONS = "annotations.json"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetEntry:
    image_id: str
    file: str
    height: int
    width: int
    targets: List[GtTarget] = field(default_factory=list)


@dataclass
class DatasetIndex:
    root: Path
    entries: List[DatasetEntry]

    def image_path(self, entry: DatasetEntry) -> Path:
        return self.root / entry.file

    def load_image(self, entry: DatasetEntry) -> GrayImage:
        img = read_image(self.image_path(entry))
        if img.shape != (entry.height, entry.width):
            raise DatasetError(
                f"image {entry.image_id}: file is {img.width}x{img.height}, "
                f"annotation says {entry.width}x{entry.height}"
            )
        return img


# -- images ------------------------------------------------------------------

_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path) -> GrayImage:
    """Binary (P5) PGM, 8 or 16 bit, normalized by its maxval."""
    buf = Path(path).read_bytes()
    m = _PGM_HEADER.match(buf)
    if not m:
        raise DatasetError(f"{path}: not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if not (0 < maxval < 65536):
        raise DatasetError(f"{path}: unsupported PGM maxval {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    body = buf[m.end(): m.end() + n]
    if len(body) != n:
        raise DatasetError(f"{path}: truncated PGM data")
    arr = np.frombuffer(body, dtype=dtype).reshape(h, w)
    return GrayImage(arr.astype(np.float64) / maxval)


def write_pgm(path, img, bits: int = 16) -> None:
    """Quantize a [0, 1] image to an 8- or 16-bit binary PGM."""
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    q = np.rint(np.clip(data, 0.0, 1.0) * maxval)
    raw = q.astype(">u2" if bits == 16 else "u1").tobytes()
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + raw)


def read_image(path) -> GrayImage:
    """Load a PGM or grayscale PNG (8/16 bit) as a [0, 1] image."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing image file {path}")
    if path.suffix.lower() in (".pgm", ".pnm"):
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    if mode in ("L", "P"):
        return GrayImage(arr.astype(np.float64) / 255.0)
    if mode.startswith("I"):
        return GrayImage(arr.astype(np.float64) / 65535.0)
    if mode in ("RGB", "RGBA", "LA"):
        raise DatasetError(f"{path}: color image (mode {mode}) not supported")
    raise DatasetError(f"{path}: unsupported image mode {mode}")


# -- annotations ---------------------------------------------------------------

def _target_from_json(obj, image_id: str, k: int, height: int, width: int) -> GtTarget:
    ctx = f"image {image_id!r}, target {k}"
    try:
        x0, y0, x1, y1 = (float(v) for v in obj["bbox"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{ctx}: bbox must be [x0, y0, x1, y1] ({exc})") from None
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
        raise DatasetError(f"{ctx}: non-finite bbox")
    if x1 < x0 or y1 < y0:
        raise DatasetError(f"{ctx}: invalid bbox {[x0, y0, x1, y1]} (need x0 <= x1, y0 <= y1)")
    cx0, cy0 = min(max(x0, 0.0), width), min(max(y0, 0.0), height)
    cx1, cy1 = min(max(x1, 0.0), width), min(max(y1, 0.0), height)
    if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
        log.warning("%s: bbox %s clipped to image bounds", ctx, [x0, y0, x1, y1])
    if cx1 <= cx0 or cy1 <= cy0:
        raise DatasetError(f"{ctx}: bbox {[x0, y0, x1, y1]} has no area inside the image")
    box = BBox(cx0, cy0, cx1, cy1)
    centroid = obj.get("centroid")
    if centroid is not None:
        try:
            cx, cy = (float(v) for v in centroid)
        except (TypeError, ValueError):
            raise DatasetError(f"{ctx}: centroid must be [x, y]") from None
        centroid = (min(max(cx, box.x0), box.x1), min(max(cy, box.y0), box.y1))
    return GtTarget(box, centroid)


def parse_annotations(doc, root: Path, check_files: bool = True) -> DatasetIndex:
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise DatasetError('annotations must be an object with an "images" array')
    entries = []
    seen = set()
    for n, img in enumerate(doc["images"]):
        if not isinstance(img, dict):
            raise DatasetError(f"images[{n}] is not an object")
        try:
            image_id = str(img["id"])
            file = str(img["file"])
            height, width = int(img["height"]), int(img["width"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"images[{n}]: missing or malformed field ({exc})") from None
        if image_id in seen:
            raise DatasetError(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        if height < 1 or width < 1:
            raise DatasetError(f"image {image_id!r}: invalid dimensions {width}x{height}")
        if check_files and not (root / file).exists():
            raise DatasetError(f"image {image_id!r}: missing file {root / file}")
        raw = img.get("targets", [])
        if not isinstance(raw, list):
            raise DatasetError(f"image {image_id!r}: targets must be an array")
        targets = [_target_from_json(t, image_id, k, height, width) for k, t in enumerate(raw)]
        entries.append(DatasetEntry(image_id, file, height, width, targets))
    return DatasetIndex(root=root, entries=entries)


def load_dataset(root) -> DatasetIndex:
    root = Path(root)
    path = root / ANNOTATIONS
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"no {ANNOTATIONS} in {root}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON ({exc})") from None
    return parse_annotations(doc, root)


def annotations_doc(entries: Sequence[DatasetEntry]) -> dict:
    images = []
    for e in entries:
        images.append(
            {
                "id": e.image_id,
                "file": e.file,
                "height": e.height,
                "width": e.width,
                "targets": [
                    {"bbox": list(t.box.as_tuple()), "centroid": list(t.centroid)} for t in e.targets
                ],
            }
        )
    return {"images": images}


def save_dataset(index: DatasetIndex, root=None) -> Path:
    root = Path(root) if root is not None else index.root
    root.mkdir(parents=True, exist_ok=True)
    path = root / ANNOTATIONS
    path.write_text(json.dumps(annotations_doc(index.entries), indent=2) + "\n")
    return path


# -- detections ---------------------------------------------------------------

def detections_to_jsonl(dets: Iterable[Detection]) -> str:
    lines = [
        json.dumps({"image_id": d.image_id, "bbox": list(d.box.as_tuple()), "score": d.score}, sort_keys=True)
        for d in dets
    ]
    return "".join(line + "\n" for line in lines)


def write_detections(path, dets: Iterable[Detection]) -> None:
    Path(path).write_text(detections_to_jsonl(dets))


def read_detections(path) -> Dict[str, List[Detection]]:
    """Group detections by image id, keeping file order within each image."""
    out: Dict[str, List[Detection]] = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                det = Detection(BBox(*(float(v) for v in obj["bbox"])), float(obj["score"]), str(obj["image_id"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{n}: bad detection record ({exc})") from None
            out.setdefault(det.image_id, []).append(det)
    return out
