"""mNoCoAP: average precision with a NoCo-threshold true-positive rule.

A detection is a true positive at level ``delta`` when the NoCo value under
its box center is at least ``delta`` and the target owning that pixel has not
been claimed by a higher-scored detection (greedy, one match per target).
Ranked flags from every image are pooled into one PR curve per ``delta``;
mNoCoAP is the mean AP over the deltas.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import Detection, GtTarget, ImageLike, as_array
from .noco import NoCoConfig, NoCoMap, image_noco_map, pixel_index

DEFAULT_DELTAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    deltas: Tuple[float, ...] = DEFAULT_DELTAS
    noco_cfg: NoCoConfig = NoCoConfig()
    max_dets_per_image: int = 100

    def __post_init__(self):
        d = tuple(float(x) for x in self.deltas)
        if not d:
            raise ValueError("at least one delta is required")
        if any(not (0.0 < x < 1.0) for x in d):
            raise ValueError(f"deltas must lie in (0, 1): {d}")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"deltas must be strictly increasing: {d}")
        if self.max_dets_per_image < 1:
            raise ValueError("max_dets_per_image must be >= 1")
        object.__setattr__(self, "deltas", d)

    def to_dict(self) -> dict:
        return {
            "deltas": list(self.deltas),
            "noco": self.noco_cfg.to_dict(),
            "max_dets_per_image": self.max_dets_per_image,
        }


@dataclass
class MatchResult:
    """Outcome of matching one image at one delta.

    ``order`` lists detection indices by descending score; ``tp`` is aligned
    with ``order``.
    """

    order: List[int]
    tp: List[bool]
    gt_matched: List[bool]


@dataclass
class EvalReport:
    deltas: List[float]
    ap_per_delta: Dict[float, float]
    mnocoap: float
    pr_curves: Dict[float, List[Tuple[float, float]]]
    counts: Dict[float, Dict[str, int]]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        key = _delta_key
        return {
            "mnocoap": self.mnocoap,
            "ap_per_delta": {key(d): self.ap_per_delta[d] for d in self.deltas},
            "counts": {key(d): self.counts[d] for d in self.deltas},
            "pr_curves": {
                key(d): [[r, p] for r, p in self.pr_curves[d]] for d in self.deltas
            },
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _delta_key(d: float) -> str:
    return f"{d:.2f}"


def ranking_order(dets: Sequence[Detection]) -> List[int]:
    """Indices by descending score, ties by input index."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GtTarget],
    nmap: NoCoMap,
    delta: float,
) -> MatchResult:
    order = ranking_order(dets)
    gt_matched = [False] * len(gts)
    tp = []
    h, w = nmap.values.shape
    for i in order:
        cx, cy = dets[i].box.center
        r, c = pixel_index(cx, cy)
        hit = False
        if 0 <= r < h and 0 <= c < w and nmap.values[r, c] >= delta:
            g = int(nmap.owner[r, c])
            if g >= 0 and not gt_matched[g]:
                gt_matched[g] = True
                hit = True
        tp.append(hit)
    return MatchResult(order=order, tp=tp, gt_matched=gt_matched)


def precision_recall(flags: Sequence[bool], num_gt: int) -> Tuple[np.ndarray, np.ndarray]:
    f = np.asarray(flags, dtype=bool)
    tp = np.cumsum(f)
    fp = np.cumsum(~f)
    recall = tp / float(num_gt)
    precision = tp / np.maximum(tp + fp, 1)
    return recall, precision


def average_precision(flags: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP of a ranked TP/FP list.

    Precision is replaced by its running maximum from the right (the
    envelope) and integrated over the recall steps.
    """
    if num_gt <= 0:
        raise EvalError("no targets to evaluate")
    if len(flags) == 0:
        return 0.0
    recall, precision = precision_recall(flags, num_gt)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


@dataclass(frozen=True)
class EvalItem:
    """One image of a dataset run."""

    image: ImageLike
    gts: Sequence[GtTarget]
    dets: Sequence[Detection]
    image_id: str = ""


def _cap(dets: Sequence[Detection], cap: int) -> List[Detection]:
    order = ranking_order(dets)[:cap]
    order.sort()
    return [dets[i] for i in order]


def _image_flags(item: EvalItem, cfg: EvalConfig):
    nmap = image_noco_map(item.image, item.gts, cfg.noco_cfg)
    dets = _cap(item.dets, cfg.max_dets_per_image)
    per_delta = [match_detections(dets, item.gts, nmap, d) for d in cfg.deltas]
    return dets, per_delta


def mnocoap(dataset: Sequence, cfg: EvalConfig = EvalConfig(), jobs: int = 1) -> EvalReport:
    """Evaluate a dataset of ``EvalItem`` (or ``(image, gts, dets)`` tuples).

    Per-image matching may run on ``jobs`` threads; the pooled ranking is
    ordered by (score desc, image_id, detection index), so the result does
    not depend on ``jobs``.
    """
    items = [_as_item(x, k) for k, x in enumerate(dataset)]
    if not items:
        raise EvalError("empty dataset")
    num_gt = sum(len(it.gts) for it in items)
    if num_gt == 0:
        raise EvalError("no targets to evaluate")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda it: _image_flags(it, cfg), items))
    else:
        results = [_image_flags(it, cfg) for it in items]

    # pooled rows: (sort key, tp flag per delta)
    rows = []
    for it, (dets, per_delta) in zip(items, results):
        flag_by_det = [dict() for _ in cfg.deltas]
        for k, m in enumerate(per_delta):
            flag_by_det[k] = dict(zip(m.order, m.tp))
        for j, det in enumerate(dets):
            rows.append(((-det.score, it.image_id, j), [flag_by_det[k][j] for k in range(len(cfg.deltas))]))
    rows.sort(key=lambda r: r[0])

    ap, curves, counts = {}, {}, {}
    for k, d in enumerate(cfg.deltas):
        flags = [r[1][k] for r in rows]
        ap[d] = average_precision(flags, num_gt)
        if flags:
            rec, prec = precision_recall(flags, num_gt)
            curves[d] = [(float(a), float(b)) for a, b in zip(rec, prec)]
        else:
            curves[d] = []
        n_tp = int(sum(flags))
        counts[d] = {"tp": n_tp, "fp": len(flags) - n_tp, "fn": num_gt - n_tp}
    mean = math.fsum(ap.values()) / len(ap)
    return EvalReport(
        deltas=list(cfg.deltas),
        ap_per_delta=ap,
        mnocoap=mean,
        pr_curves=curves,
        counts=counts,
        config=dict(cfg.to_dict(), num_images=len(items), num_targets=num_gt),
    )


def _as_item(x, k: int) -> EvalItem:
    if isinstance(x, EvalItem):
        return x
    if len(x) == 4:
        image, gts, dets, image_id = x
    else:
        image, gts, dets = x
        image_id = f"{k:08d}"
    return EvalItem(image=as_array(image), gts=list(gts), dets=list(dets), image_id=str(image_id))


# -- rendering ----------------------------------------------------------------

def format_table(report: EvalReport, name: str = "method") -> str:
    """Plain-text table with AP and one AP_xx column per delta (percent)."""
    cols = ["Method", "AP"] + [f"AP_{int(round(d * 100)):02d}" for d in report.deltas]
    vals = [name, f"{100 * report.mnocoap:.1f}"] + [f"{100 * report.ap_per_delta[d]:.1f}" for d in report.deltas]
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    line = lambda cells: "  ".join(c.rjust(wd) if i else c.ljust(wd) for i, (c, wd) in enumerate(zip(cells, widths)))
    rule = "-" * len(line(cols))
    return "\n".join([rule, line(cols), rule, line(vals), rule, f"mNoCoAP: {report.mnocoap:.3f}"]) + "\n"


def format_svg(report: EvalReport, size: int = 400) -> str:
    """PR curves for every delta as a standalone SVG document."""
    pad = 40
    span = size - 2 * pad
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<text x="{size // 2}" y="{size - 8}" text-anchor="middle" font-size="12">recall</text>',
        f'<text x="12" y="{size // 2}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {size // 2})">precision</text>',
    ]
    for k, d in enumerate(report.deltas):
        pts = report.pr_curves[d]
        if not pts:
            continue
        shade = int(round(200 * k / max(len(report.deltas) - 1, 1)))
        coords = " ".join(f"{pad + r * span:.2f},{pad + (1 - p) * span:.2f}" for r, p in pts)
        out.append(
            f'<polyline fill="none" stroke="rgb({shade},0,{200 - shade})" points="{coords}">'
            f"<title>delta={d:.2f} AP={report.ap_per_delta[d]:.4f}</title></polyline>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
