"""Command-line entry point: ``sirstbench <command> [options]``.

Exit status is 0 on success, 1 on invalid input, 2 on internal errors.
Set ``SIRSTBENCH_LOG`` (e.g. ``DEBUG``) to change the log level.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .assign import LevelSpec, aspb_assign, center_assign, coverage_stats, simplegrid_assign
from .baselines import DEFAULT_K, IpiConfig, detect
from .core import BBox, GrayImage, GtTarget, iou
from .evaluation import DEFAULT_DELTAS, EvalConfig, EvalError, EvalItem, format_svg, format_table, mnocoap
from .io import (
    DatasetEntry,
    DatasetError,
    DatasetIndex,
    detections_to_jsonl,
    load_dataset,
    read_detections,
    save_dataset,
    write_pgm,
)
from .losses import LossConfig, total_loss
from .noco import NoCoConfig, NoCoError, image_noco_map, noco_lookup, write_noco_pgm, write_noco_raw
from .synth import BACKGROUNDS, SUITES, SceneSpec, SynthError, suite_specs, synth_scene

log = logging.getLogger("sirstbench")

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2

SCHEMA_HINTS = {
    "dataset": 'annotations.json: {"images":[{"id":str,"file":str,"height":int,"width":int,'
    '"targets":[{"bbox":[x0,y0,x1,y1],"centroid":[x,y]}]}]}',
    "detections": 'detections (JSON lines): {"image_id":str,"bbox":[x0,y0,x1,y1],"score":float}',
    "loss": 'loss fixture: {"height":int,"width":int,"targets":[...],"levels":{"h":{"stride":s},"l":{"stride":s}},'
    '"preds":{"h":{"cls":grid,"boxes":grid4},"l":{...},"noco":grid},"noco_targets":grid}',
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _noco_cfg(args) -> NoCoConfig:
    return NoCoConfig(gamma=args.gamma, sigma_scale=args.sigma_scale)


def _map_jobs(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.suite:
        specs = suite_specs(args.suite, args.n_images, args.seed, height=args.height, width=args.width)
    else:
        specs = [
            SceneSpec(
                height=args.height,
                width=args.width,
                n_targets=args.n_targets,
                amplitude=args.amplitude,
                snr=args.snr,
                background=args.background,
                seed=args.seed * 100003 + i,
            )
            for i in range(args.n_images)
        ]
    prefix = args.suite or "scene"
    entries = []
    for i, spec in enumerate(specs):
        img, targets = synth_scene(spec)
        image_id = f"{prefix}_{i:04d}"
        fname = f"{image_id}.pgm"
        write_pgm(out / fname, img)
        entries.append(DatasetEntry(image_id, fname, img.height, img.width, targets))
    save_dataset(DatasetIndex(out, entries))
    print(f"wrote {len(entries)} images to {out}")
    return EXIT_OK


def cmd_noco_gen(args) -> int:
    ds = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _noco_cfg(args)

    def work(entry: DatasetEntry):
        nmap = image_noco_map(ds.load_image(entry), entry.targets, cfg)
        if args.format in ("raw", "both"):
            write_noco_raw(out / f"{entry.image_id}.noco", nmap.values)
        if args.format in ("pgm", "both"):
            write_noco_pgm(out / f"{entry.image_id}.noco.pgm", nmap.values)

    _map_jobs(work, ds.entries, args.jobs)
    print(f"wrote NoCo maps for {len(ds.entries)} images to {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    ds = load_dataset(args.dataset)
    ipi_cfg = IpiConfig(patch=args.patch, stride=args.patch_stride)

    def work(entry: DatasetEntry):
        return detect(ds.load_image(entry), args.method, k=args.k, image_id=entry.image_id, ipi_cfg=ipi_cfg)

    per_image = _map_jobs(work, ds.entries, args.jobs)
    _emit("".join(detections_to_jsonl(d) for d in per_image), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    dets = read_detections(args.detections)
    unknown = sorted(set(dets) - {e.image_id for e in ds.entries})
    if unknown:
        raise DatasetError(f"detections reference unknown image ids: {unknown[:5]}")
    deltas = tuple(_parse_floats(args.deltas)) if args.deltas else DEFAULT_DELTAS
    cfg = EvalConfig(deltas=deltas, noco_cfg=_noco_cfg(args), max_dets_per_image=args.max_dets)
    items = [EvalItem(ds.load_image(e), e.targets, dets.get(e.image_id, []), e.image_id) for e in ds.entries]
    report = mnocoap(items, cfg, jobs=args.jobs)
    if args.format == "json":
        text = report.to_json()
    elif args.format == "svg":
        text = format_svg(report)
    else:
        text = format_table(report, args.name)
    _emit(text, args.out)
    return EXIT_OK


def cmd_assign_stats(args) -> int:
    ds = load_dataset(args.dataset)
    strides = args.stride or [8]
    rows = []
    for e in ds.entries:
        if args.scheme == "center":
            res = [center_assign(e.targets, LevelSpec(s), e.height, e.width) for s in strides]
        elif args.scheme == "aspb":
            res = aspb_assign(e.targets, [LevelSpec(s, args.pseudo_factor) for s in strides], e.height, e.width)
        else:
            res = [simplegrid_assign(e.targets, int(s), e.height, e.width) for s in strides]
        rows.append(dict(image_id=e.image_id, **coverage_stats(e.targets, res)))
    keys = ["targets_total", "targets_with_zero_positives", "positives_total", "negatives_total"]
    total = {k: sum(r[k] for r in rows) for k in keys}
    if args.format == "csv":
        buf = _io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["image_id"] + keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        w.writerow(dict(image_id="TOTAL", **total))
        text = buf.getvalue()
    else:
        doc = {
            "scheme": args.scheme,
            "strides": strides,
            "pseudo_factor": args.pseudo_factor if args.scheme == "aspb" else None,
            "total": total,
            "images": rows,
        }
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _grid(obj, name, ndim):
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim != ndim:
        raise UsageError(f"loss fixture: {name} must be a {ndim}-D array, got shape {arr.shape}")
    return arr


def cmd_loss_eval(args) -> int:
    try:
        doc = json.loads(Path(args.fixture).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.fixture}: malformed JSON ({exc})") from None
    try:
        h, w = int(doc["height"]), int(doc["width"])
        targets = [
            GtTarget(BBox(*map(float, t["bbox"])), tuple(t["centroid"]) if t.get("centroid") else None)
            for t in doc["targets"]
        ]
        lv = doc["levels"]
        level_h = LevelSpec(float(lv["h"]["stride"]), float(lv["h"].get("pseudo_factor", 1.5)))
        level_l = LevelSpec(float(lv["l"]["stride"]), float(lv["l"].get("pseudo_factor", 1.5)))
        preds = doc["preds"]
        cls_h, box_h = _grid(preds["h"]["cls"], "preds.h.cls", 2), _grid(preds["h"]["boxes"], "preds.h.boxes", 3)
        cls_l, box_l = _grid(preds["l"]["cls"], "preds.l.cls", 2), _grid(preds["l"]["boxes"], "preds.l.boxes", 3)
        noco_pred = _grid(preds["noco"], "preds.noco", 2)
        noco_tgt = _grid(doc["noco_targets"], "noco_targets", 2)
        cfg = LossConfig(**doc.get("config", {}))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"loss fixture: missing or malformed field {exc}") from None
    asg_h, asg_l = aspb_assign(targets, [level_h, level_l], h, w)
    result = total_loss(((cls_h, box_h), asg_h), ((cls_l, box_l), asg_l), (noco_pred, noco_tgt), cfg)
    doc_out = dict(result.to_dict(), num_pos={"h": asg_h.num_pos, "l": asg_l.num_pos})
    _emit(json.dumps(doc_out, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def iou_demo_lines() -> List[str]:
    """IoU and NoCo of a 3x3 target against 1- and 3-pixel diagonal shifts."""
    gt = BBox(15.0, 15.0, 18.0, 18.0)
    cx, cy = gt.center
    ys, xs = np.mgrid[0:32, 0:32] + 0.5
    img = 0.2 + 0.6 * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * 0.6 ** 2))
    nmap = image_noco_map(GrayImage(img), [GtTarget(gt, (cx, cy))], NoCoConfig())
    lines = [f"{'box':<4} {'shift':>5} {'IoU':>9} {'NoCo':>9}"]
    for name, d in (("A", 0), ("B", 1), ("C", 3)):
        pred = gt.shifted(d, d)
        lines.append(f"{name:<4} {d:>5d} {iou(gt, pred):>9.6f} {noco_lookup(nmap, pred.center):>9.6f}")
    return lines


def cmd_iou_demo(args) -> int:
    _emit("\n".join(iou_demo_lines()) + "\n", args.out)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sirstbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, dataset=True, out=True, noco=False, jobs=False):
        if dataset:
            sp.add_argument("--dataset", required=True, help="dataset root holding annotations.json")
        if out:
            sp.add_argument("--out", help="output path (stdout when omitted)")
        if noco:
            sp.add_argument("--gamma", type=float, default=1.0, help="target/border ratio in (0, 1]")
            sp.add_argument("--sigma-scale", type=float, default=0.5, help="Gaussian sigma / region half-extent")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker threads for per-image work")
        sp.add_argument("--seed", type=int, default=0, help="random seed")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--suite", choices=sorted(SUITES), help="named suite; overrides the scene options")
    sp.add_argument("--n-images", type=int, default=20)
    sp.add_argument("--height", type=int, default=256)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--n-targets", type=int, default=2)
    sp.add_argument("--amplitude", type=float, default=0.5)
    sp.add_argument("--snr", type=float, default=20.0)
    sp.add_argument("--background", choices=BACKGROUNDS, default="flat")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("noco-gen", help="write NoCo maps for every dataset image")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--format", choices=("raw", "pgm", "both"), default="both")
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--sigma-scale", type=float, default=0.5)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_noco_gen)

    sp = sub.add_parser("detect", help="run a classical detector, write JSON-lines detections")
    common(sp, jobs=True)
    sp.add_argument("--method", choices=("lcm", "mpcm", "ipi"), required=True)
    sp.add_argument("--k", type=float, help=f"threshold factor (defaults: {DEFAULT_K})")
    sp.add_argument("--patch", type=int, default=50, help="IPI patch size")
    sp.add_argument("--patch-stride", type=int, default=20, help="IPI patch stride")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("eval", help="compute mNoCoAP for a detections file")
    common(sp, noco=True, jobs=True)
    sp.add_argument("--detections", required=True)
    sp.add_argument("--deltas", help="comma-separated NoCo thresholds (default 0.1..0.9)")
    sp.add_argument("--max-dets", type=int, default=100, help="detections kept per image")
    sp.add_argument("--format", choices=("json", "table", "svg"), default="table")
    sp.add_argument("--name", default="method", help="row label in the table")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("assign-stats", help="label-assignment coverage statistics")
    common(sp)
    sp.add_argument("--scheme", choices=("center", "aspb", "simplegrid"), required=True)
    sp.add_argument("--stride", type=float, action="append", help="feature stride (repeat for levels)")
    sp.add_argument("--pseudo-factor", type=float, default=1.5, help="pseudo-box size / stride")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_assign_stats)

    sp = sub.add_parser("loss-eval", help="evaluate the training objective on a JSON fixture")
    sp.add_argument("fixture")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_loss_eval)

    sp = sub.add_parser("iou-demo", help="IoU vs NoCo under 1 and 3 pixel shifts of a 3x3 target")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_iou_demo)
    return p


def _hint(command: Optional[str]) -> str:
    keys = {
        "eval": ("dataset", "detections"),
        "loss-eval": ("loss",),
    }.get(command, ("dataset",))
    return "\n".join("hint: " + SCHEMA_HINTS[k] for k in keys)


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("SIRSTBENCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help / --version exit 0, usage errors exit 1
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DatasetError, NoCoError, EvalError, SynthError, UsageError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_hint(args.command), file=sys.stderr)
        return EXIT_INVALID
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
