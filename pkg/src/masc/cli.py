"""Command-line frontend: ``masc mosaic | raw | synth | eval``.

Exit codes: 0 success, 2 configuration error, 3 pipeline error (the message
names the failing stage), 4 too few rows shared with the ground truth.

Every option can also come from a ``key=value`` file given by ``--config``;
keys are the long flag names (``patch-size`` or ``patch_size``).  Flags on
the command line win over the file.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import pipeline
from .detections import DEFAULT_CONF_THRESH, DEFAULT_IOU_THRESH
from .errors import InsufficientOverlap, MissingImage
from .evaluation import join_and_eval, read_counts_csv, read_ground_truth, write_eval
from .layout import LayoutConfig
from .mosaic_mode import ClassicalProvider, LabelDirProvider, MosaicConfig, run_mosaic_mode
from .raster import ClassicalConfig, read_image, segment, to_gray8, write_image
from .rawframe_mode import DEFAULT_PIXEL_BUDGET, canvas_geometry, load_frames, render_mosaic, run_raw_mode

log = logging.getLogger("masc")

OUT_ENV = "MASC_OUT_DIR"


class ConfigError(Exception):
    """Bad user configuration; reported with exit status 2."""


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")
        self.stage = stage


class _Stage:
    """Remembers which pipeline stage is running so failures can name it."""

    def __init__(self):
        self.name = "setup"

    def __call__(self, name):
        self.name = name
        return self

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


# -- argument parsing ------------------------------------------------------------------


def _frame_size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _plants(text):
    if ":" in text:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    return int(text)


def _orientation(text):
    if text in ("auto", "none"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected auto, none or an angle in degrees") from None


def _add_common(p):
    p.add_argument("--config", type=Path, help="key=value file supplying option defaults")
    p.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or ./masc_out)")
    p.add_argument("--iou", type=float, default=DEFAULT_IOU_THRESH, help="NMS IoU threshold")
    p.add_argument("--conf", type=float, default=DEFAULT_CONF_THRESH, help="confidence threshold")
    p.add_argument("--bin", type=float, default=LayoutConfig.bin, help="histogram bin width, px")
    p.add_argument("--window", type=int, default=LayoutConfig.window, help="smoothing window, bins (odd)")
    p.add_argument("--prominence", type=float, default=LayoutConfig.prominence, help="peak floor, fraction of max")
    p.add_argument("--depth", type=float, default=LayoutConfig.depth, help="peak floor, fraction of own height")
    p.add_argument("--field-mode", choices=("nursery", "production"), default="nursery")
    p.add_argument("--orientation", type=_orientation, default="auto", help="auto, none, or row angle in degrees")
    p.add_argument("--workers", type=int, default=1, help="parallel workers")
    p.add_argument("--overlay", action="store_true", help="write overlay.png")
    p.add_argument("--truth", type=Path, help="ground-truth CSV; also run the evaluation")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masc", description="Maize stand counting from UAV imagery.")
    sub = parser.add_subparsers(dest="mode", required=True)

    m = sub.add_parser("mosaic", help="count plants on a pre-mosaicked image")
    m.add_argument("--image", type=Path, help="mosaic image")
    m.add_argument("--provider", choices=("classical", "labels-dir"), default="classical")
    m.add_argument("--labels-dir", type=Path, help="patch_<row>_<col>.txt label files")
    m.add_argument("--patch-size", type=int, default=1280)
    m.add_argument("--overlap", type=float, default=0.10, help="patch overlap fraction")
    m.add_argument("--keep-edge-boxes", action="store_true", help="keep boxes cut by interior patch edges")
    m.add_argument("--dump-stages", action="store_true", help="write ExG, mask and distance images per patch")
    _add_common(m)

    r = sub.add_parser("raw", help="count plants from raw frames and pairwise homographies")
    r.add_argument("--frames", type=Path, help="raw-frame directory")
    r.add_argument("--invert-pairwise", action="store_true", help="hom_<i> maps frame i-1 into frame i")
    r.add_argument("--frame-size", type=_frame_size, help="WIDTHxHEIGHT when frame images are absent")
    r.add_argument("--render-mosaic", action="store_true", help="write the stitched mosaic.png")
    r.add_argument("--pixel-budget", type=int, default=DEFAULT_PIXEL_BUDGET)
    _add_common(r)

    s = sub.add_parser("synth", help="generate a synthetic field, truth and flight")
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, default=None)
    s.add_argument("--ranges", type=int, default=3)
    s.add_argument("--rows", type=int, default=4, help="rows per range")
    s.add_argument("--plants", type=_plants, default=20, help="plants per row, N or LO:HI")
    s.add_argument("--double-rate", type=float, default=0.0)
    s.add_argument("--triple-rate", type=float, default=0.0)
    s.add_argument("--weed-density", type=float, default=0.0, help="weeds per megapixel")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frame-size", type=_frame_size, default=(400, 300))
    s.add_argument("--stride", type=_frame_size, default=(300, 150), help="flight stride XxY")
    s.add_argument("--sigma", type=float, default=0.0, help="pairwise translation noise, px")
    s.add_argument("--no-flight", action="store_true")
    s.add_argument("-q", "--quiet", action="store_true")

    e = sub.add_parser("eval", help="compare counts.csv with ground truth")
    e.add_argument("--config", type=Path)
    e.add_argument("--counts", type=Path, help="predicted range,row,count CSV")
    e.add_argument("--truth", type=Path, help="ground-truth range,row,count CSV")
    e.add_argument("--out", type=Path, default=None)
    e.add_argument("-q", "--quiet", action="store_true")
    return parser


def read_config_file(path) -> Dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"--config {path}: line {n}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, argv) -> argparse.Namespace:
    """Parse twice: once to find the subcommand and ``--config``, then with
    the file's values installed as defaults."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    if not args.config.is_file():
        raise ConfigError(f"--config: no such file: {args.config}")
    sub = parser._subparsers._group_actions[0].choices[args.mode]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in read_config_file(args.config).items():
        if key not in actions or key in ("config", "help"):
            raise ConfigError(f"--config {args.config}: unknown option '{key}'")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ConfigError(f"--config {args.config}: '{key}' expects true or false")
            defaults[key] = value.lower() in ("1", "true", "yes")
        else:
            defaults[key] = value  # argparse applies the type to string defaults
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _out_dir(args) -> Path:
    out = args.out or Path(os.environ.get(OUT_ENV, "masc_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_path(value, flag, kind="file"):
    if value is None:
        raise ConfigError(f"{flag} is required")
    ok = value.is_dir() if kind == "dir" else value.is_file()
    if not ok:
        raise ConfigError(f"{flag}: no such {kind}: {value}")


def _check_unit(args, *flags):
    for flag in flags:
        v = getattr(args, flag.lstrip("-").replace("-", "_"))
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{flag} must lie in [0, 1], got {v}")


def _check_counting(args):
    _check_unit(args, "--iou", "--conf", "--prominence", "--depth")
    if args.bin < 1:
        raise ConfigError("--bin must be >= 1")
    if args.window < 1 or args.window % 2 == 0:
        raise ConfigError("--window must be a positive odd number")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    if args.truth is not None:
        _require_path(args.truth, "--truth")


def _layout_cfg(args):
    return LayoutConfig(bin=args.bin, window=args.window, prominence=args.prominence, depth=args.depth)


def _finish(args, out, dets, extent, result, timer, background=None, origin=(0.0, 0.0)) -> int:
    pipeline.write_artifacts(out, dets, extent, result, timer.stages)
    if args.overlay and background is not None:
        write_image(out / "overlay.png", pipeline.render_overlay(background, dets, result, origin))
    elif args.overlay:
        log.warning("no imagery available; overlay skipped")
    rep = result.report
    log.info(
        "%d ranges, %d rows, %d plants counted, %d unassigned",
        len(result.layout.ranges),
        len(rep.rows),
        rep.total,
        rep.unassigned_count,
    )
    if args.truth is not None:
        ev = join_and_eval(rep, read_ground_truth(args.truth))
        write_eval(out, ev)
        print(f"R2={ev.r2:.6f}")
    return 0


# -- subcommands ---------------------------------------------------------------------


class _DumpingProvider:
    """Classical provider that also saves its intermediate rasters."""

    def __init__(self, cfg: ClassicalConfig, directory: Path):
        self.inner = ClassicalProvider(cfg)
        self.directory = directory

    def __call__(self, img, patch):
        st = segment(img, self.inner.cfg)
        if st is not None:
            for name, arr in (("exg", st.exg), ("mask", st.mask), ("distance", st.distance)):
                write_image(self.directory / f"{patch.name}_{name}.png", to_gray8(arr))
        return self.inner(img, patch)


def cmd_mosaic(args, stage: _Stage) -> int:
    _require_path(args.image, "--image")
    if args.provider == "labels-dir":
        _require_path(args.labels_dir, "--labels-dir", "dir")
    _check_counting(args)
    _check_unit(args, "--overlap")
    if args.overlap >= 1.0:
        raise ConfigError("--overlap must be below 1")
    if args.patch_size < 64:
        raise ConfigError("--patch-size must be >= 64")
    out = _out_dir(args)
    timer = pipeline.Timer()

    with stage("read"), timer("read"):
        mosaic = read_image(args.image)
    if mosaic.ndim == 2:
        mosaic = np.repeat(mosaic[..., None], 3, axis=2)
    mosaic = mosaic[..., :3]
    h, w = mosaic.shape[:2]

    if args.provider == "labels-dir":
        provider = LabelDirProvider(args.labels_dir)
    elif args.dump_stages:
        (out / "stages").mkdir(exist_ok=True)
        provider = _DumpingProvider(ClassicalConfig(), out / "stages")
    else:
        provider = ClassicalProvider()
    mcfg = MosaicConfig(
        patch_size=args.patch_size,
        overlap_frac=args.overlap,
        iou_thresh=args.iou,
        conf_thresh=args.conf,
        drop_edge_boxes=not args.keep_edge_boxes,
        workers=args.workers,
    )
    with stage("detection"), timer("detection"):
        dets = run_mosaic_mode(mosaic, provider, mcfg)
    extent = (-0.5, -0.5, w - 0.5, h - 0.5)
    with stage("counting"):
        omap = pipeline.orientation_map(mosaic) if args.orientation == "auto" else None
        result = pipeline.count_stage(dets, extent, args.orientation, omap, _layout_cfg(args), args.field_mode, timer)
    stage("output")
    return _finish(args, out, dets, extent, result, timer, mosaic)


def cmd_raw(args, stage: _Stage) -> int:
    _require_path(args.frames, "--frames", "dir")
    _check_counting(args)
    out = _out_dir(args)
    timer = pipeline.Timer()

    with stage("load"), timer("load"):
        frames = load_frames(args.frames, args.invert_pairwise, args.frame_size)
    with stage("projection"), timer("projection+nms"):
        dets, scene, chain = run_raw_mode(frames, args.iou, args.conf, args.workers, args.pixel_budget)

    background, origin = None, (0.0, 0.0)
    has_images = all(fr.image is not None or fr.image_path is not None for fr in frames)
    if has_images and (args.render_mosaic or args.overlay or args.orientation == "auto"):
        with stage("render"), timer("render"):
            try:
                background = render_mosaic(frames, chain, scene.extent)
                origin = canvas_geometry(scene.extent)[:2]
            except MissingImage as exc:
                log.warning("cannot render mosaic: %s", exc)
        if background is not None and args.render_mosaic:
            write_image(out / "mosaic.png", background)
    with stage("counting"):
        if args.orientation == "auto" and background is None:
            log.warning("no frame imagery; orientation estimated from detection boxes")
            omap = _box_density(dets, scene.extent)
        else:
            omap = pipeline.orientation_map(background) if args.orientation == "auto" else None
        result = pipeline.count_stage(
            dets, scene.extent, args.orientation, omap, _layout_cfg(args), args.field_mode, timer
        )
    stage("output")
    return _finish(args, out, dets, scene.extent, result, timer, background, origin)


def _box_density(dets, extent, max_dim=512) -> Optional[np.ndarray]:
    """Filled detection boxes on a reduced canvas, as a stand-in vegetation map."""
    if not dets:
        return None
    x0, y0, x1, y1 = extent
    s = max_dim / max(x1 - x0, y1 - y0)
    W, H = max(int(np.ceil((x1 - x0) * s)), 1), max(int(np.ceil((y1 - y0) * s)), 1)
    canvas = np.zeros((H, W))
    for d in dets:
        a, b, c, e = d.xyxy
        c0, c1 = int((a - x0) * s), int(np.ceil((c - x0) * s))
        r0, r1 = int((b - y0) * s), int(np.ceil((e - y0) * s))
        canvas[max(r0, 0) : max(r1, r0 + 1), max(c0, 0) : max(c1, c0 + 1)] = 1.0
    return canvas


def cmd_synth(args, stage: _Stage) -> int:
    from .synth import FieldSpec, generate_field, generate_flight, write_flight
    from .detections import write_labels
    from .errors import SpecInvalid

    out = _out_dir(args)
    spec = FieldSpec(
        ranges=args.ranges,
        rows_per_range=args.rows,
        plants_per_row=args.plants,
        double_rate=args.double_rate,
        triple_rate=args.triple_rate,
        weed_density=args.weed_density,
        seed=args.seed,
    )
    try:
        spec.validate()
    except SpecInvalid as exc:
        raise ConfigError(str(exc)) from None
    with stage("synth"):
        f = generate_field(spec)
        h, w = f.image.shape[:2]
        write_image(out / "field.png", f.image)
        (out / "truth.csv").write_text(f.report.to_csv())
        write_labels(out / "truth_global.txt", f.truth, w, h)
        (out / "layout_truth.json").write_text(f.layout.to_json() + "\n")
        if not args.no_flight:
            frames = generate_flight(f.image, f.truth, args.frame_size, args.stride, args.sigma, args.seed)
            write_flight(out / "frames", frames)
    log.info("field %dx%d, %d plants in %d rows", w, h, f.report.total, len(f.report.rows))
    return 0


def cmd_eval(args, stage: _Stage) -> int:
    _require_path(args.counts, "--counts")
    _require_path(args.truth, "--truth")
    with stage("eval"):
        ev = join_and_eval(read_counts_csv(args.counts), read_ground_truth(args.truth))
    out = args.out or args.counts.parent
    out.mkdir(parents=True, exist_ok=True)
    write_eval(out, ev)
    for k in ev.only_predicted:
        log.warning("predicted row %s has no ground truth", k)
    for k in ev.only_truth:
        log.warning("ground-truth row %s was not predicted", k)
    print(f"R2={ev.r2:.6f}")
    return 0


COMMANDS = {"mosaic": cmd_mosaic, "raw": cmd_raw, "synth": cmd_synth, "eval": cmd_eval}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"masc: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    stage = _Stage()
    try:
        return COMMANDS[args.mode](args, stage)
    except ConfigError as exc:
        print(f"masc: error: {exc}", file=sys.stderr)
        return 2
    except InsufficientOverlap as exc:
        print(f"masc: error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # anything raised inside a stage
        log.debug("traceback", exc_info=True)
        print(f"masc: error: {StageError(stage.name, exc)}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
