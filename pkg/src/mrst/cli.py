"""Command line interface.

Subcommands cover the full pipeline: ``phantom`` (rasterize a test object),
``simulate`` (low-dose scan), ``train`` (learn a model from images),
``reconstruct`` (fbp/ep/st/mrst2), ``evaluate`` and ``compare`` (ROI
metrics), and ``sweep`` (grid-search reconstruction parameters).

Every file-producing run also writes ``<output>.manifest.json`` recording
the argv, resolved parameters, input digests, and library versions; outputs
are written atomically (temp file + rename) and partial files are removed
on failure.  An INI config file can supply defaults per section; unknown
keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io as _stdio
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .core import Image, ImageGrid, PatchConfig, PatchSet, extract_patches
from .io import (
    read_image,
    read_model,
    read_phantom_spec,
    read_sinogram,
    write_image,
    write_model,
    write_pgm16,
    write_sinogram,
)
from .learning import TrainConfig, train
from .metrics import circular_roi, downsample_image, psnr, rmse
from .recon import EpConfig, ReconConfig, fbp, reconstruct_ep, reconstruct_transform
from .sim import PRESET_NAMES, DoseConfig, make_phantom, phantom_preset, simulate_sinogram
from .tomo import FAN, PARALLEL, Geometry


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _window(text):
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected LO:HI")
    lo, hi = float(parts[0]), float(parts[1])
    if not hi > lo:
        raise argparse.ArgumentTypeError("window must satisfy HI > LO")
    return (lo, hi)


def _grid_values(text):
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    return vals


def _resolve_threads(value):
    """Validate the worker-count request.

    All kernels are deterministic regardless of this value; it exists so
    callers can cap resource usage without changing results.
    """
    if value is None:
        value = os.environ.get("MRST_THREADS", "1")
    n = int(value)
    if n < 1:
        raise ValueError("threads must be a positive integer")
    return n


class _OutputSet:
    """Track produced files so failures leave no partial outputs behind."""

    def __init__(self):
        self.paths = []

    def write_bytes_atomic(self, path, payload):
        d = os.path.dirname(os.path.abspath(path)) or "."
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".mrst-tmp-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.paths.append(path)

    def write_with(self, path, writer, *args, **kwargs):
        """Run a path-based writer against a temp file, then rename."""
        d = os.path.dirname(os.path.abspath(path)) or "."
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".mrst-tmp-")
        os.close(fd)
        try:
            writer(tmp, *args, **kwargs)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.paths.append(path)

    def cleanup(self):
        for p in self.paths:
            try:
                os.unlink(p)
            except OSError:
                pass


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outputs, primary_out, argv, params, inputs):
    import numpy
    import scipy

    canon = json.dumps(params, sort_keys=True)
    manifest = {
        "argv": list(argv),
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "inputs": {p: _file_digest(p) for p in inputs},
        "params": params,
        "versions": {
            "mrst": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
        },
    }
    payload = (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode()
    outputs.write_bytes_atomic(primary_out + ".manifest.json", payload)


def _csv_bytes(rows):
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue().encode()


# ---------------------------------------------------------------------------
# Config file support

_CONFIG_SECTIONS = {
    "phantom": "phantom",
    "simulate": "dose",
    "train": "train",
    "evaluate": "metrics",
    "compare": "metrics",
}
_GEOMETRY_COMMANDS = ("simulate",)
_RECON_SECTIONS = {"fbp": "recon.fbp", "ep": "recon.ep", "st": "recon.st", "mrst2": "recon.mrst2"}

_GRID_KEYS = {"width", "height", "pixel_size"}
_TRANSFORM_KEYS = _GRID_KEYS | {
    "beta", "gamma1", "gamma2", "outer_iters", "inner_iters", "subsets", "solver",
    "init", "fbp_window", "ep_beta", "ep_delta", "ep_iters",
    "patch_w", "patch_h", "stride", "boundary",
}
_SECTION_KEYS = {
    "phantom": _GRID_KEYS | {"preset", "spec"},
    "geometry": {"geometry", "views", "dets", "det_spacing", "dso", "dsd"},
    "dose": {"i0", "seed", "noiseless", "weights"},
    "train": {"eta1", "eta2", "iters", "layers", "seed", "max_patches", "log_every",
              "patch_w", "patch_h", "stride", "boundary", "images"},
    "recon.fbp": _GRID_KEYS | {"fbp_window"},
    "recon.ep": _GRID_KEYS | {"ep_beta", "ep_delta", "ep_iters", "subsets",
                              "init", "fbp_window"},
    "recon.st": _TRANSFORM_KEYS,
    "recon.mrst2": _TRANSFORM_KEYS,
    "metrics": {"roi", "peak"},
}


def _load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        parser.read_file(f)
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ValueError(f"{path}: unknown config section [{section}]")
        allowed = _SECTION_KEYS[section]
        for key in parser[section]:
            if key.replace("-", "_") not in allowed:
                raise ValueError(f"{path}: unknown key '{key}' in section [{section}]")
    return parser


def _explicit_dests(sub, argv):
    """Dests whose option strings literally appear on the command line."""
    tokens = list(argv)
    out = set()
    for action in sub._actions:
        for opt in action.option_strings:
            if any(t == opt or t.startswith(opt + "=") for t in tokens):
                out.add(action.dest)
    return out


def _apply_config_section(sub, args_ns, section_name, config, config_dir, explicit):
    """Use config values as defaults for flags not given on the command line."""
    if not config.has_section(section_name):
        return
    dests = {a.dest: a for a in sub._actions}
    for key, raw in config.items(section_name):
        dest = key.replace("-", "_")
        if dest not in dests or dest in explicit:
            continue  # not consumed by this command, or explicit flag wins
        action = dests[dest]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = config.getboolean(section_name, key)
        elif action.nargs in ("+", "*"):
            value = [
                os.path.normpath(os.path.join(config_dir, tok)) if dest in _PATH_DESTS
                else tok
                for tok in raw.split()
            ]
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        if isinstance(value, str) and dest in _PATH_DESTS:
            value = os.path.normpath(os.path.join(config_dir, value))
        setattr(args_ns, dest, value)


_PATH_DESTS = {"spec", "truth", "sino", "model", "recon", "out", "out_csv", "images"}


# ---------------------------------------------------------------------------
# Geometry / shared argument groups


def _add_geometry_args(p):
    p.add_argument("--geometry", choices=(PARALLEL, FAN), default=PARALLEL,
                   help="acquisition geometry kind")
    p.add_argument("--views", type=_positive_int, default=180, help="number of views")
    p.add_argument("--dets", type=_positive_int, default=192, help="detector bins per view")
    p.add_argument("--det-spacing", type=float, default=1.0, help="detector pitch in mm")
    p.add_argument("--dso", type=float, default=0.0, help="source-isocenter distance (fan)")
    p.add_argument("--dsd", type=float, default=0.0, help="source-detector distance (fan)")


def _geometry_from_args(args):
    return Geometry(args.geometry, args.views, args.dets, args.det_spacing,
                    args.dso, args.dsd)


def _add_grid_args(p, default_size=128):
    p.add_argument("--width", type=_positive_int, default=default_size)
    p.add_argument("--height", type=_positive_int, default=default_size)
    p.add_argument("--pixel-size", type=float, default=1.0, help="pixel pitch in mm")


def _grid_from_args(args):
    return ImageGrid(args.width, args.height, args.pixel_size, args.pixel_size)


def _add_common(p):
    p.add_argument("--config", default=None, help="INI config file with defaults")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker cap (results do not depend on it)")


def _patch_config_from(args):
    return PatchConfig(args.patch_w, args.patch_h, args.stride, args.stride, args.boundary)


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_phantom(args, outputs, argv):
    grid = _grid_from_args(args)
    if args.spec:
        ph = read_phantom_spec(args.spec, grid)
        inputs = [args.spec]
    else:
        ph = phantom_preset(args.preset, grid)
        inputs = []
    img = make_phantom(ph)
    outputs.write_with(args.out, write_image, img)
    if args.preview:
        outputs.write_with(args.preview, write_pgm16, img, args.window)
    params = {
        "command": "phantom", "preset": None if args.spec else args.preset,
        "spec": args.spec, "width": grid.width, "height": grid.height,
        "pixel_size": grid.pixel_size_x, "out": args.out,
    }
    _write_manifest(outputs, args.out, argv, params, inputs)
    print(f"wrote {args.out} ({grid.width}x{grid.height})")


def _cmd_simulate(args, outputs, argv):
    truth = read_image(args.truth)
    geom = _geometry_from_args(args)
    dose = DoseConfig(args.i0, seed=args.seed, noiseless=args.noiseless,
                      weights=args.weights)
    sino = simulate_sinogram(truth, geom, dose)
    outputs.write_with(args.out, write_sinogram, sino)
    params = {
        "command": "simulate", "geometry": geom.kind, "views": geom.n_views,
        "dets": geom.n_det, "det_spacing": geom.det_spacing, "dso": geom.dso,
        "dsd": geom.dsd, "i0": dose.i0, "seed": dose.seed,
        "noiseless": dose.noiseless, "weights": dose.weights, "out": args.out,
    }
    _write_manifest(outputs, args.out, argv, params, [args.truth])
    print(f"wrote {args.out} ({geom.n_views} views x {geom.n_det} bins)")


def _cmd_train(args, outputs, argv):
    patch_cfg = _patch_config_from(args)
    columns = []
    for path in args.images:
        img = read_image(path)
        columns.append(extract_patches(img, patch_cfg).data)
    data = np.hstack(columns)
    patches = PatchSet(data, patch_cfg, (0, 0))
    cfg = TrainConfig(
        eta1=args.eta1, eta2=args.eta2, iterations=args.iters, layers=args.layers,
        seed=args.seed, max_patches=args.max_patches,
        log_every=args.log_every,
    )
    model, report = train(patches, cfg)
    outputs.write_with(args.out, write_model, model)
    if args.log:
        rows = [("iter", "cost", "nnz1_frac", "nnz2_frac")]
        for i in range(cfg.iterations):
            rows.append((i + 1, repr(float(report.cost_history[i])),
                         repr(float(report.nnz1_history[i])),
                         repr(float(report.nnz2_history[i]))))
        outputs.write_bytes_atomic(args.log, _csv_bytes(rows))
    params = {
        "command": "train", "eta1": cfg.eta1, "eta2": cfg.eta2,
        "iters": cfg.iterations, "layers": cfg.layers, "seed": cfg.seed,
        "max_patches": cfg.max_patches, "patch_w": patch_cfg.patch_w,
        "patch_h": patch_cfg.patch_h, "stride": patch_cfg.stride_x,
        "boundary": patch_cfg.boundary, "images": list(args.images), "out": args.out,
    }
    _write_manifest(outputs, args.out, argv, params, list(args.images))
    print(f"wrote {args.out} (final cost {report.cost_history[-1]:.6e})")


def _recon_config_from(args, solver_default="oslalm"):
    return ReconConfig(
        beta=args.beta, gamma1=args.gamma1, gamma2=args.gamma2,
        outer_iters=args.outer_iters, inner_iters=args.inner_iters,
        subsets=args.subsets, solver=args.solver or solver_default,
        patch=_patch_config_from(args),
    )


def _resolve_init(args, sino, grid):
    if args.init == "fbp":
        return fbp(sino, grid, window=args.fbp_window)
    if args.init == "ep":
        cfg = EpConfig(beta=args.ep_beta, delta=args.ep_delta,
                       iters=args.ep_iters, subsets=args.subsets)
        img, _ = reconstruct_ep(sino, cfg, grid)
        return img
    return read_image(args.init)


def _cmd_reconstruct(args, outputs, argv):
    sino = read_sinogram(args.sino)
    grid = _grid_from_args(args)
    inputs = [args.sino]
    history = None
    if args.method == "fbp":
        img = fbp(sino, grid, window=args.fbp_window)
    elif args.method == "ep":
        cfg = EpConfig(beta=args.ep_beta, delta=args.ep_delta,
                       iters=args.ep_iters, subsets=args.subsets)
        x0 = None if args.init == "fbp" else _resolve_init(args, sino, grid)
        img, history = reconstruct_ep(sino, cfg, grid, x0=x0)
    else:
        if not args.model:
            raise ValueError(f"--method {args.method} requires --model")
        model = read_model(args.model)
        inputs.append(args.model)
        want_layers = 1 if args.method == "st" else 2
        if model.layers != want_layers:
            raise ValueError(
                f"--method {args.method} needs a {want_layers}-layer model, "
                f"got {model.layers} layers"
            )
        cfg = _recon_config_from(args)
        x0 = _resolve_init(args, sino, grid)
        img, history = reconstruct_transform(sino, model, cfg, grid, x0=x0)
    outputs.write_with(args.out, write_image, img)
    if args.preview:
        outputs.write_with(args.preview, write_pgm16, img, args.window)
    if args.log and history is not None:
        rows = [("iter", "objective")]
        rows += [(i + 1, repr(float(v))) for i, v in enumerate(history)]
        outputs.write_bytes_atomic(args.log, _csv_bytes(rows))
    params = {"command": "reconstruct", "method": args.method, "out": args.out,
              "width": grid.width, "height": grid.height,
              "pixel_size": grid.pixel_size_x}
    for key in ("beta", "gamma1", "gamma2", "outer_iters", "inner_iters",
                "subsets", "solver", "ep_beta", "ep_delta", "ep_iters",
                "fbp_window", "init", "patch_w", "patch_h", "stride", "boundary"):
        params[key] = getattr(args, key)
    _write_manifest(outputs, args.out, argv, params, inputs)
    print(f"wrote {args.out} (method {args.method})")


def _metric_rows(pairs, truth, args):
    """(label, image) pairs -> CSV rows, downsampling truth if needed."""
    rows = [("method", "rmse_hu", "psnr_db")]
    for label, img in pairs:
        ref = truth
        if ref.data.shape != img.data.shape:
            fh = truth.height // img.height
            fw = truth.width // img.width
            if fh == fw and fh >= 1 and truth.height == img.height * fh \
                    and truth.width == img.width * fw:
                ref = downsample_image(truth, fh)
            else:
                raise ValueError(
                    f"truth {truth.data.shape} is not an integer multiple of "
                    f"reconstruction {img.data.shape}"
                )
        roi = circular_roi((img.width, img.height), args.roi)
        r = rmse(img, ref, roi)
        p = psnr(img, ref, roi, peak=args.peak)
        rows.append((label, f"{r:.6g}", "inf" if math.isinf(p) else f"{p:.6g}"))
    return rows


def _cmd_evaluate(args, outputs, argv):
    truth = read_image(args.truth)
    img = read_image(args.recon)
    rows = _metric_rows([(args.label, img)], truth, args)
    text = "\n".join(",".join(str(c) for c in row) for row in rows)
    print(text)
    if args.out:
        outputs.write_bytes_atomic(args.out, (text + "\n").encode())
        params = {"command": "evaluate", "roi": args.roi, "peak": args.peak,
                  "label": args.label, "out": args.out}
        _write_manifest(outputs, args.out, argv, params, [args.truth, args.recon])


def _cmd_compare(args, outputs, argv):
    truth = read_image(args.truth)
    pairs = []
    for spec in args.recons:
        if "=" not in spec:
            raise ValueError(f"expected LABEL=PATH, got {spec!r}")
        label, path = spec.split("=", 1)
        pairs.append((label, read_image(path), path))
    rows = _metric_rows([(l, im) for l, im, _ in pairs], truth, args)
    widths = [max(len(str(r[i])) for r in rows) for i in range(3)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(str(c).ljust(widths[j]) for j, c in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(3)))
    text = "\n".join(lines)
    print(text)
    if args.out:
        outputs.write_bytes_atomic(args.out, (text + "\n").encode())
        params = {"command": "compare", "roi": args.roi, "peak": args.peak,
                  "out": args.out}
        _write_manifest(outputs, args.out, argv, params,
                        [args.truth] + [p for _, _, p in pairs])


def _cmd_sweep(args, outputs, argv):
    sino = read_sinogram(args.sino)
    truth = read_image(args.truth)
    grid = _grid_from_args(args)
    ref = truth
    if ref.data.shape != grid.shape:
        f = truth.height // grid.height
        if f < 1 or truth.height != grid.height * f or truth.width != grid.width * f:
            raise ValueError("truth is not an integer multiple of the recon grid")
        ref = downsample_image(truth, f)
    roi = circular_roi((grid.width, grid.height), args.roi)
    inputs = [args.sino, args.truth]
    rows = [("method", "beta", "gamma1", "gamma2", "rmse_hu")]
    best = None

    if args.method == "ep":
        x0 = fbp(sino, grid, window=args.fbp_window)
        for beta in args.beta_grid:
            cfg = EpConfig(beta=beta, delta=args.ep_delta, iters=args.ep_iters,
                           subsets=args.subsets)
            img, _ = reconstruct_ep(sino, cfg, grid, x0=x0)
            r = rmse(img, ref, roi)
            rows.append(("ep", repr(beta), "", "", f"{r:.6g}"))
            if best is None or r < best[0]:
                best = (r, img, {"beta": beta})
    else:
        model = read_model(args.model)
        inputs.append(args.model)
        want_layers = 1 if args.method == "st" else 2
        if model.layers != want_layers:
            raise ValueError(f"--method {args.method} needs a {want_layers}-layer model")
        x0 = _resolve_init(args, sino, grid)
        gamma2_grid = args.gamma2_grid if args.method == "mrst2" else [0.0]
        for beta in args.beta_grid:
            for g1 in args.gamma1_grid:
                for g2 in gamma2_grid:
                    cfg = ReconConfig(
                        beta=beta, gamma1=g1, gamma2=g2,
                        outer_iters=args.outer_iters, inner_iters=args.inner_iters,
                        subsets=args.subsets, solver=args.solver or "oslalm",
                        patch=_patch_config_from(args),
                    )
                    img, _ = reconstruct_transform(sino, model, cfg, grid, x0=x0)
                    r = rmse(img, ref, roi)
                    rows.append((args.method, repr(beta), repr(g1), repr(g2), f"{r:.6g}"))
                    if best is None or r < best[0]:
                        best = (r, img, {"beta": beta, "gamma1": g1, "gamma2": g2})

    outputs.write_bytes_atomic(args.out_csv, _csv_bytes(rows))
    if args.out_best:
        outputs.write_with(args.out_best, write_image, best[1])
    params = {"command": "sweep", "method": args.method, "roi": args.roi,
              "best_rmse": best[0], "best_params": best[2],
              "out_csv": args.out_csv}
    _write_manifest(outputs, args.out_csv, argv, params, inputs)
    print(f"best {args.method}: rmse={best[0]:.6g} at {best[2]}")


# ---------------------------------------------------------------------------
# Parser assembly


def _add_patch_args(p):
    p.add_argument("--patch-w", type=_positive_int, default=8)
    p.add_argument("--patch-h", type=_positive_int, default=8)
    p.add_argument("--stride", type=_positive_int, default=1)
    p.add_argument("--boundary", choices=("clip", "wrap"), default="clip")


def _add_recon_shared(p):
    p.add_argument("--beta", type=float, default=1e-6, help="regularizer weight")
    p.add_argument("--gamma1", type=float, default=25.0, help="layer-1 threshold (HU)")
    p.add_argument("--gamma2", type=float, default=10.0, help="layer-2 threshold (HU)")
    p.add_argument("--outer-iters", type=_positive_int, default=200)
    p.add_argument("--inner-iters", type=_positive_int, default=2)
    p.add_argument("--subsets", type=_positive_int, default=4)
    p.add_argument("--solver", choices=("mm", "oslalm"), default=None)
    p.add_argument("--init", default="fbp",
                   help="initial image: 'fbp', 'ep', or an image file path")
    p.add_argument("--fbp-window", choices=("hanning", "ramp"), default="hanning")
    p.add_argument("--ep-beta", type=float, default=2.0**-22)
    p.add_argument("--ep-delta", type=float, default=10.0)
    p.add_argument("--ep-iters", type=_positive_int, default=100)
    _add_patch_args(p)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mrst",
        description="Two-layer sparsifying transform learning and low-dose CT reconstruction",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = subs.add_parser("phantom", help="rasterize an ellipse phantom to an image file")
    _add_common(p)
    _add_grid_args(p)
    p.add_argument("--preset", choices=PRESET_NAMES, default="ellipses")
    p.add_argument("--spec", default=None, help="text file: cx cy a b theta hu per line")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--preview", default=None, help="optional PGM16 preview path")
    p.add_argument("--window", type=_window, default=(800.0, 1200.0),
                   help="preview display window LO:HI in HU")
    p.set_defaults(func=_cmd_phantom)

    p = subs.add_parser("simulate", help="simulate a low-dose scan of a truth image")
    _add_common(p)
    _add_geometry_args(p)
    p.add_argument("--truth", required=True, help="ground-truth image file")
    p.add_argument("--i0", type=float, default=1e4, help="blank-scan photons per ray")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--weights", choices=("counts", "expected"), default="counts")
    p.add_argument("--out", required=True, help="output sinogram path")
    p.set_defaults(func=_cmd_simulate)

    p = subs.add_parser("train", help="learn a transform model from images")
    _add_common(p)
    _add_patch_args(p)
    p.add_argument("--images", nargs="+", required=True, help="training image files")
    p.add_argument("--eta1", type=float, default=80.0)
    p.add_argument("--eta2", type=float, default=60.0)
    p.add_argument("--iters", type=_positive_int, default=1000)
    p.add_argument("--layers", type=int, choices=(1, 2), default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-patches", type=_positive_int, default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--log", default=None, help="optional CSV cost log")
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("reconstruct", help="reconstruct an image from a sinogram")
    _add_common(p)
    _add_grid_args(p)
    _add_recon_shared(p)
    p.add_argument("--method", choices=("fbp", "ep", "st", "mrst2"), required=True)
    p.add_argument("--sino", required=True, help="input sinogram path")
    p.add_argument("--model", default=None, help="model file (st/mrst2)")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--preview", default=None, help="optional PGM16 preview path")
    p.add_argument("--window", type=_window, default=(800.0, 1200.0))
    p.add_argument("--log", default=None, help="optional CSV objective log")
    p.set_defaults(func=_cmd_reconstruct)

    p = subs.add_parser("evaluate", help="print ROI metrics for one reconstruction")
    _add_common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--label", default="recon")
    p.add_argument("--roi", type=float, default=0.75, help="ROI radius fraction")
    p.add_argument("--peak", type=float, default=None, help="fixed PSNR peak (HU)")
    p.add_argument("--out", default=None, help="optional CSV output path")
    p.set_defaults(func=_cmd_evaluate)

    p = subs.add_parser("compare", help="tabulate ROI metrics for several methods")
    _add_common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("recons", nargs="+", metavar="LABEL=PATH")
    p.add_argument("--roi", type=float, default=0.75)
    p.add_argument("--peak", type=float, default=None)
    p.add_argument("--out", default=None, help="optional table output path")
    p.set_defaults(func=_cmd_compare)

    p = subs.add_parser("sweep", help="grid-search recon parameters to minimize ROI RMSE")
    _add_common(p)
    _add_grid_args(p)
    _add_recon_shared(p)
    p.add_argument("--method", choices=("ep", "st", "mrst2"), required=True)
    p.add_argument("--sino", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--beta-grid", type=_grid_values, default=[1e-6])
    p.add_argument("--gamma1-grid", type=_grid_values, default=[25.0])
    p.add_argument("--gamma2-grid", type=_grid_values, default=[10.0])
    p.add_argument("--roi", type=float, default=0.75)
    p.add_argument("--out-csv", required=True, help="CSV of all grid points")
    p.add_argument("--out-best", default=None, help="optional best image output")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = _build_parser()
    outputs = _OutputSet()
    try:
        args = parser.parse_args(argv)
        _resolve_threads(args.threads)
        if args.config:
            config = _load_config(args.config)
            config_dir = os.path.dirname(os.path.abspath(args.config))
            sub = next(
                s for a in parser._actions if isinstance(a, argparse._SubParsersAction)
                for name, s in a.choices.items() if name == args.command
            )
            explicit = _explicit_dests(sub, argv)
            sections = []
            if args.command in _CONFIG_SECTIONS:
                sections.append(_CONFIG_SECTIONS[args.command])
            if args.command in _GEOMETRY_COMMANDS:
                sections.append("geometry")
            if args.command in ("reconstruct", "sweep"):
                method = getattr(args, "method", None)
                if method in _RECON_SECTIONS:
                    sections.append(_RECON_SECTIONS[method])
                if args.command == "sweep":
                    sections.append("metrics")
            for section in sections:
                _apply_config_section(sub, args, section, config, config_dir, explicit)
        args.func(args, outputs, argv)
        return 0
    except BrokenPipeError:
        return 1
    except (ValueError, OSError, KeyError) as e:
        outputs.cleanup()
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
