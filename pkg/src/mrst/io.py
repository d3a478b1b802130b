"""Binary file formats and text sidecars.

All multi-byte fields are little-endian; array payloads are float64
row-major.  Three magic-tagged containers cover the pipeline: images
(``MRSTIMG1``), learned models (``MRSTMDL1``), and sinograms with weights
(``MRSTSIN1``).  A big-endian 16-bit PGM writer exists for eyeballing
results with stock viewers.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import Image, ImageGrid
from .model import TwoLayerModel
from .sim import Ellipse, Phantom
from .tomo import FAN, PARALLEL, Geometry, Sinogram

__all__ = [
    "FormatError",
    "read_image",
    "write_image",
    "read_model",
    "write_model",
    "read_sinogram",
    "write_sinogram",
    "read_phantom_spec",
    "write_phantom_spec",
    "write_pgm16",
]

MAGIC_IMAGE = b"MRSTIMG1"
MAGIC_MODEL = b"MRSTMDL1"
MAGIC_SINO = b"MRSTSIN1"


class FormatError(ValueError):
    """A file does not conform to its declared container format."""


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _read_f64(f, count, what):
    buf = _read_exact(f, 8 * count, what)
    return np.frombuffer(buf, dtype="<f8").astype(np.float64)


def _check_magic(f, magic, path):
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, got {got!r}")


def _f64_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def write_image(path, img):
    """Write an Image container: magic, u32 w/h, f64 pixel sizes, payload."""
    if not isinstance(img, Image):
        raise TypeError("expected an Image")
    with open(path, "wb") as f:
        f.write(MAGIC_IMAGE)
        f.write(struct.pack("<II", img.width, img.height))
        f.write(struct.pack("<dd", img.pixel_size_x, img.pixel_size_y))
        f.write(_f64_bytes(img.data))


def read_image(path):
    with open(path, "rb") as f:
        _check_magic(f, MAGIC_IMAGE, path)
        w, h = struct.unpack("<II", _read_exact(f, 8, "image dimensions"))
        psx, psy = struct.unpack("<dd", _read_exact(f, 16, "pixel sizes"))
        if w < 1 or h < 1:
            raise FormatError(f"{path}: invalid image dimensions {w} x {h}")
        data = _read_f64(f, w * h, "image payload")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after image payload")
    try:
        return Image(w, h, psx, psy, data.reshape(h, w))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_model(path, model):
    """Write a model container: u32 p, u8 layers, f64 thresholds, transforms."""
    if not isinstance(model, TwoLayerModel):
        raise TypeError("expected a TwoLayerModel")
    with open(path, "wb") as f:
        f.write(MAGIC_MODEL)
        f.write(struct.pack("<IB", model.p, model.layers))
        f.write(struct.pack("<dd", model.eta1, model.eta2))
        f.write(_f64_bytes(model.w1))
        f.write(_f64_bytes(model.w2))


def read_model(path):
    """Read a model container; unitarity is re-verified on load."""
    with open(path, "rb") as f:
        _check_magic(f, MAGIC_MODEL, path)
        p, layers = struct.unpack("<IB", _read_exact(f, 5, "model header"))
        eta1, eta2 = struct.unpack("<dd", _read_exact(f, 16, "model thresholds"))
        if p < 1:
            raise FormatError(f"{path}: invalid patch length {p}")
        if layers not in (1, 2):
            raise FormatError(f"{path}: invalid layer count {layers}")
        w1 = _read_f64(f, p * p, "first transform").reshape(p, p)
        w2 = _read_f64(f, p * p, "second transform").reshape(p, p)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after model payload")
    try:
        return TwoLayerModel(w1=w1, w2=w2, eta1=eta1, eta2=eta2, layers=int(layers))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


_KIND_CODES = {PARALLEL: 0, FAN: 1}
_KIND_NAMES = {0: PARALLEL, 1: FAN}


def write_sinogram(path, sino):
    """Write a sinogram container: geometry header, then y, then weights."""
    if not isinstance(sino, Sinogram):
        raise TypeError("expected a Sinogram")
    g = sino.geometry
    with open(path, "wb") as f:
        f.write(MAGIC_SINO)
        f.write(struct.pack("<BII", _KIND_CODES[g.kind], g.n_views, g.n_det))
        f.write(struct.pack("<ddd", g.det_spacing, g.dso, g.dsd))
        f.write(_f64_bytes(sino.y))
        f.write(_f64_bytes(sino.weights))


def read_sinogram(path):
    with open(path, "rb") as f:
        _check_magic(f, MAGIC_SINO, path)
        kind, n_views, n_det = struct.unpack("<BII", _read_exact(f, 9, "sinogram header"))
        spacing, dso, dsd = struct.unpack("<ddd", _read_exact(f, 24, "sinogram distances"))
        if kind not in _KIND_NAMES:
            raise FormatError(f"{path}: unknown geometry code {kind}")
        n = n_views * n_det
        if n < 1:
            raise FormatError(f"{path}: empty sinogram")
        y = _read_f64(f, n, "sinogram values").reshape(n_views, n_det)
        w = _read_f64(f, n, "sinogram weights").reshape(n_views, n_det)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after sinogram payload")
    try:
        geom = Geometry(_KIND_NAMES[kind], n_views, n_det, spacing, dso, dsd)
        return Sinogram(geom, y, w)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_phantom_spec(path, phantom):
    """Write the text form: one ``cx cy a b theta hu`` line per ellipse."""
    lines = ["# cx cy a b theta hu (mm, radians, additive modified HU)"]
    for e in phantom.ellipses:
        lines.append(f"{e.cx!r} {e.cy!r} {e.a!r} {e.b!r} {e.theta!r} {e.hu!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_phantom_spec(path, grid):
    """Parse the text form onto a target grid; '#' starts a comment."""
    ellipses = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(
                    f"{path}:{lineno}: expected 6 fields 'cx cy a b theta hu', got {len(parts)}"
                )
            try:
                vals = [float(v) for v in parts]
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
            try:
                ellipses.append(Ellipse(*vals))
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
    if not ellipses:
        raise FormatError(f"{path}: no ellipses found")
    return Phantom(tuple(ellipses), grid)


def write_pgm16(path, img, window=(0.0, 2000.0)):
    """Write a 16-bit grayscale PGM preview with a linear display window.

    Values at or below ``window[0]`` map to 0, at or above ``window[1]`` to
    65535.  PGM16 sample values are big-endian per the format.
    """
    if not isinstance(img, Image):
        raise TypeError("expected an Image")
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValueError("window must satisfy hi > lo")
    scaled = np.clip((img.data - lo) / (hi - lo), 0.0, 1.0)
    samples = np.round(scaled * 65535.0).astype(">u2")
    header = f"P5\n{img.width} {img.height}\n65535\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(samples.tobytes())
