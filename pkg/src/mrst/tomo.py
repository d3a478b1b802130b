"""2D CT system model: acquisition geometries and a matched projector pair.

Rays are traced with Siddon's algorithm (exact ray/pixel intersection
lengths), assembled once per (geometry, grid) pair into a sparse system
matrix, and cached.  Working with an explicit matrix makes the
back projector the exact adjoint of the forward projector by construction
and keeps repeated projections cheap.

Coordinates: the image grid is centered on the rotation isocenter, x points
right (increasing column), y points up (decreasing row).  View angles are
uniform, starting at 0 where a parallel ray at angle 0 points along +y and
the detector axis lies along +x.
"""

from __future__ import annotations

import collections
import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .core import Image, ImageGrid, as_float_array, check_scalar

__all__ = [
    "Geometry",
    "Sinogram",
    "UnsupportedGeometryError",
    "forward_project",
    "back_project",
    "data_majorizer",
    "noise_uniformity_weights",
    "system_matrix",
]

PARALLEL = "parallel"
FAN = "fan_equidistant"


class UnsupportedGeometryError(ValueError):
    """An operation does not support the given acquisition geometry."""


@dataclass(frozen=True)
class Geometry:
    """Acquisition geometry with uniformly spaced view angles.

    Parallel beams cover ``[0, pi)``; fan beams cover ``[0, 2*pi)``.  For
    fan geometries ``dso`` is the source-to-isocenter distance and ``dsd``
    the source-to-detector distance, both in mm; parallel geometries keep
    both at zero.  Detector bins are centered on the axis (offset
    ``(i - (n_det - 1) / 2) * det_spacing``).
    """

    kind: str
    n_views: int
    n_det: int
    det_spacing: float = 1.0
    dso: float = 0.0
    dsd: float = 0.0

    def __post_init__(self):
        if self.kind not in (PARALLEL, FAN):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        for name in ("n_views", "n_det"):
            v = getattr(self, name)
            if int(v) != v or int(v) < 1:
                raise ValueError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(v))
        check_scalar(self.det_spacing, "det_spacing", minimum=0.0, strict=True)
        if self.kind == FAN:
            check_scalar(self.dso, "dso", minimum=0.0, strict=True)
            check_scalar(self.dsd, "dsd", minimum=self.dso, strict=True)
        else:
            if self.dso != 0.0 or self.dsd != 0.0:
                raise ValueError("parallel geometry must have dso = dsd = 0")

    @property
    def n_rays(self):
        return self.n_views * self.n_det

    @property
    def view_angles(self):
        span = np.pi if self.kind == PARALLEL else 2.0 * np.pi
        return np.arange(self.n_views) * (span / self.n_views)

    def det_offsets(self):
        return (np.arange(self.n_det) - 0.5 * (self.n_det - 1)) * self.det_spacing


@dataclass
class Sinogram:
    """Measured line integrals plus per-ray statistical weights.

    ``y`` and ``weights`` are ``(n_views, n_det)``; weights are nonnegative.
    """

    geometry: Geometry
    y: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        shape = (self.geometry.n_views, self.geometry.n_det)
        y = as_float_array(self.y, "y")
        w = as_float_array(self.weights, "weights")
        if y.shape != shape:
            raise ValueError(f"y must have shape {shape}, got {y.shape}")
        if w.shape != shape:
            raise ValueError(f"weights must have shape {shape}, got {w.shape}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        self.y = np.ascontiguousarray(y)
        self.weights = np.ascontiguousarray(w)


@njit(cache=True)
def _trace_rays(p0x, p0y, p1x, p1y, nx, ny, px, py, max_len, rows, cols, vals):
    """Siddon walk for each ray segment, writing COO triplets.

    Each ray ``r`` may emit up to ``max_len`` entries starting at
    ``r * max_len``; unused slots keep value 0 and are compacted later.
    """
    xmin = -0.5 * nx * px
    ymin = -0.5 * ny * py
    xmax = -xmin
    ymax = -ymin
    big = 1e308
    for r in range(p0x.shape[0]):
        ax = p0x[r]
        ay = p0y[r]
        dx = p1x[r] - ax
        dy = p1y[r] - ay
        tmin = 0.0
        tmax = 1.0
        if dx != 0.0:
            t1 = (xmin - ax) / dx
            t2 = (xmax - ax) / dx
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
        elif ax <= xmin or ax >= xmax:
            continue
        if dy != 0.0:
            t1 = (ymin - ay) / dy
            t2 = (ymax - ay) / dy
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
        elif ay <= ymin or ay >= ymax:
            continue
        if tmin >= tmax:
            continue
        length = np.sqrt(dx * dx + dy * dy)
        ex = ax + tmin * dx
        ey = ay + tmin * dy
        ix = int(np.floor((ex - xmin) / px))
        iy = int(np.floor((ey - ymin) / py))
        if ix < 0:
            ix = 0
        elif ix > nx - 1:
            ix = nx - 1
        if iy < 0:
            iy = 0
        elif iy > ny - 1:
            iy = ny - 1
        if dx > 0.0:
            stepx = 1
            dtx = px / dx
            txn = (xmin + (ix + 1) * px - ax) / dx
        elif dx < 0.0:
            stepx = -1
            dtx = -px / dx
            txn = (xmin + ix * px - ax) / dx
        else:
            stepx = 0
            dtx = big
            txn = big
        if dy > 0.0:
            stepy = 1
            dty = py / dy
            tyn = (ymin + (iy + 1) * py - ay) / dy
        elif dy < 0.0:
            stepy = -1
            dty = -py / dy
            tyn = (ymin + iy * py - ay) / dy
        else:
            stepy = 0
            dty = big
            tyn = big
        t = tmin
        base = r * max_len
        k = 0
        for _ in range(max_len):
            tn = txn if txn < tyn else tyn
            if tn >= tmax:
                seg = (tmax - t) * length
                if seg > 0.0:
                    rows[base + k] = r
                    cols[base + k] = (ny - 1 - iy) * nx + ix
                    vals[base + k] = seg
                break
            seg = (tn - t) * length
            if seg > 0.0:
                rows[base + k] = r
                cols[base + k] = (ny - 1 - iy) * nx + ix
                vals[base + k] = seg
                k += 1
            if txn <= tyn:
                ix += stepx
                txn += dtx
            else:
                iy += stepy
                tyn += dty
            t = tn
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
                break


def _ray_endpoints(geom, grid):
    """Physical start/end points for every ray, both outside the grid."""
    angles = geom.view_angles
    offsets = geom.det_offsets()
    cos = np.cos(angles)[:, None]
    sin = np.sin(angles)[:, None]
    u = offsets[None, :]
    reach = np.hypot(grid.width * grid.pixel_size_x, grid.height * grid.pixel_size_y)
    if geom.kind == PARALLEL:
        # Ray through u * omega running along omega_perp = (-sin, cos).
        cx = u * cos
        cy = u * sin
        p0x = cx + reach * sin
        p0y = cy - reach * cos
        p1x = cx - reach * sin
        p1y = cy + reach * cos
    else:
        sx = -geom.dso * sin
        sy = geom.dso * cos
        dcx = sx + geom.dsd * sin
        dcy = sy - geom.dsd * cos
        bx = dcx + u * cos
        by = dcy + u * sin
        scale = (geom.dso + reach) / geom.dsd + 1.0
        p0x = np.broadcast_to(sx, bx.shape)
        p0y = np.broadcast_to(sy, by.shape)
        p1x = p0x + scale * (bx - p0x)
        p1y = p0y + scale * (by - p0y)
    flat = lambda a: np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    return flat(p0x), flat(p0y), flat(p1x), flat(p1y)


class _Projector:
    """Sparse system matrix plus lazily squared copies for variance maps."""

    def __init__(self, geom, grid):
        self.geom = geom
        self.grid = grid
        p0x, p0y, p1x, p1y = _ray_endpoints(geom, grid)
        max_len = grid.width + grid.height + 4
        n = p0x.shape[0] * max_len
        rows = np.zeros(n, dtype=np.int64)
        cols = np.zeros(n, dtype=np.int64)
        vals = np.zeros(n, dtype=np.float64)
        _trace_rays(
            p0x, p0y, p1x, p1y,
            grid.width, grid.height,
            grid.pixel_size_x, grid.pixel_size_y,
            max_len, rows, cols, vals,
        )
        keep = vals > 0.0
        shape = (geom.n_rays, grid.n_pixels)
        self.matrix = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape)
        self.matrix.sum_duplicates()
        self.adjoint = self.matrix.T.tocsr()
        self._squared = None

    def squared(self):
        """Matrices of squared entries, used for backprojecting variances."""
        if self._squared is None:
            a2 = self.matrix.copy()
            a2.data = a2.data ** 2
            self._squared = (a2, a2.T.tocsr())
        return self._squared


_CACHE_LOCK = threading.Lock()
_CACHE = collections.OrderedDict()
_CACHE_LIMIT = 6


def _projector(geom, grid):
    key = (geom, grid)
    with _CACHE_LOCK:
        if key in _CACHE:
            _CACHE.move_to_end(key)
            return _CACHE[key]
    proj = _Projector(geom, grid)
    with _CACHE_LOCK:
        _CACHE[key] = proj
        while len(_CACHE) > _CACHE_LIMIT:
            _CACHE.popitem(last=False)
    return proj


def system_matrix(geom, grid):
    """The assembled ``(n_rays, n_pixels)`` CSR system matrix (shared, read-only)."""
    return _projector(geom, grid).matrix


def forward_project(img, geom):
    """Line integrals of an attenuation image, shape ``(n_views, n_det)``.

    Values of ``img`` are interpreted as attenuation per mm, so the output
    is unitless optical depth.
    """
    if not isinstance(img, Image):
        raise TypeError("forward_project expects an Image")
    proj = _projector(geom, img.grid)
    out = proj.matrix @ img.data.reshape(-1)
    return out.reshape(geom.n_views, geom.n_det)


def back_project(values, geom, grid):
    """Exact adjoint of :func:`forward_project` onto ``grid``.

    ``values`` has shape ``(n_views, n_det)``; returns ``(height, width)``.
    """
    vals = as_float_array(values, "values")
    if vals.shape != (geom.n_views, geom.n_det):
        raise ValueError(
            f"values must have shape {(geom.n_views, geom.n_det)}, got {vals.shape}"
        )
    proj = _projector(geom, grid)
    out = proj.adjoint @ vals.reshape(-1)
    return out.reshape(grid.shape)


def data_majorizer(geom, weights, grid):
    """Diagonal majorizer of the weighted data Hessian: ``A.T @ (w * (A @ 1))``.

    Valid because every matrix entry is nonnegative.  Returns a
    ``(height, width)`` array in attenuation units; rescale when the
    unknowns are expressed in different units.
    """
    w = as_float_array(weights, "weights")
    if w.shape != (geom.n_views, geom.n_det):
        raise ValueError("weights shape does not match the geometry")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    proj = _projector(geom, grid)
    a1 = proj.matrix @ np.ones(grid.n_pixels)
    out = proj.adjoint @ (w.reshape(-1) * a1)
    return out.reshape(grid.shape)


def noise_uniformity_weights(geom, weights, grid):
    """Per-pixel noise weights ``sqrt(A2.T @ w / A2.T @ 1)`` with ``A2 = A**2``.

    Pixels never touched by a ray get weight 0.  The ratio form makes the
    result invariant to rescaling the system matrix, so it can be computed
    once and shared between unit conventions.
    """
    w = as_float_array(weights, "weights")
    if w.shape != (geom.n_views, geom.n_det):
        raise ValueError("weights shape does not match the geometry")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    _, at2 = _projector(geom, grid).squared()
    num = at2 @ w.reshape(-1)
    den = at2 @ np.ones(geom.n_rays)
    out = np.zeros_like(num)
    hit = den > 0
    out[hit] = np.sqrt(num[hit] / den[hit])
    return out.reshape(grid.shape)
