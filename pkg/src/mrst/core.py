"""Dense-matrix primitives shared across the package.

Hard thresholding, full SVD, separable DCT bases, and the patch
extract/aggregate operator pair that everything downstream (training and
patch-regularized reconstruction) is built on.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Image",
    "ImageGrid",
    "PatchConfig",
    "PatchSet",
    "hard_threshold",
    "full_svd",
    "dct2_matrix",
    "extract_patches",
    "aggregate_patches",
    "patch_coverage",
    "patch_grid_count",
]


def as_float_array(a, name="array"):
    """Coerce to a float64 ndarray and reject non-finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must contain only finite values")
    return arr


def check_scalar(x, name, minimum=None, strict=False):
    """Validate a finite real scalar, optionally bounded below."""
    v = float(x)
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite")
    if minimum is not None:
        if strict and not v > minimum:
            raise ValueError(f"{name} must be > {minimum}")
        if not strict and not v >= minimum:
            raise ValueError(f"{name} must be >= {minimum}")
    return v


def hard_threshold(m, eta):
    """Zero every entry of ``m`` whose magnitude is strictly below ``eta``.

    Entries with magnitude exactly equal to ``eta`` are kept, so
    ``hard_threshold(m, 0.0)`` returns ``m`` unchanged.

    Parameters
    ----------
    m : array_like
        Input array, any shape.
    eta : float
        Nonnegative threshold.

    Returns
    -------
    numpy.ndarray
        New array of the same shape; the input is not modified.
    """
    eta = check_scalar(eta, "eta", minimum=0.0)
    arr = as_float_array(m, "m")
    out = arr.copy()
    out[np.abs(arr) < eta] = 0.0
    return out


def full_svd(g):
    """Full SVD of a square matrix, ``g = u @ np.diag(s) @ v.T``.

    Singular values are returned in nonincreasing order.  Falls back to the
    slower but more robust LAPACK driver if the default one fails to
    converge.

    Returns
    -------
    u, s, v : numpy.ndarray
        ``u`` and ``v`` are orthonormal ``(p, p)`` matrices (``v`` is the
        matrix of right singular vectors, not its transpose).
    """
    arr = as_float_array(g, "g")
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("g must be a square matrix")
    try:
        u, s, vt = np.linalg.svd(arr)
    except np.linalg.LinAlgError:
        import scipy.linalg

        u, s, vt = scipy.linalg.svd(arr, lapack_driver="gesvd")
    return u, s, vt.T


def _dct_matrix(n):
    # Orthonormal DCT-II: row k, sample x.
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * x + 1) * k / (2.0 * n))
    c[0, :] *= math.sqrt(1.0 / n)
    c[1:, :] *= math.sqrt(2.0 / n)
    return c


def dct2_matrix(patch_w, patch_h):
    """Orthonormal 2D DCT-II analysis matrix for row-major vectorized patches.

    The returned ``(p, p)`` matrix with ``p = patch_w * patch_h`` applies a
    DCT along patch rows and columns; its rows form an orthonormal basis, so
    ``W.T @ W == I`` up to rounding.
    """
    pw = int(patch_w)
    ph = int(patch_h)
    if pw < 1 or ph < 1:
        raise ValueError("patch dimensions must be positive")
    return np.kron(_dct_matrix(ph), _dct_matrix(pw))


@dataclass(frozen=True)
class ImageGrid:
    """Pixel grid centered on the isocenter.

    Columns run along +x (right), rows along -y (row 0 is the top of the
    image), and physical pixel sizes are in millimeters.
    """

    width: int
    height: int
    pixel_size_x: float = 1.0
    pixel_size_y: float = 1.0

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("grid dimensions must be integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        for name in ("pixel_size_x", "pixel_size_y"):
            check_scalar(getattr(self, name), name, minimum=0.0, strict=True)

    @property
    def shape(self):
        """Array shape ``(height, width)``."""
        return (self.height, self.width)

    @property
    def n_pixels(self):
        return self.width * self.height

    def pixel_centers(self):
        """Physical pixel-center coordinates ``(x, y)`` in mm.

        ``x`` has shape ``(width,)`` and increases with column index; ``y``
        has shape ``(height,)`` and decreases with row index (y points up).
        """
        x = (np.arange(self.width) - 0.5 * (self.width - 1)) * self.pixel_size_x
        y = (0.5 * (self.height - 1) - np.arange(self.height)) * self.pixel_size_y
        return x, y


@dataclass
class Image:
    """2D image on a physical grid, stored row-major as ``(height, width)``.

    Reconstruction-facing images hold modified Hounsfield units (air 0,
    water 1000); projection-facing code converts to attenuation first.
    """

    width: int
    height: int
    pixel_size_x: float
    pixel_size_y: float
    data: np.ndarray

    def __post_init__(self):
        grid = ImageGrid(self.width, self.height, self.pixel_size_x, self.pixel_size_y)
        self.width = grid.width
        self.height = grid.height
        arr = as_float_array(self.data, "data")
        if arr.size != grid.n_pixels:
            raise ValueError(
                f"data has {arr.size} values, expected {grid.n_pixels}"
            )
        self.data = np.ascontiguousarray(arr.reshape(grid.shape))

    @classmethod
    def from_array(cls, data, pixel_size_x=1.0, pixel_size_y=1.0):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ValueError("expected a 2D array")
        h, w = arr.shape
        return cls(w, h, pixel_size_x, pixel_size_y, arr)

    @classmethod
    def from_grid(cls, grid, data):
        return cls(grid.width, grid.height, grid.pixel_size_x, grid.pixel_size_y, data)

    @property
    def grid(self):
        return ImageGrid(self.width, self.height, self.pixel_size_x, self.pixel_size_y)

    def like(self, data):
        """New image with the same grid and different pixel values."""
        return Image(self.width, self.height, self.pixel_size_x, self.pixel_size_y, data)


@dataclass(frozen=True)
class PatchConfig:
    """Sliding-window patch layout.

    ``boundary="clip"`` keeps only patches fully inside the image;
    ``boundary="wrap"`` wraps indices periodically so every stride start
    yields a patch.  Patches are vectorized row-major (across a patch row
    first), and the patch grid is traversed row-major as well.
    """

    patch_w: int
    patch_h: int
    stride_x: int = 1
    stride_y: int = 1
    boundary: str = "clip"

    def __post_init__(self):
        for name in ("patch_w", "patch_h", "stride_x", "stride_y"):
            v = getattr(self, name)
            if int(v) != v or int(v) < 1:
                raise ValueError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(v))
        if self.boundary not in ("clip", "wrap"):
            raise ValueError("boundary must be 'clip' or 'wrap'")

    @property
    def p(self):
        """Vectorized patch length."""
        return self.patch_w * self.patch_h


@dataclass
class PatchSet:
    """Matrix of vectorized patches, one patch per column.

    ``extract_patches`` produces sets whose column count equals the full
    patch-grid count for ``config`` and ``source_dims``; subsampling keeps
    a subset of columns but the same metadata.
    """

    data: np.ndarray
    config: PatchConfig
    source_dims: tuple = (0, 0)

    def __post_init__(self):
        arr = as_float_array(self.data, "data")
        if arr.ndim != 2:
            raise ValueError("patch data must be a 2D matrix")
        if arr.shape[0] != self.config.p:
            raise ValueError(
                f"patch rows ({arr.shape[0]}) do not match config p={self.config.p}"
            )
        if arr.shape[1] < 1:
            raise ValueError("patch set must contain at least one patch")
        self.data = np.ascontiguousarray(arr)
        self.source_dims = (int(self.source_dims[0]), int(self.source_dims[1]))

    @property
    def n(self):
        return self.data.shape[1]


def _starts(span, patch, stride, boundary):
    if boundary == "clip":
        if patch > span:
            raise ValueError(
                f"patch extent {patch} exceeds image extent {span} in clip mode"
            )
        return np.arange(0, span - patch + 1, stride)
    return np.arange(0, span, stride)


@functools.lru_cache(maxsize=64)
def _patch_indices(config, width, height):
    """Flat pixel indices for every patch, shape ``(p, n_patches)``."""
    xs = _starts(width, config.patch_w, config.stride_x, config.boundary)
    ys = _starts(height, config.patch_h, config.stride_y, config.boundary)
    rows = ys[:, None] + np.arange(config.patch_h)[None, :]
    cols = xs[:, None] + np.arange(config.patch_w)[None, :]
    if config.boundary == "wrap":
        rows = rows % height
        cols = cols % width
    flat = rows[:, None, :, None] * width + cols[None, :, None, :]
    idx = flat.reshape(len(ys) * len(xs), config.p).T
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    idx.setflags(write=False)
    return idx


def patch_grid_count(config, dims):
    """Number of patches the sliding grid yields on a ``(width, height)`` image."""
    width, height = int(dims[0]), int(dims[1])
    nx = len(_starts(width, config.patch_w, config.stride_x, config.boundary))
    ny = len(_starts(height, config.patch_h, config.stride_y, config.boundary))
    return nx * ny


def extract_patches(img, config):
    """Extract all sliding-window patches of an image as a PatchSet.

    Column ``j`` holds the patch at grid position ``(j // nx, j % nx)`` where
    ``nx`` is the number of horizontal patch positions.
    """
    idx = _patch_indices(config, img.width, img.height)
    data = img.data.reshape(-1)[idx]
    return PatchSet(data, config, (img.width, img.height))


def aggregate_patches(values, config, dims):
    """Adjoint of :func:`extract_patches`: scatter-add patch values back.

    Parameters
    ----------
    values : array_like
        ``(p, n_patches)`` matrix of per-patch pixel contributions.
    config : PatchConfig
    dims : tuple
        ``(width, height)`` of the target image.

    Returns
    -------
    numpy.ndarray
        ``(height, width)`` array.  Accumulation uses a single fixed-order
        pass, so results are bit-identical from run to run regardless of
        worker settings.
    """
    width, height = int(dims[0]), int(dims[1])
    idx = _patch_indices(config, width, height)
    vals = as_float_array(values, "values")
    if vals.shape != idx.shape:
        raise ValueError(f"values shape {vals.shape} does not match patch grid {idx.shape}")
    out = np.bincount(idx.ravel(), weights=vals.ravel(), minlength=width * height)
    return out.reshape(height, width)


def patch_coverage(config, dims):
    """Per-pixel patch cover count, ``aggregate(extract(ones))`` in one pass."""
    width, height = int(dims[0]), int(dims[1])
    idx = _patch_indices(config, width, height)
    out = np.bincount(idx.ravel(), minlength=width * height).astype(np.float64)
    return out.reshape(height, width)
