"""Image quality metrics over a circular region of interest."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Image, as_float_array, check_scalar

__all__ = ["RoiMask", "circular_roi", "rmse", "psnr", "downsample_image"]


@dataclass
class RoiMask:
    """Boolean pixel mask naming the evaluation region."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2 or m.dtype != bool:
            raise ValueError("mask must be a 2D boolean array")
        if not m.any():
            raise ValueError("mask must select at least one pixel")
        self.mask = m

    @property
    def count(self):
        return int(self.mask.sum())


def circular_roi(dims, radius_fraction):
    """Centered circular mask on a ``(width, height)`` pixel grid.

    ``radius_fraction`` scales half of the smaller grid dimension, measured
    in pixel units; a pixel is inside when its center distance is at most
    the radius (boundary included).
    """
    width, height = int(dims[0]), int(dims[1])
    if width < 1 or height < 1:
        raise ValueError("dims must be positive")
    f = check_scalar(radius_fraction, "radius_fraction", minimum=0.0, strict=True)
    if f > 1.0:
        raise ValueError("radius_fraction must be at most 1")
    radius = 0.5 * f * min(width, height)
    dx = np.arange(width) - 0.5 * (width - 1)
    dy = np.arange(height) - 0.5 * (height - 1)
    rr = dx[None, :] ** 2 + dy[:, None] ** 2
    return RoiMask(rr <= radius * radius)


def _paired(xhat, xstar, roi):
    a = xhat.data if isinstance(xhat, Image) else as_float_array(xhat, "xhat")
    b = xstar.data if isinstance(xstar, Image) else as_float_array(xstar, "xstar")
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if roi.mask.shape != a.shape:
        raise ValueError("ROI mask shape does not match the images")
    return a[roi.mask], b[roi.mask]


def rmse(xhat, xstar, roi):
    """Root mean squared error over the ROI, in the images' units."""
    a, b = _paired(xhat, xstar, roi)
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def psnr(xhat, xstar, roi, peak=None):
    """Peak signal-to-noise ratio in dB over the ROI.

    The peak defaults to the maximum of the reference image inside the ROI;
    pass ``peak`` to pin it (e.g. 2000 for a fixed HU scale).  A zero error
    returns ``inf``.
    """
    a, b = _paired(xhat, xstar, roi)
    if peak is None:
        peak = float(b.max())
    else:
        peak = float(peak)
    if not peak > 0:
        raise ValueError("peak must be positive")
    d = a - b
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def downsample_image(img, factor):
    """Average ``factor x factor`` pixel blocks, scaling pixel size to match.

    Requires the image dimensions to be exact multiples of ``factor``.
    Block averaging preserves the mean, so HU images downsample to HU
    images on the coarser grid.
    """
    if not isinstance(img, Image):
        raise TypeError("expected an Image")
    f = int(factor)
    if f < 1:
        raise ValueError("factor must be a positive integer")
    if f == 1:
        return img.like(img.data.copy())
    if img.height % f or img.width % f:
        raise ValueError("image dimensions must be multiples of factor")
    h, w = img.height // f, img.width // f
    blocks = img.data.reshape(h, f, w, f)
    return Image(w, h, img.pixel_size_x * f, img.pixel_size_y * f, blocks.mean(axis=(1, 3)))
