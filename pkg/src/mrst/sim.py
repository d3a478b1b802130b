"""Synthetic phantoms, unit conversion, and low-dose scan simulation.

The scan model is monoenergetic: a blank scan of ``i0`` photons per ray is
attenuated by ``exp(-line_integral)`` and recorded as Poisson counts.  Each
ray draws from its own counter-based generator keyed by ``(seed, ray
index)``, so a sinogram is reproducible ray-by-ray and independent of
evaluation order or chunking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image, ImageGrid, as_float_array, check_scalar
from .tomo import Geometry, Sinogram, forward_project

__all__ = [
    "MU_WATER",
    "HU_WATER",
    "Ellipse",
    "Phantom",
    "DoseConfig",
    "make_phantom",
    "hu_to_mu",
    "mu_to_hu",
    "simulate_sinogram",
    "phantom_preset",
    "PRESET_NAMES",
]

MU_WATER = 0.02
"""Water attenuation at the simulated source energy, 1/mm."""

HU_WATER = 1000.0
"""Water level on the modified Hounsfield scale (air maps to 0)."""


@dataclass(frozen=True)
class Ellipse:
    """One additive ellipse: center and semi-axes in mm, rotation in radians.

    ``hu`` is added to every pixel whose center falls inside the ellipse, so
    overlapping ellipses sum.
    """

    cx: float
    cy: float
    a: float
    b: float
    theta: float
    hu: float

    def __post_init__(self):
        for name in ("cx", "cy", "theta", "hu"):
            check_scalar(getattr(self, name), name)
        check_scalar(self.a, "a", minimum=0.0, strict=True)
        check_scalar(self.b, "b", minimum=0.0, strict=True)


@dataclass(frozen=True)
class Phantom:
    """A list of additive ellipses on a target grid."""

    ellipses: tuple
    grid: ImageGrid

    def __post_init__(self):
        object.__setattr__(self, "ellipses", tuple(self.ellipses))
        for e in self.ellipses:
            if not isinstance(e, Ellipse):
                raise TypeError("phantom entries must be Ellipse instances")


@dataclass(frozen=True)
class DoseConfig:
    """Scan dose and noise settings.

    ``weights="counts"`` uses the recorded counts as statistical weights;
    ``"expected"`` uses the noiseless means ``i0 * exp(-l)`` instead.
    """

    i0: float
    seed: int = 0
    noiseless: bool = False
    weights: str = "counts"

    def __post_init__(self):
        check_scalar(self.i0, "i0", minimum=0.0, strict=True)
        if int(self.seed) != self.seed:
            raise ValueError("seed must be an integer")
        if self.weights not in ("counts", "expected"):
            raise ValueError("weights must be 'counts' or 'expected'")


def make_phantom(phantom):
    """Rasterize a phantom to an Image in modified HU.

    A pixel belongs to an ellipse when its center satisfies the ellipse
    inequality (boundary included).
    """
    grid = phantom.grid
    x, y = grid.pixel_centers()
    xg = x[None, :]
    yg = y[:, None]
    data = np.zeros(grid.shape)
    for e in phantom.ellipses:
        ct = np.cos(e.theta)
        st = np.sin(e.theta)
        dx = xg - e.cx
        dy = yg - e.cy
        u = (dx * ct + dy * st) / e.a
        v = (-dx * st + dy * ct) / e.b
        data[u * u + v * v <= 1.0] += e.hu
    return Image.from_grid(grid, data)


def hu_to_mu(img):
    """Convert modified HU to attenuation (1/mm): water 1000 HU -> 0.02/mm."""
    return img.like(img.data * (MU_WATER / HU_WATER))


def mu_to_hu(img):
    """Convert attenuation (1/mm) to modified HU."""
    return img.like(img.data * (HU_WATER / MU_WATER))


def _poisson_counts(lam, seed):
    """One Poisson draw per ray from a generator keyed by (seed, ray index)."""
    key_hi = int(seed) & 0xFFFFFFFFFFFFFFFF
    out = np.empty(lam.size)
    flat = lam.reshape(-1)
    for i in range(flat.size):
        gen = np.random.Generator(np.random.Philox(key=(key_hi << 64) | i))
        out[i] = gen.poisson(flat[i])
    return out.reshape(lam.shape)


def simulate_sinogram(truth, geom, dose):
    """Simulate a low-dose scan of a ground-truth HU image.

    Counts are clamped below at 1 photon so the log transform stays finite;
    the returned weights follow ``dose.weights``.  With ``noiseless=True``
    the line integrals pass through exactly and the weights are the
    expected counts.

    Returns
    -------
    Sinogram
    """
    if not isinstance(truth, Image):
        raise TypeError("truth must be an Image")
    if not isinstance(dose, DoseConfig):
        raise TypeError("dose must be a DoseConfig")
    line = forward_project(hu_to_mu(truth), geom)
    expected = dose.i0 * np.exp(-line)
    if dose.noiseless:
        return Sinogram(geom, line.copy(), expected)
    counts = np.maximum(_poisson_counts(expected, dose.seed), 1.0)
    y = np.log(dose.i0 / counts)
    w = counts if dose.weights == "counts" else expected
    return Sinogram(geom, y, w.copy())


def _body(grid, hu=1000.0):
    half = 0.5 * min(grid.width * grid.pixel_size_x, grid.height * grid.pixel_size_y)
    return Ellipse(0.0, 0.0, 0.906 * half, 0.781 * half, 0.0, hu)


def _test_object(grid):
    half = 0.5 * min(grid.width * grid.pixel_size_x, grid.height * grid.pixel_size_y)
    s = half / 64.0
    return (
        _body(grid),
        Ellipse(-20 * s, 18 * s, 18 * s, 12 * s, 0.5, 80.0),
        Ellipse(26 * s, -2 * s, 13 * s, 17 * s, -0.3, -60.0),
        Ellipse(-8 * s, -24 * s, 6 * s, 6 * s, 0.0, 800.0),
        Ellipse(12 * s, 26 * s, 7 * s, 5 * s, 0.9, -800.0),
        Ellipse(-30 * s, -16 * s, 10 * s, 7 * s, -1.1, 40.0),
    )


def _train_a(grid):
    half = 0.5 * min(grid.width * grid.pixel_size_x, grid.height * grid.pixel_size_y)
    s = half / 64.0
    return (
        _body(grid),
        Ellipse(16 * s, 14 * s, 20 * s, 10 * s, 1.2, 70.0),
        Ellipse(-22 * s, -10 * s, 9 * s, 14 * s, 0.2, -90.0),
        Ellipse(4 * s, -28 * s, 5 * s, 8 * s, -0.7, 700.0),
        Ellipse(-10 * s, 30 * s, 6 * s, 4 * s, 0.0, -650.0),
        Ellipse(28 * s, -20 * s, 8 * s, 6 * s, 0.4, 120.0),
    )


def _train_b(grid):
    half = 0.5 * min(grid.width * grid.pixel_size_x, grid.height * grid.pixel_size_y)
    s = half / 64.0
    return (
        _body(grid),
        Ellipse(0.0, 20 * s, 24 * s, 9 * s, -0.4, -70.0),
        Ellipse(-18 * s, -18 * s, 12 * s, 12 * s, 0.0, 90.0),
        Ellipse(22 * s, 6 * s, 4 * s, 7 * s, 1.0, 900.0),
        Ellipse(8 * s, -12 * s, 9 * s, 5 * s, -1.3, -500.0),
        Ellipse(-32 * s, 8 * s, 7 * s, 9 * s, 0.8, 50.0),
    )


def _train_c(grid):
    half = 0.5 * min(grid.width * grid.pixel_size_x, grid.height * grid.pixel_size_y)
    s = half / 64.0
    return (
        _body(grid),
        Ellipse(10 * s, -2 * s, 16 * s, 16 * s, 0.0, -40.0),
        Ellipse(-14 * s, 22 * s, 8 * s, 13 * s, -0.9, 110.0),
        Ellipse(-26 * s, -22 * s, 6 * s, 5 * s, 0.3, 750.0),
        Ellipse(24 * s, 24 * s, 5 * s, 6 * s, 0.0, -700.0),
        Ellipse(2 * s, 34 * s, 10 * s, 4 * s, 1.5, -80.0),
    )


def phantom_preset(name, grid=None):
    """Named phantom families on a grid (default 128 x 128 at 1 mm).

    ``disk`` is a centered water cylinder; ``ellipses`` is the standard test
    object; ``train-a`` / ``train-b`` / ``train-c`` are structurally similar
    objects intended for building training patch sets distinct from the
    test object.
    """
    if grid is None:
        grid = ImageGrid(128, 128, 1.0, 1.0)
    half = 0.5 * min(grid.width * grid.pixel_size_x, grid.height * grid.pixel_size_y)
    presets = {
        "disk": lambda: (Ellipse(0.0, 0.0, 0.625 * half, 0.625 * half, 0.0, 1000.0),),
        "ellipses": lambda: _test_object(grid),
        "train-a": lambda: _train_a(grid),
        "train-b": lambda: _train_b(grid),
        "train-c": lambda: _train_c(grid),
    }
    if name not in presets:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    return Phantom(presets[name](), grid)


PRESET_NAMES = ("disk", "ellipses", "train-a", "train-b", "train-c")
