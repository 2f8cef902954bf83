"""CIE 1931 colorimetry: tristimulus integration, chromaticity and RGB rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import DataError, DimensionError
from .spectral import SpectralCube, WavelengthGrid, resampling_matrix

# sRGB / Rec.709 primaries (x, y)
RGB_PRIMARIES = ((0.64, 0.33), (0.30, 0.60), (0.15, 0.06))


@dataclass(frozen=True, eq=False)
class CmfTable:
    """CIE 1931 2-degree observer tabulated on ``grid`` with a reference illuminant."""

    grid: WavelengthGrid
    xbar: np.ndarray
    ybar: np.ndarray
    zbar: np.ndarray
    illuminant: np.ndarray

    def __post_init__(self):
        n = self.grid.size
        for name in ("xbar", "ybar", "zbar", "illuminant"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise DimensionError(f"{name} has shape {arr.shape}, grid has {n} bands")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise DataError(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, arr)
        steps = np.diff(self.grid.wavelengths)
        if steps.size and not np.allclose(steps, steps[0]):
            raise DataError("CMF tabulation must be gap-free and evenly spaced")

    @property
    def matrix(self) -> np.ndarray:
        """3 x N table of (xbar, ybar, zbar)."""
        return np.stack([self.xbar, self.ybar, self.zbar])

    @property
    def normalization(self) -> float:
        """Factor that gives the reference illuminant Y = 1."""
        return 1.0 / float(np.sum(self.illuminant * self.ybar * self.grid.delta))

    def white_xyz(self) -> np.ndarray:
        return spectrum_to_xyz(self.illuminant, self)


@lru_cache(maxsize=None)
def cie1931() -> CmfTable:
    """CIE 1931 2-degree CMFs, 380-780 nm at 5 nm, equal-energy reference."""
    text = resources.files("hyperflow").joinpath("data/cie1931_2deg_5nm.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    wl = np.array([float(r["wavelength_nm"]) for r in rows])
    grid = WavelengthGrid(wl, np.full(wl.size, 5.0))
    cols = {k: np.array([float(r[k]) for r in rows]) for k in ("x_bar", "y_bar", "z_bar")}
    return CmfTable(grid, cols["x_bar"], cols["y_bar"], cols["z_bar"], np.ones(wl.size))


def tristimulus_operator(grid: WavelengthGrid, cmf: CmfTable | None = None) -> np.ndarray:
    """3 x B matrix mapping a spectrum on ``grid`` to normalized XYZ.

    It composes resampling onto the CMF tabulation with the weighted sum,
    so ``operator @ s`` equals :func:`spectrum_to_xyz` on ``s``.
    """
    cmf = cmf or cie1931()
    weighted = cmf.matrix * cmf.grid.delta * cmf.normalization
    if grid == cmf.grid:
        return weighted.copy()
    return weighted @ resampling_matrix(grid, cmf.grid)


def spectrum_to_xyz(spectrum, cmf: CmfTable | None = None, grid: WavelengthGrid | None = None):
    """Integrate spectra (last axis) against the CMFs.

    Spectra on a grid other than the CMF tabulation are resampled first;
    pass that grid as ``grid``. Returns an array with a trailing axis of 3.
    """
    cmf = cmf or cie1931()
    spectrum = np.asarray(spectrum, dtype=np.float64)
    src = grid or cmf.grid
    if spectrum.shape[-1] != src.size:
        raise DimensionError(f"spectrum has {spectrum.shape[-1]} bands, grid has {src.size}")
    return spectrum @ tristimulus_operator(src, cmf).T


def xyz_to_xy(xyz) -> np.ndarray:
    """Chromaticity (x, y); black maps to (0, 0)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    total = xyz.sum(axis=-1, keepdims=True)
    safe = np.where(total == 0, 1.0, total)
    return np.where(total == 0, 0.0, xyz[..., :2] / safe)


def spectral_locus(cmf: CmfTable | None = None) -> np.ndarray:
    """Chromaticities of the monochromatic stimuli in the table."""
    cmf = cmf or cie1931()
    return xyz_to_xy(cmf.matrix.T)


def rgb_to_xyz_matrix(white_xyz, primaries=RGB_PRIMARIES) -> np.ndarray:
    """Linear RGB -> XYZ for the given primaries, with RGB (1,1,1) -> ``white_xyz``."""
    cols = []
    for x, y in primaries:
        cols.append([x / y, 1.0, (1.0 - x - y) / y])
    p = np.array(cols).T
    s = np.linalg.solve(p, np.asarray(white_xyz, dtype=np.float64))
    return p * s


def xyz_to_rgb_matrix(cmf: CmfTable | None = None) -> np.ndarray:
    cmf = cmf or cie1931()
    return np.linalg.inv(rgb_to_xyz_matrix(cmf.white_xyz()))


def srgb_encode(linear) -> np.ndarray:
    linear = np.asarray(linear, dtype=np.float64)
    low = linear * 12.92
    high = 1.055 * np.power(np.maximum(linear, 0.0), 1.0 / 2.4) - 0.055
    return np.where(linear <= 0.0031308, low, high)


def xyz_to_linear_rgb(xyz, cmf: CmfTable | None = None) -> np.ndarray:
    return np.asarray(xyz) @ xyz_to_rgb_matrix(cmf).T


def cube_to_rgb(cube: SpectralCube, cmf: CmfTable | None = None, *, gamma: bool = True) -> np.ndarray:
    """Render a cube to an H x W x 3 display image in [0, 1].

    The primary matrix is white-balanced to the CMF table's reference
    illuminant, so that illuminant renders as neutral grey.
    """
    cmf = cmf or cie1931()
    xyz = spectrum_to_xyz(cube.data, cmf, cube.grid)
    rgb = np.clip(xyz_to_linear_rgb(xyz, cmf), 0.0, 1.0)
    return srgb_encode(rgb) if gamma else rgb


def to_8bit(image) -> np.ndarray:
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
