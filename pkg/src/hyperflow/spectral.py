"""Spectral data types, wavelength grids and the HSC1 cube file format.

HSC1 layout (all little-endian)::

    bytes 0-3   b"HSC1"
    u32 H, u32 W, u32 B, u32 dtype (0 = float32)
    B x (f64 wavelength_nm, f64 delta_nm)
    H*W*B f32 samples, rows then columns, bands innermost
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence, Union

import numpy as np

from .errors import DataError, DimensionError, FormatError, HyperflowError, TruncationError

MAGIC = b"HSC1"
_HEADER = struct.Struct("<4s4I")
DTYPE_FLOAT32 = 0

PathLike = Union[str, "os.PathLike[str]"]


@dataclass(frozen=True, eq=False)
class WavelengthGrid:
    """Band centres and per-band integration widths, both in nanometres."""

    wavelengths: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=np.float64).reshape(-1)
        dl = np.array(self.delta, dtype=np.float64).reshape(-1)
        if wl.size < 1:
            raise DataError("wavelength grid needs at least one band")
        if dl.shape != wl.shape:
            raise DimensionError(f"{wl.size} wavelengths but {dl.size} deltas")
        if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(dl))):
            raise DataError("wavelength grid contains non-finite values")
        if np.any(np.diff(wl) <= 0):
            raise DataError("wavelengths must be strictly increasing")
        if np.any(dl <= 0):
            raise DataError("band widths must be positive")
        wl.setflags(write=False)
        dl.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "delta", dl)

    @classmethod
    def uniform(cls, start: float, stop: float, n: int) -> "WavelengthGrid":
        """``n`` evenly spaced bands from ``start`` to ``stop`` inclusive."""
        wl = np.linspace(start, stop, n)
        step = (stop - start) / (n - 1) if n > 1 else 1.0
        return cls(wl, np.full(n, step))

    @property
    def size(self) -> int:
        return int(self.wavelengths.size)

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, WavelengthGrid):
            return NotImplemented
        return bool(
            np.array_equal(self.wavelengths, other.wavelengths)
            and np.array_equal(self.delta, other.delta)
        )

    def __hash__(self):
        return hash((self.wavelengths.tobytes(), self.delta.tobytes()))

    def __repr__(self) -> str:
        return (
            f"WavelengthGrid({self.size} bands, "
            f"{self.wavelengths[0]:g}-{self.wavelengths[-1]:g} nm)"
        )


def default_grid() -> WavelengthGrid:
    """204 bands across 350-750 nm, the band count of the reference camera."""
    return WavelengthGrid.uniform(350.0, 750.0, 204)


class SpectralCube:
    """One H x W x B frame of non-negative power-density samples.

    ``check=False`` skips the non-negativity test; it exists for decoded
    cubes whose negative lobes must survive for exact linear-algebra checks.
    Such cubes are refused by :func:`store_cube`.
    """

    __slots__ = ("data", "grid")

    def __init__(self, data, grid: WavelengthGrid, *, check: bool = True):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"cube data must be 3-D, got shape {arr.shape}")
        if arr.shape[2] != grid.size:
            raise DimensionError(
                f"cube has {arr.shape[2]} bands but grid has {grid.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError("cube contains non-finite samples")
        if check and np.any(arr < 0):
            raise DataError("cube contains negative samples")
        self.data = arr
        self.grid = grid

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def identical(self, other: "SpectralCube") -> bool:
        """Bit-for-bit equality of samples, dtype and grid."""
        return (
            self.grid == other.grid
            and self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self) -> str:
        return f"SpectralCube({self.height}x{self.width}x{self.bands}, {self.grid!r})"


FrameSource = Union[Sequence[SpectralCube], Callable[[], Iterable[SpectralCube]]]


class CubeStream:
    """Re-iterable ordered video of cubes sharing one shape and grid.

    Iteration yields ``(t, cube)`` with ``t`` counting from zero. ``source``
    is either a sequence of cubes or a zero-argument callable returning a
    fresh iterable each time, so a stream can be replayed by benchmarks.
    """

    def __init__(self, source: FrameSource, height: int, width: int, grid: WavelengthGrid):
        self._source = source
        self.height = int(height)
        self.width = int(width)
        self.grid = grid

    @classmethod
    def from_cubes(cls, cubes: Sequence[SpectralCube]) -> "CubeStream":
        cubes = list(cubes)
        if not cubes:
            raise DataError("cannot infer stream geometry from zero cubes")
        first = cubes[0]
        return cls(cubes, first.height, first.width, first.grid)

    def __iter__(self) -> Iterator[tuple]:
        frames = self._source() if callable(self._source) else self._source
        for t, cube in enumerate(frames):
            if (cube.height, cube.width) != (self.height, self.width):
                raise DimensionError(
                    f"frame {t} is {cube.height}x{cube.width}, "
                    f"stream is {self.height}x{self.width}"
                )
            if cube.grid != self.grid:
                raise DimensionError(f"frame {t} has a different wavelength grid")
            yield t, cube

    def cubes(self) -> list:
        return [c for _, c in self]


def encode_cube(cube: SpectralCube) -> bytes:
    """Serialise ``cube`` to HSC1 bytes."""
    if cube.bands < 1:
        raise DataError("cannot store a zero-band cube")
    if np.any(cube.data < 0):
        raise DataError("cannot store a cube with negative samples")
    h, w, b = cube.shape
    header = _HEADER.pack(MAGIC, h, w, b, DTYPE_FLOAT32)
    pairs = np.empty((b, 2), dtype="<f8")
    pairs[:, 0] = cube.grid.wavelengths
    pairs[:, 1] = cube.grid.delta
    samples = np.ascontiguousarray(cube.data, dtype="<f4")
    return header + pairs.tobytes() + samples.tobytes()


def decode_cube(buf: bytes) -> SpectralCube:
    """Parse HSC1 bytes; inverse of :func:`encode_cube`."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncationError("file ends inside the HSC1 header")
    _, h, w, b, dtype = _HEADER.unpack_from(buf)
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"unsupported sample dtype code {dtype}")
    if b == 0:
        raise FormatError("HSC1 file declares zero bands")
    expected = _HEADER.size + 16 * b + 4 * h * w * b
    if len(buf) != expected:
        raise TruncationError(
            f"payload is {len(buf)} bytes, header implies {expected}"
        )
    pairs = np.frombuffer(buf, dtype="<f8", count=2 * b, offset=_HEADER.size).reshape(b, 2)
    grid = WavelengthGrid(pairs[:, 0].copy(), pairs[:, 1].copy())
    samples = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size + 16 * b)
    data = samples.reshape(h, w, b).astype(np.float32)
    return SpectralCube(data, grid)


def store_cube(cube: SpectralCube, path: PathLike) -> None:
    """Write ``cube`` to ``path`` in HSC1 format.

    Samples are stored as float32; float64 cubes are rounded on the way out.
    """
    payload = encode_cube(cube)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise HyperflowError(f"cannot write {path}: {exc}") from exc


def load_cube(path: PathLike) -> SpectralCube:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_cube(buf)


def resampling_matrix(source: WavelengthGrid, target: WavelengthGrid) -> np.ndarray:
    """Linear operator R with ``R @ f`` = ``f`` resampled from source to target."""
    eye = np.eye(source.size)
    cols = [
        np.interp(target.wavelengths, source.wavelengths, e, left=0.0, right=0.0)
        for e in eye
    ]
    return np.stack(cols, axis=1)


def resample_spectrum(values, source: WavelengthGrid, target: WavelengthGrid) -> np.ndarray:
    """Piecewise-linear resampling along the last axis; zero outside the source support."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != source.size:
        raise DimensionError(
            f"spectrum has {values.shape[-1]} bands, source grid has {source.size}"
        )
    if source == target:
        return values.copy()
    if values.ndim == 1:
        return np.interp(
            target.wavelengths, source.wavelengths, values, left=0.0, right=0.0
        )
    return values @ resampling_matrix(source, target).T
