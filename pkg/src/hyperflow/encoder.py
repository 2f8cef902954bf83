"""Software model of the optical encoder: per-pixel transmission MAC, mosaic, sensor."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, DimensionError, FormatError, InputError
from .spectral import SpectralCube, WavelengthGrid

SIGNED = "signed-ideal"
PHYSICAL = "physical"
_MODES = (SIGNED, PHYSICAL)

# pixels per integration block; bounds the temporary (pixels x bands) buffer
_BLOCK_PIXELS = 8192


@dataclass(frozen=True, eq=False)
class TransmissionBank:
    """N_k transmission functions sampled on a wavelength grid.

    ``scale``/``shift`` record the affine map applied by
    :func:`hyperflow.training.project_physical` (signed = scale * physical + shift);
    ``mean`` is the centring vector of a mean-centred PCA bank.
    """

    grid: WavelengthGrid
    weights: np.ndarray
    mode: str = SIGNED
    scale: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim == 1:
            w = w[None, :]
        if w.ndim != 2 or w.shape[0] < 1:
            raise DimensionError(f"bank weights must be N_k x B, got {w.shape}")
        if w.shape[1] != self.grid.size:
            raise DimensionError(f"bank has {w.shape[1]} bands, grid has {self.grid.size}")
        if not np.all(np.isfinite(w)):
            raise DataError("bank weights must be finite")
        if self.mode not in _MODES:
            raise InputError(f"bank mode must be one of {_MODES}, got {self.mode!r}")
        if self.mode == PHYSICAL and (w.min() < 0 or w.max() > 1):
            raise DataError("physical transmissions must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        for name, size in (("scale", w.shape[0]), ("shift", w.shape[0]), ("mean", w.shape[1])):
            val = getattr(self, name)
            if val is not None:
                val = np.array(val, dtype=np.float64).reshape(-1)
                if val.size != size:
                    raise DimensionError(f"{name} must have {size} entries")
                object.__setattr__(self, name, val)

    @property
    def n_encoders(self) -> int:
        return self.weights.shape[0]

    @property
    def weighted(self) -> np.ndarray:
        """Weights multiplied by the band widths: the discrete MAC operator."""
        return self.weights * self.grid.delta

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.mode.encode())
        h.update(self.grid.wavelengths.tobytes())
        h.update(self.grid.delta.tobytes())
        h.update(self.weights.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class MosaicLayout:
    """r x c tile of encoder indices repeated over the sensor."""

    tile: np.ndarray

    def __post_init__(self):
        t = np.array(self.tile, dtype=np.int64)
        if t.ndim != 2 or t.size == 0:
            raise DimensionError(f"mosaic tile must be a non-empty 2-D array, got {t.shape}")
        if t.min() < 0:
            raise DataError("encoder indices must be non-negative")
        t.setflags(write=False)
        object.__setattr__(self, "tile", t)

    @classmethod
    def default(cls, n_encoders: int) -> "MosaicLayout":
        """Row-major square tile when N_k is a square number, otherwise a 1 x N_k strip."""
        side = int(round(np.sqrt(n_encoders)))
        if side * side == n_encoders:
            return cls(np.arange(n_encoders).reshape(side, side))
        return cls(np.arange(n_encoders).reshape(1, n_encoders))

    @classmethod
    def parse(cls, text: str) -> "MosaicLayout":
        """``"0,1,2;3,4,5;6,7,8"`` style: rows split by ';', entries by ','."""
        try:
            rows = [[int(v) for v in row.split(",")] for row in text.strip().split(";")]
        except ValueError as exc:
            raise InputError(f"cannot parse mosaic layout {text!r}") from exc
        if len({len(r) for r in rows}) != 1:
            raise InputError("mosaic rows must have equal length")
        return cls(np.array(rows))

    def format(self) -> str:
        return ";".join(",".join(str(v) for v in row) for row in self.tile)

    @property
    def shape(self):
        return self.tile.shape

    @property
    def n_encoders(self) -> int:
        return int(self.tile.max()) + 1

    def validate_for(self, n_encoders: int) -> None:
        if self.tile.max() >= n_encoders:
            raise DataError(f"tile references encoder {self.tile.max()}, bank has {n_encoders}")
        missing = set(range(n_encoders)) - set(self.tile.ravel().tolist())
        if missing:
            raise DataError(f"encoders {sorted(missing)} never appear in the tile")

    def index_map(self, height: int, width: int) -> np.ndarray:
        r, c = self.tile.shape
        rows = np.arange(height) % r
        cols = np.arange(width) % c
        return self.tile[rows[:, None], cols[None, :]]


@dataclass(frozen=True)
class SensorModel:
    """Camera readout response, applied after optical integration."""

    kind: str = "identity"
    bits: int = 12
    full_scale: float = 1.0
    gain: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "clamp-quantize", "logistic"):
            raise InputError(f"unknown sensor kind {self.kind!r}")
        if self.kind == "clamp-quantize":
            if not 1 <= self.bits <= 16:
                raise InputError("quantizer bits must lie in 1..16")
            if not self.full_scale > 0:
                raise InputError("full_scale must be positive")
        if self.kind == "logistic" and self.gain < 0:
            raise InputError("logistic gain must be non-negative to stay monotone")

    @classmethod
    def parse(cls, text: str) -> "SensorModel":
        """``identity``, ``clamp:BITS:FULL_SCALE`` or ``logistic:GAIN:OFFSET``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "identity" and len(parts) == 1:
                return cls()
            if parts[0] in ("clamp", "clamp-quantize") and len(parts) == 3:
                return cls("clamp-quantize", bits=int(parts[1]), full_scale=float(parts[2]))
            if parts[0] == "logistic" and len(parts) == 3:
                return cls("logistic", gain=float(parts[1]), offset=float(parts[2]))
        except ValueError as exc:
            raise InputError(f"cannot parse sensor spec {text!r}") from exc
        raise InputError(f"cannot parse sensor spec {text!r}")

    def format(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "clamp-quantize":
            return f"clamp:{self.bits}:{self.full_scale!r}"
        return f"logistic:{self.gain!r}:{self.offset!r}"

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x
        if self.kind == "clamp-quantize":
            v = np.clip(x / self.full_scale, 0.0, 1.0) * self.levels
            return np.floor(v + 0.5)  # round half up
        z = self.gain * x + self.offset
        return 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free logistic


@dataclass(frozen=True, eq=False)
class RawFrame:
    """One sensor readout per pixel, tagged with the mosaic and bank that made it."""

    values: np.ndarray
    layout: MosaicLayout
    bank_id: str
    sensor: SensorModel = field(default_factory=SensorModel)

    @property
    def shape(self):
        return self.values.shape


def _integrate(spectra: np.ndarray, weighted: np.ndarray) -> np.ndarray:
    """Row-wise sum of spectra * weighted, accumulated in ascending band order.

    ``spectra`` and ``weighted`` are (N, B). The explicit band loop pins the
    floating-point summation order, so every pixel's result is independent of
    how pixels are batched.
    """
    prod = np.ascontiguousarray((spectra * weighted).T)
    acc = np.zeros(prod.shape[1])
    for row in prod:
        acc += row
    return acc


def transmit_integrate(spectrum, bank: TransmissionBank, k: int, sensor: SensorModel | None = None) -> float:
    """Readout of encoder ``k`` for one pixel spectrum: sigma(sum spectrum * Lambda_k * delta)."""
    sensor = sensor or SensorModel()
    spectrum = np.asarray(spectrum, dtype=np.float64).reshape(-1)
    if spectrum.size != bank.grid.size:
        raise DimensionError(f"spectrum has {spectrum.size} bands, bank grid has {bank.grid.size}")
    if not 0 <= k < bank.n_encoders:
        raise InputError(f"encoder index {k} out of range 0..{bank.n_encoders - 1}")
    value = _integrate(spectrum[None, :], bank.weighted[k][None, :])
    return float(sensor(value)[0])


def _check_grid(cube: SpectralCube, bank: TransmissionBank) -> None:
    if cube.grid != bank.grid:
        raise DimensionError("cube and bank use different wavelength grids")


def mosaic_sample(
    cube: SpectralCube,
    bank: TransmissionBank,
    layout: MosaicLayout | None = None,
    sensor: SensorModel | None = None,
    workers: int = 1,
) -> RawFrame:
    """Simulate the encoder mosaic over the whole sensor.

    Pixel (i, j) sees encoder ``tile[i % r][j % c]``. Work is split into
    pixel blocks across ``workers`` threads; the result does not depend on
    the split.
    """
    _check_grid(cube, bank)
    layout = layout or MosaicLayout.default(bank.n_encoders)
    layout.validate_for(bank.n_encoders)
    sensor = sensor or SensorModel()
    h, w, b = cube.shape
    flat = cube.data.reshape(h * w, b)
    kmap = layout.index_map(h, w).reshape(-1)
    weighted = bank.weighted
    out = np.empty(h * w)

    def run(start: int) -> None:
        stop = min(start + _BLOCK_PIXELS, h * w)
        spectra = flat[start:stop].astype(np.float64, copy=False)
        out[start:stop] = _integrate(spectra, weighted[kmap[start:stop]])

    starts = range(0, h * w, _BLOCK_PIXELS)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return RawFrame(sensor(out).reshape(h, w), layout, bank.digest(), sensor)


def encode_all(cube: SpectralCube, bank: TransmissionBank, sensor: SensorModel | None = None) -> np.ndarray:
    """Every encoder at every pixel (H x W x N_k): the mosaic-free upper bound."""
    _check_grid(cube, bank)
    sensor = sensor or SensorModel()
    h, w, b = cube.shape
    flat = cube.data.reshape(h * w, b).astype(np.float64, copy=False)
    out = np.stack(
        [_integrate(flat, np.broadcast_to(row, flat.shape)) for row in bank.weighted], axis=-1
    )
    return sensor(out).reshape(h, w, bank.n_encoders)


# --- bank text format -------------------------------------------------------

def _fmt_row(values) -> str:
    return " ".join("%.17g" % v for v in values)


def format_bank(bank: TransmissionBank) -> str:
    lines = [
        "# hyperflow transmission bank: header, wavelengths, deltas, N_k weight rows",
        f"{bank.n_encoders} {bank.grid.size} {bank.mode}",
        _fmt_row(bank.grid.wavelengths),
        _fmt_row(bank.grid.delta),
    ]
    lines.extend(_fmt_row(row) for row in bank.weights)
    for name in ("scale", "shift", "mean"):
        val = getattr(bank, name)
        if val is not None:
            lines.append(f"{name} {_fmt_row(val)}")
    return "\n".join(lines) + "\n"


def parse_bank(text: str) -> TransmissionBank:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise FormatError("empty bank file")
    head = lines[0].split()
    if len(head) != 3:
        raise FormatError(f"bank header must be 'N_k B mode', got {lines[0]!r}")
    try:
        nk, nb = int(head[0]), int(head[1])
        body = [[float(v) for v in ln.split()] for ln in lines[1:3 + nk]]
        extras = {}
        for ln in lines[3 + nk:]:
            key, _, rest = ln.partition(" ")
            extras[key] = [float(v) for v in rest.split()]
    except ValueError as exc:
        raise FormatError(f"non-numeric entry in bank file: {exc}") from exc
    if len(body) != 2 + nk or any(len(r) != nb for r in body):
        raise FormatError(f"bank body must hold {2 + nk} rows of {nb} values")
    unknown = set(extras) - {"scale", "shift", "mean"}
    if unknown:
        raise FormatError(f"unknown bank fields {sorted(unknown)}")
    grid = WavelengthGrid(body[0], body[1])
    return TransmissionBank(grid, np.array(body[2:]), head[2], **extras)


def save_bank(bank: TransmissionBank, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_bank(bank))


def load_bank(path) -> TransmissionBank:
    with open(path, encoding="ascii") as fh:
        return parse_bank(fh.read())
