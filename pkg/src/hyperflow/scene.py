"""Synthetic hyperspectral video: spectral libraries, metamers and turntable scenes."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .colorimetry import CmfTable, cie1931, tristimulus_operator, xyz_to_xy
from .errors import DataError, DimensionError, FeasibilityError, FormatError, InputError
from .spectral import SpectralCube, WavelengthGrid, default_grid, resample_spectrum


class SpectralLibrary:
    """Named reflectance spectra in [0, 1] on one wavelength grid."""

    def __init__(self, grid: WavelengthGrid, spectra: Sequence[Tuple[str, np.ndarray]] | Dict[str, np.ndarray]):
        items = list(spectra.items()) if isinstance(spectra, dict) else list(spectra)
        names = [n for n, _ in items]
        if len(set(names)) != len(names):
            raise DataError("spectral library names must be unique")
        self.grid = grid
        self._spectra: Dict[str, np.ndarray] = {}
        for name, values in items:
            arr = np.array(values, dtype=np.float64).reshape(-1)
            if arr.size != grid.size:
                raise DimensionError(f"spectrum {name!r} has {arr.size} bands, grid has {grid.size}")
            if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
                raise DataError(f"reflectance {name!r} must lie in [0, 1]")
            arr.setflags(write=False)
            self._spectra[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._spectra[name]
        except KeyError:
            raise InputError(f"no spectrum named {name!r} in library") from None

    def __contains__(self, name) -> bool:
        return name in self._spectra

    def __iter__(self):
        return iter(self._spectra)

    def __len__(self) -> int:
        return len(self._spectra)

    @property
    def names(self) -> List[str]:
        return list(self._spectra)

    def matrix(self) -> np.ndarray:
        return np.stack([self._spectra[n] for n in self._spectra])

    @classmethod
    def from_csv(cls, path, grid: WavelengthGrid | None = None) -> "SpectralLibrary":
        """CSV with a ``wavelength`` column followed by one column per material."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        wl = np.array([float(r[0]) for r in body])
        src = WavelengthGrid(wl, np.gradient(wl) if wl.size > 1 else np.ones(1))
        grid = grid or src
        return cls(grid, [
            (name, np.clip(resample_spectrum([float(r[i]) for r in body], src, grid), 0.0, 1.0))
            for i, name in enumerate(header[1:], start=1)
        ])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gauss(wl, mu, sigma):
    return np.exp(-0.5 * ((wl - mu) / sigma) ** 2)


def smooth_reflectance(grid: WavelengthGrid, rng: np.random.Generator) -> np.ndarray:
    """Random smooth reflectance: a few Gaussian bumps over a sigmoid edge."""
    wl = grid.wavelengths
    lo, hi = wl[0], wl[-1]
    span = hi - lo if hi > lo else 1.0
    r = rng.uniform(0.02, 0.3) + rng.uniform(0.0, 0.5) * _sigmoid(
        (wl - rng.uniform(lo, hi)) / rng.uniform(0.02, 0.1) / span * rng.choice([-1.0, 1.0]) * 10
    )
    for _ in range(rng.integers(2, 5)):
        r = r + rng.uniform(0.05, 0.4) * _gauss(wl, rng.uniform(lo, hi), rng.uniform(0.04, 0.2) * span)
    return np.clip(r / max(1.0, r.max() / 0.95), 0.0, 1.0)


def general_library(grid: WavelengthGrid | None = None, n: int = 32, seed: int = 0) -> SpectralLibrary:
    grid = grid or default_grid()
    rng = np.random.default_rng(seed)
    return SpectralLibrary(grid, [(f"material_{i:02d}", smooth_reflectance(grid, rng)) for i in range(n)])


def smooth_abundances(height: int, width: int, n: int, rng: np.random.Generator,
                      smoothness: float = 8.0, sharpness: float = 4.0) -> np.ndarray:
    """H x W x n non-negative weights summing to one, spatially smooth."""
    fields = rng.standard_normal((n, height, width))
    fields = np.stack([gaussian_filter(f, smoothness, mode="wrap") for f in fields], axis=-1)
    fields /= fields.std() + 1e-12
    z = sharpness * fields
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def apply_noise(data: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative relative Gaussian noise per sample, floored at zero."""
    if level == 0:
        return data
    noisy = data * (1.0 + level * rng.standard_normal(data.shape))
    return np.maximum(noisy, 0.0)


def mixture_scene(spectra: np.ndarray, grid: WavelengthGrid, height: int, width: int, seed: int,
                  noise: float = 0.0, illuminant=None, smoothness: float = 8.0) -> SpectralCube:
    """Cube whose pixels are smooth random convex mixtures of the given spectra."""
    rng = np.random.default_rng(seed)
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    weights = smooth_abundances(height, width, spectra.shape[0], rng, smoothness)
    data = weights @ spectra
    if illuminant is not None:
        data = data * np.asarray(illuminant, dtype=np.float64)
    return SpectralCube(apply_noise(data, noise, rng), grid)


def general_scenes(grid: WavelengthGrid | None = None, n_scenes: int = 4, size: int = 48,
                   seed: int = 0, library: SpectralLibrary | None = None) -> List[SpectralCube]:
    """Training set of mixed-material scenes under tilted illuminants."""
    grid = grid or default_grid()
    library = library or general_library(grid, seed=seed)
    rng = np.random.default_rng(seed + 1)
    mats = library.matrix()
    wl = grid.wavelengths
    cubes = []
    for i in range(n_scenes):
        pick = rng.choice(mats.shape[0], size=min(8, mats.shape[0]), replace=False)
        tilt = rng.uniform(-0.4, 0.4)
        illum = 1.0 + tilt * (wl - wl.mean()) / max(np.ptp(wl), 1.0)
        cubes.append(mixture_scene(mats[pick], grid, size, size, int(rng.integers(2**31)),
                                   noise=0.005, illuminant=illum))
    return cubes


# --- metamers ----------------------------------------------------------------

def _chromaticity_constraints(op: np.ndarray, xy) -> np.ndarray:
    """Rows c with c @ s == 0 exactly when s has chromaticity ``xy``."""
    x, y = xy
    total = op.sum(axis=0)
    return np.stack([op[0] - x * total, op[1] - y * total])


def make_metamer_pair(
    target_chromaticity,
    grid: WavelengthGrid,
    separation: float,
    base=None,
    direction=None,
    illuminant=None,
    cmf: CmfTable | None = None,
):
    """Two reflectances with equal tristimulus values and spectral distance ``separation``.

    ``base`` (default: flat 0.5) is first corrected onto the target
    chromaticity by a minimum-norm combination of three broad Gaussians.
    The pair is ``base -/+ p/2`` with ``p`` in the null space of the
    illuminant-weighted tristimulus operator. A caller-supplied
    ``direction`` must already lie in that null space; otherwise a smooth
    default direction is projected into it.
    """
    cmf = cmf or cie1931()
    wl = grid.wavelengths
    if wl[0] > 400 or wl[-1] < 700:
        raise InputError("metamer construction needs a grid covering 400-700 nm")
    if separation < 0:
        raise InputError("separation must be non-negative")
    illum = np.ones(grid.size) if illuminant is None else np.asarray(illuminant, dtype=np.float64)
    op = tristimulus_operator(grid, cmf) * illum
    xy = xyz_to_xy(np.array([1.0, 1.0, 1.0]) if target_chromaticity is None else
                   np.array([target_chromaticity[0], target_chromaticity[1],
                             1.0 - target_chromaticity[0] - target_chromaticity[1]]))
    locus = xyz_to_xy(cmf.matrix.T)
    if not _inside(locus, xy):
        raise FeasibilityError(f"chromaticity {tuple(xy)} lies outside the spectral locus")

    s = np.full(grid.size, 0.5) if base is None else np.array(base, dtype=np.float64).reshape(-1)
    if s.size != grid.size:
        raise DimensionError("base spectrum does not match the grid")
    con = _chromaticity_constraints(op, xy)
    basis = np.stack([_gauss(wl, mu, 40.0) for mu in (450.0, 550.0, 620.0)], axis=1)
    coef, *_ = np.linalg.lstsq(con @ basis, -(con @ s), rcond=None)
    s = s + basis @ coef

    scale_op = np.linalg.norm(op)
    if direction is None:
        u = (wl - wl[0]) / max(np.ptp(wl), 1.0)
        d = np.cos(2.0 * np.pi * 1.5 * u) + 0.5 * np.sin(2.0 * np.pi * 2.5 * u)
        q, _ = np.linalg.qr(op.T)
        d = d - q @ (q.T @ d)
    else:
        d = np.array(direction, dtype=np.float64).reshape(-1)
        if d.size != grid.size:
            raise DimensionError("direction does not match the grid")
        if np.linalg.norm(op @ d) > 1e-9 * scale_op * max(np.linalg.norm(d), 1e-300):
            raise FeasibilityError("perturbation direction has a non-zero tristimulus component")
    norm = np.linalg.norm(d)
    if separation == 0 or norm == 0:
        if separation > 0:
            raise FeasibilityError("zero perturbation direction cannot provide a separation")
        p = np.zeros(grid.size)
    else:
        # tiny separations would vanish in rounding against the base, so the
        # perturbation never drops below a resolvable 1e-12
        p = d * (max(separation * (1.0 + 1e-9), 1e-12) / norm)
    a, b = s - 0.5 * p, s + 0.5 * p
    if np.linalg.norm(b - a) < separation:
        raise FeasibilityError(f"separation {separation} is not resolvable in double precision")
    for spec in (a, b):
        if spec.min() < 0 or spec.max() > 1:
            raise FeasibilityError(
                f"metamer pair leaves [0, 1] (range {spec.min():.3g}..{spec.max():.3g}) at separation {separation}"
            )
    return a, b


def _inside(poly: np.ndarray, pt) -> bool:
    """Even-odd point-in-polygon test on the closed locus."""
    x, y = pt
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def fruit_library(grid: WavelengthGrid | None = None, separation: float = 1.0) -> SpectralLibrary:
    """Turntable materials: background, two metameric grapes and three distractors."""
    grid = grid or default_grid()
    wl = grid.wavelengths
    grape = 0.12 + 0.12 * _gauss(wl, 430, 30) + 0.10 * _gauss(wl, 540, 25) + 0.25 * _sigmoid((wl - 690) / 12)
    target = xyz_to_xy(tristimulus_operator(grid) @ grape)
    natural, artificial = make_metamer_pair(target, grid, separation, base=grape)
    return SpectralLibrary(grid, [
        ("turntable", 0.12 + 0.28 * _gauss(wl, 460, 45)),
        ("grape_natural", natural),
        ("grape_artificial", artificial),
        ("banana", 0.08 + 0.70 * _sigmoid((wl - 510) / 12)),
        ("orange", 0.06 + 0.75 * _sigmoid((wl - 585) / 10)),
        ("potato", 0.20 + 0.25 * _sigmoid((wl - 520) / 40) - 0.05 * _gauss(wl, 670, 30)),
    ])


# --- scene geometry -----------------------------------------------------------

@dataclass(frozen=True)
class Disk:
    cy: float
    cx: float
    radius: float

    def contains(self, y, x):
        return (y - self.cy) ** 2 + (x - self.cx) ** 2 <= self.radius ** 2

    def bounds(self):
        r = self.radius
        return self.cy - r, self.cx - r, self.cy + r, self.cx + r


@dataclass(frozen=True)
class Rect:
    y0: float
    x0: float
    y1: float
    x1: float

    def contains(self, y, x):
        return (y >= self.y0) & (y < self.y1) & (x >= self.x0) & (x < self.x1)

    def bounds(self):
        return self.y0, self.x0, self.y1, self.x1


@dataclass(frozen=True)
class Polygon:
    points: Tuple[Tuple[float, float], ...]  # (y, x) vertices

    def contains(self, y, x):
        y = np.asarray(y, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        inside = np.zeros(np.broadcast(y, x).shape, dtype=bool)
        pts = self.points
        for i in range(len(pts)):
            y1, x1 = pts[i]
            y2, x2 = pts[(i + 1) % len(pts)]
            if y1 == y2:
                continue
            crosses = (y1 > y) != (y2 > y)
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xc)
        return inside

    def bounds(self):
        ys = [p[0] for p in self.points]
        xs = [p[1] for p in self.points]
        return min(ys), min(xs), max(ys), max(xs)


@dataclass(frozen=True)
class SceneObject:
    shape: object
    reflectance: str
    label: int
    omega: float = 0.0  # turntable angular velocity, degrees per frame


@dataclass
class SceneDescription:
    height: int
    width: int
    library: SpectralLibrary
    objects: List[SceneObject]
    background: str
    illuminant: Optional[np.ndarray] = None
    noise: float = 0.0
    class_names: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InputError("canvas must be at least 1 x 1")
        if self.noise < 0:
            raise InputError("noise level must be non-negative")
        grid = self.library.grid
        if self.illuminant is None:
            self.illuminant = np.ones(grid.size)
        self.illuminant = np.asarray(self.illuminant, dtype=np.float64)
        if self.illuminant.shape != (grid.size,) or np.any(self.illuminant < 0):
            raise DataError("illuminant must be a non-negative spectrum on the library grid")
        self.library[self.background]
        for obj in self.objects:
            self.library[obj.reflectance]
            if not math.isfinite(obj.omega):
                raise DataError("angular velocity must be finite")
            if obj.label < 1 or obj.label > 255:
                raise DataError("object class ids must lie in 1..255")
            y0, x0, y1, x1 = obj.shape.bounds()
            if y0 < 0 or x0 < 0 or y1 > self.height or x1 > self.width:
                raise DataError(f"object {obj.reflectance!r} extends outside the canvas")

    @property
    def grid(self) -> WavelengthGrid:
        return self.library.grid

    @property
    def classes(self) -> List[int]:
        return [0] + sorted({o.label for o in self.objects})

    @property
    def n_classes(self) -> int:
        return max(self.classes) + 1


@dataclass(frozen=True, eq=False)
class LabeledFrame:
    cube: SpectralCube
    mask: np.ndarray  # H x W uint8 class ids, 0 = background


def render_masks(desc: SceneDescription, t: int):
    """Class map and per-pixel reflectance index for frame ``t`` (no spectra)."""
    h, w = desc.height, desc.width
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    cy, cx = h / 2.0, w / 2.0
    mask = np.zeros((h, w), dtype=np.uint8)
    owner = np.full((h, w), -1, dtype=np.int64)
    for idx, obj in enumerate(desc.objects):
        theta = math.radians(math.fmod(t * obj.omega, 360.0))
        c, s = math.cos(theta), math.sin(theta)
        # inverse rotation: sample the t = 0 shape at the pre-image
        dy, dx = yy - cy, xx - cx
        py = cy + c * dy - s * dx
        px = cx + s * dy + c * dx
        inside = obj.shape.contains(py, px)
        mask[inside] = obj.label
        owner[inside] = idx
    return mask, owner


def render_frame(desc: SceneDescription, t: int, seed: int) -> LabeledFrame:
    mask, owner = render_masks(desc, t)
    refl = np.empty((desc.height, desc.width, desc.grid.size))
    refl[:] = desc.library[desc.background]
    for idx, obj in enumerate(desc.objects):
        refl[owner == idx] = desc.library[obj.reflectance]
    data = refl * desc.illuminant
    rng = np.random.default_rng([seed, t])
    data = apply_noise(data, desc.noise, rng)
    return LabeledFrame(SpectralCube(data, desc.grid), mask)


def render_scene_video(desc: SceneDescription, n_frames: int, seed: int) -> Iterator[LabeledFrame]:
    """Frames 0..n_frames-1; frame t depends only on (desc, t, seed)."""
    for t in range(n_frames):
        yield render_frame(desc, t, seed)


def turntable_scene(size: int = 96, omega: float = 3.0, noise: float = 0.01,
                    separation: float = 1.0, grid: WavelengthGrid | None = None) -> SceneDescription:
    """Two metameric grapes plus banana, orange and potato around a turntable."""
    lib = fruit_library(grid, separation)
    c = size / 2.0
    ring = 0.31 * size
    radius = 0.175 * size
    names = ["grape_natural", "grape_artificial", "banana", "orange", "potato"]
    objects = []
    for i, name in enumerate(names):
        ang = 2.0 * math.pi * i / len(names)
        objects.append(SceneObject(Disk(c + ring * math.sin(ang), c + ring * math.cos(ang), radius),
                                   name, i + 1, omega))
    return SceneDescription(size, size, lib, objects, "turntable", noise=noise,
                            class_names={0: "turntable", **{i + 1: n for i, n in enumerate(names)}})


# --- scene config files ------------------------------------------------------

_BLOCK_RE = re.compile(r"^(\w+)\s*\{\s*$")


def parse_scene(text: str, library: SpectralLibrary | None = None) -> SceneDescription:
    """Parse a scene description.

    Top-level ``key = value`` lines set canvas and rendering options;
    ``object { ... }`` blocks declare shapes::

        height = 96
        width = 96
        library = fruit          # or general, or a CSV path
        background = turntable
        noise = 0.01
        object {
            shape = disk         # disk: center, radius; rect: corners; polygon: points
            center = 30, 48
            radius = 12
            reflectance = banana
            class = 3
            omega = 3.6
        }
    """
    top: Dict[str, str] = {}
    blocks: List[Dict[str, str]] = []
    current: Optional[Dict[str, str]] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _BLOCK_RE.match(line)
        if m:
            if current is not None:
                raise FormatError(f"line {lineno}: nested blocks are not allowed")
            if m.group(1) != "object":
                raise FormatError(f"line {lineno}: unknown block {m.group(1)!r}")
            current = {}
            continue
        if line == "}":
            if current is None:
                raise FormatError(f"line {lineno}: unmatched '}}'")
            blocks.append(current)
            current = None
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        (current if current is not None else top)[key.strip()] = value.strip()
    if current is not None:
        raise FormatError("unterminated object block")

    try:
        height = int(top.get("height", 96))
        width = int(top.get("width", 96))
        noise = float(top.get("noise", 0.0))
        separation = float(top.get("separation", 1.0))
    except ValueError as exc:
        raise FormatError(f"bad numeric value: {exc}") from exc
    if library is None:
        lib_name = top.get("library", "fruit")
        if lib_name == "fruit":
            library = fruit_library(separation=separation)
        elif lib_name == "general":
            library = general_library(seed=int(top.get("library_seed", 0)))
        else:
            library = SpectralLibrary.from_csv(lib_name, default_grid())
    objects = [_parse_object(b) for b in blocks]
    illum = None
    if top.get("illuminant", "flat") != "flat":
        tilt = float(top["illuminant"])
        wl = library.grid.wavelengths
        illum = 1.0 + tilt * (wl - wl.mean()) / max(np.ptp(wl), 1.0)
    names = {0: top.get("background", "background")}
    names.update({o.label: o.reflectance for o in objects})
    return SceneDescription(height, width, library, objects, top.get("background", library.names[0]),
                            illuminant=illum, noise=noise, class_names=names)


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _parse_object(block: Dict[str, str]) -> SceneObject:
    try:
        kind = block.get("shape", "disk")
        if kind == "disk":
            cy, cx = _floats(block["center"])
            shape = Disk(cy, cx, float(block["radius"]))
        elif kind == "rect":
            y0, x0, y1, x1 = _floats(block["corners"])
            shape = Rect(y0, x0, y1, x1)
        elif kind == "polygon":
            vals = _floats(block["points"])
            shape = Polygon(tuple(zip(vals[0::2], vals[1::2])))
        else:
            raise FormatError(f"unknown shape {kind!r}")
        return SceneObject(shape, block["reflectance"], int(block["class"]), float(block.get("omega", 0.0)))
    except KeyError as exc:
        raise FormatError(f"object block is missing {exc}") from None
    except ValueError as exc:
        raise FormatError(f"bad object value: {exc}") from None
