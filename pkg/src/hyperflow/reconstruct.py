"""Demosaicing, least-squares spectral decoding and reconstruction error."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._interp import lattice_interp
from .encoder import MosaicLayout, RawFrame, TransmissionBank
from .errors import DataError, DimensionError
from .spectral import SpectralCube


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """H x W x N_k encoder features, one full-resolution channel per encoder."""

    data: np.ndarray
    bank_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"feature frame must be H x W x N_k, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("feature frame contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]


def demosaic(raw: RawFrame, layout: MosaicLayout | None = None) -> FeatureFrame:
    """Fill every encoder channel at every pixel by per-channel bilinear interpolation.

    Each tile position holding encoder k defines a sample sub-lattice with
    the tile's period. Pixels of that sub-lattice keep their readout
    exactly. Elsewhere the channel is the bilinear interpolant of the
    sub-lattice, edge-clamped; when k occupies several tile positions
    the interpolants of its sub-lattices are averaged.
    """
    layout = layout or raw.layout
    values = np.asarray(raw.values, dtype=np.float64)
    h, w = values.shape
    r, c = layout.shape
    nk = layout.n_encoders
    out = np.zeros((h, w, nk))
    for k in range(nk):
        positions = np.argwhere(layout.tile == k)
        if positions.size == 0:
            continue
        acc = np.zeros((h, w))
        for a, b in positions:
            samples = values[a::r, b::c]
            if samples.size == 0:
                continue
            acc += lattice_interp(samples, h, w, a, r, b, c)
        acc /= len(positions)
        for a, b in positions:
            acc[a::r, b::c] = values[a::r, b::c]
        out[:, :, k] = acc
    return FeatureFrame(out, raw.bank_id)


def decoder_matrix(bank: TransmissionBank) -> np.ndarray:
    """B x N_k pseudoinverse of the band-width-weighted bank."""
    return np.linalg.pinv(bank.weighted)


def decode_spectra(features: FeatureFrame, bank: TransmissionBank, *, clamp: bool = True) -> SpectralCube:
    """Least-squares spectra from encoder features.

    Decoding applies the pseudoinverse of the weighted bank, so decoding
    the encoding of any spectrum gives its orthogonal projection onto the
    bank's row space. For orthonormal rows with unit band widths this is
    ``sum_k Lambda_k * S_k``. A centred bank adds back its mean. With
    ``clamp`` the negative lobes are cut to zero.
    """
    if features.n_channels != bank.n_encoders:
        raise DimensionError(
            f"features have {features.n_channels} channels, bank has {bank.n_encoders}"
        )
    h, w, nk = features.shape
    s = features.data.reshape(-1, nk)
    pinv = decoder_matrix(bank)
    if bank.mean is not None:
        s = s - bank.weighted @ bank.mean
    spectra = s @ pinv.T
    if bank.mean is not None:
        spectra = spectra + bank.mean
    if clamp:
        np.maximum(spectra, 0.0, out=spectra)
    return SpectralCube(spectra.reshape(h, w, -1), bank.grid, check=clamp)


@dataclass(frozen=True, eq=False)
class DeltaSummary:
    mean: float
    median: float
    counts: np.ndarray
    edges: np.ndarray
    n_valid: int
    n_excluded: int


def spectral_difference(a: SpectralCube, b: SpectralCube, bins: int = 50, value_range=None):
    """Per-pixel relative L1 spectral difference ||a - b||_1 / ||a||_1.

    Pixels where ``a`` is all zero are excluded (NaN in the map) and
    counted in the summary.
    """
    if a.shape != b.shape or a.grid != b.grid:
        raise DimensionError("cubes differ in shape or wavelength grid")
    ad = a.data.astype(np.float64)
    bd = b.data.astype(np.float64)
    norm = np.abs(ad).sum(axis=-1)
    diff = np.abs(ad - bd).sum(axis=-1)
    valid = norm > 0
    delta = np.full(norm.shape, np.nan)
    delta[valid] = diff[valid] / norm[valid]
    vals = delta[valid]
    if value_range is None:
        top = float(vals.max()) if vals.size else 1.0
        value_range = (0.0, top if top > 0 else 1.0)
    counts, edges = np.histogram(vals, bins=bins, range=value_range)
    summary = DeltaSummary(
        mean=float(vals.mean()) if vals.size else float("nan"),
        median=float(np.median(vals)) if vals.size else float("nan"),
        counts=counts,
        edges=edges,
        n_valid=int(vals.size),
        n_excluded=int((~valid).sum()),
    )
    return delta, summary


def write_histogram_csv(summary: DeltaSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, n in zip(summary.edges[:-1], summary.edges[1:], summary.counts):
            out.writerow([repr(float(lo)), repr(float(hi)), int(n)])
