"""Encoder bank training by PCA and projection to realizable transmissions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoder import PHYSICAL, SIGNED, TransmissionBank
from .errors import DegenerateRowError, DimensionError, InputError, RankError
from .spectral import SpectralCube, WavelengthGrid


@dataclass(frozen=True, eq=False)
class TrainingMatrix:
    """B x M matrix of pixel spectra (one per column)."""

    data: np.ndarray
    grid: WavelengthGrid
    mean: Optional[np.ndarray] = None

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def centered(self) -> np.ndarray:
        if self.mean is None:
            return self.data
        return self.data - self.mean[:, None]


def build_training_matrix(
    cubes: Sequence[SpectralCube],
    max_samples: int,
    seed: int = 0,
    center: bool = False,
) -> TrainingMatrix:
    """Stack pixel spectra from ``cubes`` as columns.

    When the cubes hold more than ``max_samples`` pixels, a uniform sample
    without replacement is drawn (kept in scan order); otherwise every pixel
    is used in cube-then-row-major order.
    """
    cubes = list(cubes)
    if not cubes:
        raise InputError("need at least one cube to build a training matrix")
    grid = cubes[0].grid
    if any(c.grid != grid for c in cubes[1:]):
        raise InputError("training cubes must share one wavelength grid")
    if max_samples < 1:
        raise InputError("max_samples must be at least 1")
    spectra = np.concatenate(
        [c.data.reshape(-1, c.bands).astype(np.float64) for c in cubes], axis=0
    )
    if spectra.shape[0] > max_samples:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(spectra.shape[0], size=max_samples, replace=False))
        spectra = spectra[keep]
    data = np.ascontiguousarray(spectra.T)
    mean = data.mean(axis=1) if center else None
    return TrainingMatrix(data, grid, mean)


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive (first one on ties)."""
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


@dataclass(frozen=True, eq=False)
class PcaResult:
    bank: TransmissionBank
    singular_values: np.ndarray


def pca_components(data: TrainingMatrix, n_components: int) -> PcaResult:
    """Top left singular vectors of the (optionally centred) training matrix."""
    b, m = data.data.shape
    if not 1 <= n_components <= min(b, m):
        raise RankError(
            f"cannot extract {n_components} components from a {b} x {m} matrix"
        )
    u, s, _ = np.linalg.svd(data.centered(), full_matrices=False)
    rows = _fix_signs(u[:, :n_components].T.copy())
    bank = TransmissionBank(data.grid, rows, SIGNED, mean=data.mean)
    return PcaResult(bank, s[:n_components].copy())


def train_pca_bank(data: TrainingMatrix, n_components: int = 9) -> TransmissionBank:
    """Signed-ideal bank whose rows are the ``n_components`` strongest principal axes."""
    return pca_components(data, n_components).bank


def project_physical(bank: TransmissionBank) -> TransmissionBank:
    """Map each row affinely onto [0, 1], recording the inverse map on the bank.

    ``signed = scale * physical + shift`` with ``scale = max - min`` and
    ``shift = min`` per row.
    """
    if bank.mode != SIGNED:
        raise InputError("project_physical expects a signed-ideal bank")
    w = bank.weights
    lo = w.min(axis=1)
    hi = w.max(axis=1)
    span = hi - lo
    bad = np.flatnonzero(span == 0)
    if bad.size:
        raise DegenerateRowError(f"rows {bad.tolist()} are constant")
    phys = (w - lo[:, None]) / span[:, None]
    np.clip(phys, 0.0, 1.0, out=phys)
    return TransmissionBank(bank.grid, phys, PHYSICAL, scale=span, shift=lo, mean=bank.mean)


def unproject(bank: TransmissionBank) -> TransmissionBank:
    """Recover the signed bank from a physical one via its recorded affine map."""
    if bank.mode != PHYSICAL:
        return bank
    if bank.scale is None or bank.shift is None:
        raise InputError("physical bank carries no affine parameters to invert")
    w = bank.weights * bank.scale[:, None] + bank.shift[:, None]
    return TransmissionBank(bank.grid, w, SIGNED, mean=bank.mean)


def reconstruction_error(data: TrainingMatrix, bank: TransmissionBank) -> float:
    """Frobenius norm of the residual after projecting the data onto the bank rows."""
    if bank.grid.size != data.data.shape[0]:
        raise DimensionError("bank and training matrix disagree on band count")
    x = data.centered()
    q, _ = np.linalg.qr(bank.weights.T)
    return float(np.linalg.norm(x - q @ (q.T @ x)))
