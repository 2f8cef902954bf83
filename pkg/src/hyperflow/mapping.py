"""K-means clustering of pixel spectra, optionally joined with a depth channel."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, DimensionError, InputError
from .spectral import SpectralCube

_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class FeaturePointSet:
    """M x D coordinates with a positive weight per dimension."""

    coords: np.ndarray
    scales: Optional[np.ndarray] = None
    refs: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.coords, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionError(f"points must be M x D, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("point coordinates must be finite")
        s = np.ones(x.shape[1]) if self.scales is None else np.asarray(self.scales, dtype=np.float64)
        if s.shape != (x.shape[1],):
            raise DimensionError("one scale weight per dimension is required")
        if np.any(~(s > 0)):
            raise InputError("scale weights must be positive")
        if self.refs is not None and len(self.refs) != x.shape[0]:
            raise DimensionError("refs must have one entry per point")
        object.__setattr__(self, "coords", x)
        object.__setattr__(self, "scales", s)

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def weighted(self) -> np.ndarray:
        return self.coords * self.scales


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    initial_centroids: np.ndarray
    inertia_history: list = field(default_factory=list)
    label_history: list = field(default_factory=list)
    n_reseeds: int = 0


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """M x k squared Euclidean distances, summed directly over coordinates."""
    out = np.empty((x.shape[0], centroids.shape[0]))
    for start in range(0, x.shape[0], _BLOCK):
        blk = x[start:start + _BLOCK]
        diff = blk[:, None, :] - centroids[None, :, :]
        out[start:start + _BLOCK] = np.einsum("mkd,mkd->mk", diff, diff)
    return out


def assign(x: np.ndarray, centroids: np.ndarray):
    """Nearest centroid per point (lowest index wins ties) and its squared distance."""
    d2 = squared_distances(x, centroids)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(x.shape[0]), labels]


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding. Falls back to the first unused point once all mass is zero."""
    m = x.shape[0]
    chosen = [int(rng.integers(m))]
    closest = squared_distances(x, x[chosen]).min(axis=1)
    while len(chosen) < k:
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=closest / total))
        else:
            unused = np.setdiff1d(np.arange(m), chosen)
            nxt = int(unused[0])
        chosen.append(nxt)
        closest = np.minimum(closest, squared_distances(x, x[nxt:nxt + 1])[:, 0])
    return x[chosen].copy()


def update_centroids(x, labels, dist, k, centroids):
    """Cluster means; an empty cluster is re-seeded at the currently farthest point.

    Returns the new centroids and the number of re-seeds. Each re-seed claims
    its point so two empty clusters never land on the same one.
    """
    new = centroids.copy()
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, x)
    nonempty = counts > 0
    new[nonempty] = sums[nonempty] / counts[nonempty, None]
    dist = dist.copy()
    reseeds = 0
    for j in np.flatnonzero(~nonempty):
        far = int(np.argmax(dist))
        new[j] = x[far]
        dist[far] = -1.0
        reseeds += 1
    return new, reseeds


def kmeans(points: FeaturePointSet, k: int, seed: int = 0, max_iter: int = 100,
           tol: float = 1e-6, init=None) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds (or from ``init`` when given).

    One iteration is an assignment followed by a centroid update; the run
    stops once no centroid moves by ``tol`` or more, or after ``max_iter``
    updates. Labels and inertia are from a final assignment against the
    returned centroids, so they are always consistent.
    """
    x = points.weighted
    m = x.shape[0]
    if not 1 <= k <= m:
        raise InputError(f"k = {k} needs 1 <= k <= {m} points")
    if init is None:
        c = kmeans_plusplus(x, k, np.random.default_rng(seed))
    else:
        c = np.array(init, dtype=np.float64)
        if c.shape != (k, x.shape[1]):
            raise DimensionError(f"init must be {k} x {x.shape[1]}, got {c.shape}")
    c0 = c.copy()
    inertias, label_hist = [], []
    reseeds = 0
    n_iter = 0

    def record(labels, dist):
        inertia = float(dist.sum())
        if inertias and inertia > inertias[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"inertia rose from {inertias[-1]} to {inertia}")
        inertias.append(inertia)
        label_hist.append(labels.copy())

    labels, dist = assign(x, c)
    record(labels, dist)
    while n_iter < max_iter:
        new, r = update_centroids(x, labels, dist, k, c)
        reseeds += r
        shift = float(np.sqrt(((new - c) ** 2).sum(axis=1)).max())
        c = new
        n_iter += 1
        labels, dist = assign(x, c)
        record(labels, dist)
        if shift < tol:
            break
    return KMeansResult(labels, c, inertias[-1], n_iter, c0, inertias, label_hist, reseeds)


@dataclass(frozen=True, eq=False)
class ClusterMap:
    labels: np.ndarray
    mean_spectra: np.ndarray
    wavelengths: np.ndarray
    result: KMeansResult


def _unit_max(x: np.ndarray) -> np.ndarray:
    top = np.abs(x).max(axis=0)
    top[top == 0] = 1.0
    return x / top


def cluster_map(cube: SpectralCube, depth=None, k: int = 4, seed: int = 0,
                depth_weight: float = 1.0, max_iter: int = 100, tol: float = 1e-6) -> ClusterMap:
    """Cluster every pixel on its unit-max-scaled spectrum plus weighted depth.

    Mean spectra are reported in the cube's original units; a cluster that
    ends up empty gets a NaN row.
    """
    h, w, b = cube.shape
    spectra = cube.data.reshape(-1, b).astype(np.float64)
    feats = _unit_max(spectra)
    scales = np.ones(b)
    if depth is not None:
        d = np.asarray(depth, dtype=np.float64)
        if d.shape != (h, w):
            raise DimensionError(f"depth map {d.shape} does not match cube {(h, w)}")
        feats = np.concatenate([feats, _unit_max(d.reshape(-1, 1))], axis=1)
        scales = np.append(scales, depth_weight)
    rows, cols = np.divmod(np.arange(h * w), w)
    pts = FeaturePointSet(feats, scales, np.stack([rows, cols], axis=1))
    res = kmeans(pts, k, seed=seed, max_iter=max_iter, tol=tol)
    means = np.full((k, b), np.nan)
    for j in range(k):
        sel = res.labels == j
        if sel.any():
            means[j] = spectra[sel].mean(axis=0)
    return ClusterMap(res.labels.reshape(h, w), means, cube.grid.wavelengths.copy(), res)


def write_cluster_spectra_csv(cmap: ClusterMap, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["cluster_id", "wavelength", "mean_value"])
        for j, row in enumerate(cmap.mean_spectra):
            for wl, v in zip(cmap.wavelengths, row):
                out.writerow([j, repr(float(wl)), repr(float(v))])
