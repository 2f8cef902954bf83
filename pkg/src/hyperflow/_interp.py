"""Separable bilinear interpolation from a regular sample lattice, clamped at the edges."""

from __future__ import annotations

import numpy as np


def axis_weights(n_out: int, offset: float, step: float, n_samples: int):
    """Neighbour indices and fractional weight for each output coordinate.

    Sample ``m`` sits at coordinate ``offset + m * step``. Coordinates outside
    the first/last sample take that sample's value.
    """
    u = (np.arange(n_out, dtype=np.float64) - offset) / step
    u = np.clip(u, 0.0, n_samples - 1)
    if n_samples == 1:
        zeros = np.zeros(n_out, dtype=np.int64)
        return zeros, zeros, np.zeros(n_out)
    i0 = np.minimum(np.floor(u).astype(np.int64), n_samples - 2)
    return i0, i0 + 1, u - i0


def lattice_interp(samples, out_h: int, out_w: int, off_y: float, step_y: float,
                   off_x: float, step_x: float) -> np.ndarray:
    """Interpolate ``samples`` (nr x nc [x ...]) onto an out_h x out_w pixel grid."""
    samples = np.asarray(samples, dtype=np.float64)
    nr, nc = samples.shape[:2]
    trail = (1,) * (samples.ndim - 2)
    r0, r1, fy = axis_weights(out_h, off_y, step_y, nr)
    fy = fy.reshape((-1, 1) + trail)
    rows = samples[r0] + fy * (samples[r1] - samples[r0])  # exact when neighbours agree
    c0, c1, fx = axis_weights(out_w, off_x, step_x, nc)
    fx = fx.reshape((1, -1) + trail)
    return rows[:, c0] + fx * (rows[:, c1] - rows[:, c0])
