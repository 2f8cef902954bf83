"""Data-rate figure of merit and a deterministic throughput harness."""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, fields
from typing import Callable, Dict, Optional

import numpy as np

from .encoder import MosaicLayout, RawFrame, SensorModel, TransmissionBank, mosaic_sample
from .errors import InputError, IntegrityError
from .reconstruct import decode_spectra, demosaic
from .spectral import CubeStream, SpectralCube


@dataclass(frozen=True)
class RateReport:
    """Formula data rate plus, when measured, software throughput of one stage.

    ``data_rate`` is the exact product width*height*bands*bit_depth*fps in
    bits/s. ``samples_per_s`` is measured pixel-band samples per second and
    has nothing to do with the optical rate; it is None when not measured.
    """

    width: int
    height: int
    bands: int
    bit_depth: int
    fps: float
    data_rate: float
    stage: Optional[str] = None
    samples_per_s: Optional[float] = None
    workers: Optional[int] = None
    repetitions: int = 0
    output_digest: Optional[str] = None

    @property
    def gbps(self) -> float:
        return self.data_rate / 1e9

    @property
    def tbps(self) -> float:
        return self.data_rate / 1e12

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["gbps"] = self.gbps
        d["tbps"] = self.tbps
        return d

    def to_text(self) -> str:
        lines = [
            f"frame        {self.width} x {self.height} px, {self.bands} bands, "
            f"{self.bit_depth} bit, {self.fps:g} fps",
            f"data rate    {self.data_rate:.5g} b/s = {self.gbps:.5g} Gb/s = {self.tbps:.5g} Tb/s",
        ]
        if self.samples_per_s is not None:
            lines.append(
                f"measured     stage {self.stage}, {self.workers} worker(s), "
                f"{self.repetitions} rep(s): {self.samples_per_s:.4g} samples/s"
            )
        return "\n".join(lines)


def data_rate(width, height, bands, bit_depth, fps) -> RateReport:
    """Exact product; integer inputs give an integer rate."""
    for name, v in (("width", width), ("height", height), ("bands", bands),
                    ("bit_depth", bit_depth), ("fps", fps)):
        if v < 0:
            raise InputError(f"{name} must be non-negative")
    if isinstance(fps, float) and fps.is_integer():
        fps = int(fps)
    rate = width * height * bands * bit_depth * fps
    return RateReport(width, height, bands, bit_depth, fps, rate)


def write_rate_csv(report: RateReport, path) -> None:
    d = report.as_dict()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(list(d))
        out.writerow(["" if v is None else v for v in d.values()])


# --- stage registry ----------------------------------------------------------

@dataclass
class StageContext:
    bank: TransmissionBank
    layout: MosaicLayout
    sensor: SensorModel
    workers: int = 1


StageFn = Callable[[SpectralCube, StageContext], np.ndarray]
_STAGES: Dict[str, StageFn] = {}


def register_stage(name: str, fn: StageFn) -> None:
    _STAGES[name] = fn


def stage_names():
    return sorted(_STAGES)


def _encode(cube, ctx):
    return mosaic_sample(cube, ctx.bank, ctx.layout, ctx.sensor, ctx.workers).values


def _raw(cube, ctx):
    return RawFrame(_encode(cube, ctx), ctx.layout, ctx.bank.digest(), ctx.sensor)


# downstream stages include the steps that feed them, so "decode" times the
# whole encode -> demosaic -> decode chain ("reconstruct" is an alias)
def _demosaic(cube, ctx):
    return demosaic(_raw(cube, ctx)).data


def _decode(cube, ctx):
    return decode_spectra(demosaic(_raw(cube, ctx)), ctx.bank).data


register_stage("encode", _encode)
register_stage("demosaic", _demosaic)
register_stage("decode", _decode)
register_stage("reconstruct", _decode)


def _default_bank(cube: SpectralCube) -> TransmissionBank:
    from .training import build_training_matrix, train_pca_bank

    n = min(9, cube.bands, cube.height * cube.width)
    return train_pca_bank(build_training_matrix([cube], 4096, seed=0), n)


def throughput_bench(stage: str, stream: CubeStream, repetitions: int, *,
                     bank: TransmissionBank | None = None, layout: MosaicLayout | None = None,
                     sensor: SensorModel | None = None, workers: int = 1, warmup: int = 1,
                     bit_depth: int = 12, fps: float = 30) -> RateReport:
    """Time ``stage`` over every frame of ``stream``, ``repetitions`` times.

    Warm-up passes are not timed. Each pass hashes all stage outputs; every
    pass must produce the same digest or IntegrityError is raised and no
    timing is reported.
    """
    if stage not in _STAGES:
        raise InputError(f"unknown stage {stage!r}; known: {', '.join(stage_names())}")
    if repetitions < 0:
        raise InputError("repetitions must be non-negative")
    base = data_rate(stream.width, stream.height, stream.grid.size, bit_depth, fps)
    if repetitions == 0:
        return base
    cubes = stream.cubes()
    if not cubes:
        raise InputError("stream is empty")
    bank = bank or _default_bank(cubes[0])
    ctx = StageContext(bank, layout or MosaicLayout.default(bank.n_encoders),
                       sensor or SensorModel(), workers)
    fn = _STAGES[stage]

    def one_pass():
        h = hashlib.sha256()
        for cube in cubes:
            out = np.ascontiguousarray(fn(cube, ctx))
            h.update(str(out.shape).encode())
            h.update(out.tobytes())
        return h.hexdigest()

    digests = [one_pass() for _ in range(max(warmup, 0))]
    elapsed = 0.0
    for _ in range(repetitions):
        t0 = time.perf_counter()
        digests.append(one_pass())
        elapsed += time.perf_counter() - t0
    if len(set(digests)) != 1:
        raise IntegrityError(f"stage {stage!r} produced differing outputs across repetitions")
    samples = repetitions * sum(c.height * c.width * c.bands for c in cubes)
    return RateReport(base.width, base.height, base.bands, base.bit_depth, base.fps,
                      base.data_rate, stage, samples / max(elapsed, 1e-12), workers,
                      repetitions, digests[0])
