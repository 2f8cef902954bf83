import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hyperflow.errors import DataError, DimensionError, FormatError, TruncationError
from hyperflow.spectral import (
    CubeStream, SpectralCube, WavelengthGrid, decode_cube, default_grid, encode_cube,
    load_cube, resample_spectrum, store_cube,
)


def grid_of(n, start=400.0, step=10.0):
    return WavelengthGrid(start + step * np.arange(n), np.full(n, step))


def test_grid_invariants():
    with pytest.raises(DataError):
        WavelengthGrid([500, 400], [1, 1])
    with pytest.raises(DataError):
        WavelengthGrid([400, 500], [1, 0])
    with pytest.raises(DataError):
        WavelengthGrid([], [])
    with pytest.raises(DimensionError):
        WavelengthGrid([400, 500], [1])


def test_default_grid_spans_visible_range():
    g = default_grid()
    assert g.size == 204
    assert g.wavelengths[0] == 350.0 and g.wavelengths[-1] == 750.0


def test_cube_rejects_negative_and_nonfinite():
    g = grid_of(2)
    with pytest.raises(DataError):
        SpectralCube(np.array([[[1.0, -0.1]]]), g)
    with pytest.raises(DataError):
        SpectralCube(np.array([[[1.0, np.nan]]]), g)
    with pytest.raises(DimensionError):
        SpectralCube(np.ones((2, 2, 3)), g)


def test_single_sample_file_is_40_bytes(tmp_path):
    cube = SpectralCube(np.ones((1, 1, 1)), WavelengthGrid([550.0], [1.0]))
    path = tmp_path / "one.hsc"
    store_cube(cube, path)
    raw = path.read_bytes()
    assert len(raw) == 4 + 12 + 4 + 8 + 8 + 4
    assert raw[:4] == b"HSC1"
    # hand-built reference bytes
    ref = b"HSC1" + struct.pack("<4I", 1, 1, 1, 0) + struct.pack("<2d", 550.0, 1.0) + struct.pack("<f", 1.0)
    assert raw == ref


def test_zero_cube_round_trip(tmp_path):
    cube = SpectralCube(np.zeros((2, 2, 3)), grid_of(3))
    store_cube(cube, tmp_path / "z.hsc")
    back = load_cube(tmp_path / "z.hsc")
    assert back.shape == (2, 2, 3) and not back.data.any()


def test_band_order_is_pixel_interleaved():
    data = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4)
    buf = encode_cube(SpectralCube(data, grid_of(4)))
    payload = np.frombuffer(buf[20 + 16 * 4:], dtype="<f4")
    assert np.array_equal(payload, np.arange(24, dtype=np.float32))


def test_bad_magic_and_truncation(tmp_path):
    buf = encode_cube(SpectralCube(np.ones((2, 2, 3)), grid_of(3)))
    with pytest.raises(FormatError):
        decode_cube(b"XXXX" + buf[4:])
    with pytest.raises(TruncationError):
        decode_cube(buf[:-1])
    with pytest.raises(TruncationError):
        decode_cube(buf + b"\0")
    neg = bytearray(buf)
    neg[-4:] = struct.pack("<f", -1.0)
    with pytest.raises(DataError):
        decode_cube(bytes(neg))


def test_identical_cubes_identical_bytes(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.random((3, 4, 5))
    a, b = SpectralCube(data, grid_of(5)), SpectralCube(data.copy(), grid_of(5))
    store_cube(a, tmp_path / "a.hsc")
    store_cube(b, tmp_path / "b.hsc")
    assert (tmp_path / "a.hsc").read_bytes() == (tmp_path / "b.hsc").read_bytes()


@given(
    h=st.integers(1, 4), w=st.integers(1, 4), b=st.integers(1, 6),
    seed=st.integers(0, 2**31),
)
def test_round_trip_property(h, w, b, seed):
    rng = np.random.default_rng(seed)
    vals = (rng.random((h, w, b)) * 10).astype(np.float32)
    grid = WavelengthGrid(np.cumsum(rng.uniform(0.5, 5, b)) + 300, rng.uniform(0.1, 3, b))
    cube = SpectralCube(vals, grid)
    back = decode_cube(encode_cube(cube))
    assert back.identical(cube)


def test_resample_examples():
    src = WavelengthGrid([400.0, 500.0], [1.0, 1.0])
    assert resample_spectrum([0.0, 2.0], src, WavelengthGrid([450.0], [1.0]))[0] == 1.0
    assert resample_spectrum([0.0, 2.0], src, WavelengthGrid([350.0], [1.0]))[0] == 0.0
    assert resample_spectrum([0.0, 2.0], src, WavelengthGrid([501.0], [1.0]))[0] == 0.0
    v = np.array([3.0, 4.0])
    assert np.array_equal(resample_spectrum(v, src, src), v)


@given(
    f=arrays(np.float64, 7, elements=st.floats(-10, 10)),
    g=arrays(np.float64, 7, elements=st.floats(-10, 10)),
    a=st.floats(-5, 5), b=st.floats(-5, 5),
)
def test_resample_linear(f, g, a, b):
    src = grid_of(7, 400, 50)
    dst = WavelengthGrid(np.linspace(380, 720, 13), np.ones(13))
    lhs = resample_spectrum(a * f + b * g, src, dst)
    rhs = a * resample_spectrum(f, src, dst) + b * resample_spectrum(g, src, dst)
    scale = max(1.0, np.abs(a * f).max() + np.abs(b * g).max())
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * scale)


def test_stream_replays_and_checks_geometry():
    g = grid_of(2)
    cubes = [SpectralCube(np.full((2, 2, 2), t, dtype=float), g) for t in range(3)]
    s = CubeStream.from_cubes(cubes)
    assert [t for t, _ in s] == [0, 1, 2]
    assert [t for t, _ in s] == [0, 1, 2]
    bad = CubeStream(lambda: iter([cubes[0], SpectralCube(np.zeros((1, 2, 2)), g)]), 2, 2, g)
    with pytest.raises(DimensionError):
        list(bad)
