import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyperflow.encoder import MosaicLayout, RawFrame, TransmissionBank, encode_all, mosaic_sample
from hyperflow.errors import DimensionError
from hyperflow.reconstruct import (
    FeatureFrame, decode_spectra, demosaic, spectral_difference, write_histogram_csv,
)
from hyperflow.spectral import SpectralCube, WavelengthGrid
from hyperflow.training import project_physical
from oracles import normal_equations_decode


def raw_frame(values, layout):
    return RawFrame(np.asarray(values, dtype=float), layout, "x")


def orthonormal_bank(rng, nk, b, grid=None):
    q, _ = np.linalg.qr(rng.standard_normal((b, nk)))
    grid = grid or WavelengthGrid(400 + np.arange(b), np.ones(b))
    return TransmissionBank(grid, q.T)


def test_constant_channels_stay_constant():
    layout = MosaicLayout.default(9)
    vals = np.array([10.0 * layout.tile[i % 3, j % 3] + 1 for i in range(11) for j in range(13)]).reshape(11, 13)
    feats = demosaic(raw_frame(vals, layout)).data
    for k in range(9):
        assert np.all(feats[:, :, k] == 10.0 * k + 1)


def test_sampled_pixels_copied_exactly(rng):
    layout = MosaicLayout.default(9)
    vals = rng.random((12, 12))
    feats = demosaic(raw_frame(vals, layout)).data
    kmap = layout.index_map(12, 12)
    for i in range(12):
        for j in range(12):
            assert feats[i, j, kmap[i, j]] == vals[i, j]


def test_affine_ramp_reproduced_in_interior():
    layout = MosaicLayout.default(9)
    ii, jj = np.meshgrid(np.arange(20), np.arange(22), indexing="ij")
    ramp = 0.7 * ii - 1.3 * jj + 2.0
    feats = demosaic(raw_frame(ramp, layout)).data
    for k in range(9):
        a, b = divmod(k, 3)
        # interior: inside the hull of channel k's lattice
        last_i = a + 3 * ((20 - 1 - a) // 3)
        last_j = b + 3 * ((22 - 1 - b) // 3)
        sl = (slice(a, last_i + 1), slice(b, last_j + 1))
        assert np.allclose(feats[sl][..., k], ramp[sl], atol=1e-10)


def test_single_sample_footprint():
    layout = MosaicLayout.default(9)
    vals = np.zeros((15, 15))
    vals[7, 8] = 1.0  # tile position (1, 2): encoder 5
    feats = demosaic(raw_frame(vals, layout)).data[:, :, 5]
    nz = np.argwhere(feats != 0)
    assert nz[:, 0].min() > 7 - 3 and nz[:, 0].max() < 7 + 3
    assert nz[:, 1].min() > 8 - 3 and nz[:, 1].max() < 8 + 3


def test_in_span_recovered_and_orthogonal_zero(rng):
    bank = orthonormal_bank(rng, 3, 10)
    s = bank.weights.T @ np.array([1.0, -0.5, 2.0])
    feats = FeatureFrame((bank.weighted @ s)[None, None, :])
    out = decode_spectra(feats, bank, clamp=False).data[0, 0]
    assert np.allclose(out, s, rtol=1e-8, atol=1e-12)
    q, _ = np.linalg.qr(bank.weights.T, mode="complete")
    orth = q[:, 3]
    zero = decode_spectra(FeatureFrame((bank.weighted @ orth)[None, None, :]), bank, clamp=False)
    assert np.allclose(zero.data, 0.0, atol=1e-14)


def test_orthonormal_decode_is_weighted_sum(rng):
    bank = orthonormal_bank(rng, 4, 9)
    feats = rng.standard_normal(4)
    out = decode_spectra(FeatureFrame(feats[None, None, :]), bank, clamp=False).data[0, 0]
    assert np.allclose(out, bank.weights.T @ feats, atol=1e-12)


def test_matches_normal_equations(rng):
    b = 8
    grid = WavelengthGrid(400 + np.arange(b), rng.uniform(0.5, 2, b))
    bank = TransmissionBank(grid, rng.standard_normal((3, b)))
    s = rng.random(b)
    feats = bank.weighted @ s
    got = decode_spectra(FeatureFrame(feats[None, None, :]), bank, clamp=False).data[0, 0]
    ref = normal_equations_decode(bank.weighted, feats)
    assert np.allclose(got, ref, rtol=1e-8, atol=1e-12)


def test_physical_bank_decodes_in_span(rng):
    bank = project_physical(orthonormal_bank(rng, 3, 12))
    s = np.abs(bank.weights.T @ np.array([0.4, 0.2, 0.3]))
    proj = bank.weights.T @ np.linalg.lstsq(bank.weights.T, s, rcond=None)[0]
    out = decode_spectra(FeatureFrame((bank.weighted @ s)[None, None, :]), bank, clamp=False).data[0, 0]
    assert np.allclose(out, proj, atol=1e-10)


@given(seed=st.integers(0, 2**31))
def test_encode_decode_idempotent(seed):
    rng = np.random.default_rng(seed)
    grid = WavelengthGrid(400 + np.arange(10), rng.uniform(0.5, 2, 10))
    bank = TransmissionBank(grid, rng.standard_normal((4, 10)))
    cube = SpectralCube(rng.random((2, 2, 10)), grid)
    once = decode_spectra(FeatureFrame(encode_all(cube, bank)), bank, clamp=False)
    twice = decode_spectra(FeatureFrame(encode_all(once, bank)), bank, clamp=False)
    assert np.allclose(once.data, twice.data, rtol=1e-8, atol=1e-10)


def test_end_to_end_constant_in_span_cube(rng):
    bank = orthonormal_bank(rng, 9, 20)
    s = np.abs(bank.weights.T @ rng.random(9))
    s = bank.weights.T @ (bank.weights @ s)  # exactly in span
    s = np.maximum(s, 0)
    s = bank.weights.T @ (bank.weights @ s)
    data = np.broadcast_to(s, (9, 12, 20)).copy()
    cube = SpectralCube(data, bank.grid, check=False)
    raw = mosaic_sample(cube, bank)
    out = decode_spectra(demosaic(raw), bank, clamp=False)
    assert np.allclose(out.data, data, rtol=1e-6, atol=1e-9 * np.abs(s).max())


def test_channel_mismatch(rng):
    bank = orthonormal_bank(rng, 3, 6)
    with pytest.raises(DimensionError):
        decode_spectra(FeatureFrame(np.zeros((1, 1, 4))), bank)


def test_spectral_difference_examples(tmp_path):
    g = WavelengthGrid.uniform(400, 700, 5)
    rng = np.random.default_rng(0)
    a = SpectralCube(rng.random((3, 3, 5)) + 0.1, g)
    d, s = spectral_difference(a, a)
    assert not d.any() and s.mean == 0
    d, s = spectral_difference(a, SpectralCube(1.03 * a.data, g))
    assert np.allclose(d, 0.03, rtol=1e-12)
    z = a.data.copy()
    z[1, 2] = 0
    d, s = spectral_difference(SpectralCube(z, g), a)
    assert np.isnan(d[1, 2]) and s.n_excluded == 1 and s.n_valid == 8
    write_histogram_csv(s, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_low,bin_high,count" and len(lines) == 51
    assert sum(int(r.split(",")[2]) for r in lines[1:]) == 8
    with pytest.raises(DimensionError):
        spectral_difference(a, SpectralCube(np.ones((3, 3, 5)), WavelengthGrid.uniform(400, 600, 5)))


@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
def test_difference_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    g = WavelengthGrid.uniform(400, 700, 4)
    a, b = rng.random((2, 2, 4)) + 0.01, rng.random((2, 2, 4))
    d1, _ = spectral_difference(SpectralCube(a, g), SpectralCube(b, g))
    d2, _ = spectral_difference(SpectralCube(c * a, g), SpectralCube(c * b, g))
    assert np.allclose(d1, d2, rtol=1e-12)
