import numpy as np

from hyperflow import plotting
from hyperflow.mapping import cluster_map
from hyperflow.metrics import confusion_matrix
from hyperflow.reconstruct import spectral_difference
from hyperflow.spectral import SpectralCube, WavelengthGrid
from hyperflow.encoder import TransmissionBank


def test_figures_written_and_reproducible(tmp_path):
    rng = np.random.default_rng(0)
    g = WavelengthGrid.uniform(400, 700, 6)
    a = SpectralCube(rng.random((8, 8, 6)) + 0.1, g)
    b = SpectralCube(a.data * (1 + 0.02 * rng.random((8, 8, 6))), g)
    _, summ = spectral_difference(a, b)
    cm = cluster_map(a, k=3)
    conf = confusion_matrix(rng.integers(0, 3, 20), rng.integers(0, 3, 20), 3)
    bank = TransmissionBank(g, rng.standard_normal((3, 6)))
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        plotting.plot_delta_histogram(summ, d / "h.png")
        plotting.plot_cluster_spectra(cm, d / "c.png")
        plotting.plot_label_map(cm.labels, d / "l.png")
        plotting.plot_confusion(conf, d / "m.png", ["x", "y", "z"])
        plotting.plot_chromaticity([[0.3, 0.3]], d / "x.png", ["p"])
        plotting.plot_bank(bank, d / "k.png")
    for name in ("h", "c", "l", "m", "x", "k"):
        pa, pb = (tmp_path / "a" / f"{name}.png").read_bytes(), (tmp_path / "b" / f"{name}.png").read_bytes()
        assert pa[:8] == b"\x89PNG\r\n\x1a\n" and pa == pb
