"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from hyperflow import vos
from hyperflow.bench import data_rate
from hyperflow.cli import run
from hyperflow.colorimetry import spectrum_to_xyz, xyz_to_xy
from hyperflow.encoder import TransmissionBank
from hyperflow.mapping import FeaturePointSet, cluster_map, kmeans
from hyperflow.metrics import iou
from hyperflow.pipelines import metamer_experiment, reconstruction_experiment
from hyperflow.reconstruct import FeatureFrame, decode_spectra
from hyperflow.scene import fruit_library
from hyperflow.spectral import SpectralCube, WavelengthGrid
from hyperflow.training import TrainingMatrix, train_pca_bank
from oracles import align_signs, finite_difference_grad, gram_pca, lloyd, normal_equations_decode


class Criterion:
    """Times a block and records one PASS/FAIL line whatever the outcome."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.detail = ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        ok = exc_type is None and dt < self.budget
        line = (f"criterion {self.number}: {'PASS' if ok else 'FAIL'}  {self.title}  "
                f"[{dt:.2f}s / {self.budget:g}s] {self.detail}")
        print(line)
        ACCEPTANCE_LINES.append(line)
        if exc_type is None:
            assert dt < self.budget, f"runtime {dt:.1f}s over budget {self.budget}s"
        return False


def test_1_reconstruction_fidelity():
    with Criterion(1, "mean spectral difference < 3%", 60) as c:
        res = reconstruction_experiment(size=128, n_library=9, n_components=9, noise=0.01, workers=1)
        assert res.truth.shape == (128, 128, 204)
        c.detail = f"mean {res.summary.mean * 100:.3f}%"
        assert res.summary.mean < 0.03


def test_2_least_squares_oracle():
    with Criterion(2, "decode matches normal equations to 1e-8", 5) as c:
        rng = np.random.default_rng(20)
        worst = 0.0
        for _ in range(100):
            b = int(rng.integers(2, 17))
            nk = int(rng.integers(1, b + 1))
            grid = WavelengthGrid(400 + 5.0 * np.arange(b), rng.uniform(0.5, 2.0, b))
            bank = TransmissionBank(grid, rng.standard_normal((nk, b)))
            s = bank.weighted @ rng.random(b)
            got = decode_spectra(FeatureFrame(s[None, None, :]), bank, clamp=False).data[0, 0]
            ref = normal_equations_decode(bank.weighted, s)
            worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
        c.detail = f"worst relative {worst:.2e}"
        assert worst < 1e-8


def test_3_pca_oracle():
    with Criterion(3, "PCA bank matches Gram eigendecomposition to 1e-8", 5) as c:
        rng = np.random.default_rng(30)
        worst = 0.0
        for _ in range(20):
            b = int(rng.integers(3, 17))
            m = int(rng.integers(b + 1, 65))
            x = rng.random((b, m))
            n = int(rng.integers(1, min(b, 9) + 1))
            grid = WavelengthGrid(400 + 5.0 * np.arange(b), np.ones(b))
            bank = train_pca_bank(TrainingMatrix(x, grid), n)
            ref, _ = gram_pca(x, n)
            worst = max(worst, np.abs(align_signs(ref, bank.weights) - bank.weights).max())
        c.detail = f"worst abs {worst:.2e}"
        assert worst < 1e-8


def test_4_attention_invariants():
    with Criterion(4, "affinity and QMCM rows sum to 1, projections in bounds", 10) as c:
        rng = np.random.default_rng(40)
        worst = 0.0
        for _ in range(1000):
            ck = int(rng.integers(1, 9))
            hq, wq = rng.integers(1, 5, 2)
            nm = int(rng.integers(1, 3))
            kq = vos.KeyMap(rng.standard_normal((hq, wq, ck)))
            km = [vos.KeyMap(rng.standard_normal((*rng.integers(1, 5, 2), ck))) for _ in range(nm)]
            W = vos.affinity(kq, km, temperature=float(rng.uniform(0.1, 50)))
            worst = max(worst, np.abs(W.matrix.sum(axis=1) - 1).max())
            vm = rng.standard_normal((W.matrix.shape[1], 3))
            vq = vos.project_mask(W, vm).flat
            assert np.all(vq >= vm.min(axis=0) - 1e-9) and np.all(vq <= vm.max(axis=0) + 1e-9)
            kin = vos.KeyMap(rng.standard_normal((hq, wq, ck)))
            sm = vos.qmcm_softmax(kin, kq)
            worst = max(worst, np.abs(sm.sum(axis=1) - 1).max())
        c.detail = f"worst row-sum deviation {worst:.1e}"
        assert worst < 1e-6


def _blob(h, w, top, left, size, rng):
    f = 0.1 + 0.02 * rng.random((h, w, 3))
    f[top:top + size, left:left + size] = [0.9, 0.2, 0.5]
    m = np.zeros((h, w), dtype=np.uint8)
    m[top:top + size, left:left + size] = 1
    return f, m


def test_5_mask_propagation():
    with Criterion(5, "OVOS identity IoU >= 0.99, translation IoU >= 0.95", 10) as c:
        rng = np.random.default_rng(50)
        patch = 2
        proj = vos.make_projection(patch * patch * 3, patch * patch * 3, seed=0)
        f, m = _blob(32, 32, 8, 8, 10, rng)
        _, st = vos.ovos_step(vos.OvosState(proj, patch, 2), f, 0, m)
        out, _ = vos.ovos_step(st, f, 1)
        same = iou(out == 1, m == 1)
        f1, m1 = _blob(32, 32, 8, 12, 10, rng)
        out1, _ = vos.ovos_step(st, f1, 1)
        moved = iou(out1[2:-2, 2:-2] == 1, m1[2:-2, 2:-2] == 1)
        c.detail = f"identity {same:.3f}, translation {moved:.3f}"
        assert same >= 0.99 and moved >= 0.95


def test_6_metamer_discrimination():
    with Criterion(6, "hyperspectral < 5% every class, RGB > 40% on a metamer", 300) as c:
        lib = fruit_library()
        a, b = lib["grape_natural"], lib["grape_artificial"]
        xy_a, xy_b = xyz_to_xy(spectrum_to_xyz(a, grid=lib.grid)), xyz_to_xy(spectrum_to_xyz(b, grid=lib.grid))
        chroma = float(np.linalg.norm(xy_a - xy_b))
        l2 = float(np.linalg.norm(a - b))
        scores = metamer_experiment(size=96, n_test=50)
        hs, rgb = scores["hs"].per_class_error, scores["rgb"].per_class_error
        names = scores["hs"].class_names
        metamers = [names.index("grape_natural"), names.index("grape_artificial")]
        c.detail = (f"chroma {chroma:.1e}, L2 {l2:.3f}, hs max {np.nanmax(hs) * 100:.1f}%, "
                    f"rgb metamer max {rgb[metamers].max() * 100:.1f}%")
        assert chroma < 1e-6 and l2 >= 0.1
        assert np.all(hs < 0.05)
        assert rgb[metamers].max() > 0.40


def test_7_gradient_check():
    with Criterion(7, "readout gradients match finite differences to 1e-4", 5) as c:
        rng = np.random.default_rng(70)
        worst = 0.0
        for _ in range(50):
            n, d, k = rng.integers(2, 12), rng.integers(1, 6), rng.integers(2, 5)
            x = rng.standard_normal((n, d))
            y = rng.integers(0, k, n)
            w, bias = rng.standard_normal((d, k)), rng.standard_normal(k)
            _, gw, gb = vos.readout_loss_and_grad(w, bias, x, y)
            fw, fb = finite_difference_grad(w, bias, x, y)
            g, f = np.concatenate([gw.ravel(), gb]), np.concatenate([fw.ravel(), fb])
            worst = max(worst, np.linalg.norm(g - f) / np.linalg.norm(f))
        c.detail = f"worst relative {worst:.1e}"
        assert worst < 1e-4


def test_8_kmeans():
    with Criterion(8, "Lloyd equivalence, monotone inertia, 4-material recovery", 10) as c:
        rng = np.random.default_rng(80)
        for run_id in range(20):
            x = rng.random((10, int(rng.integers(1, 4))))
            k = int(rng.integers(2, 5))
            res = kmeans(FeaturePointSet(x), k, seed=run_id, tol=0.0, max_iter=20)
            ref = lloyd(x, res.initial_centroids, res.n_iter)
            assert all(np.array_equal(a, b) for a, b in zip(res.label_history, ref))
            assert np.all(np.diff(res.inertia_history) <= 1e-12)
        spectra = rng.random((4, 24))
        data = np.zeros((20, 20, 24))
        truth = np.zeros((20, 20), dtype=int)
        for q in range(4):
            ys, xs = slice(10 * (q // 2), 10 * (q // 2) + 10), slice(10 * (q % 2), 10 * (q % 2) + 10)
            data[ys, xs] = spectra[q]
            truth[ys, xs] = q
        grid = WavelengthGrid(400 + 10.0 * np.arange(24), np.full(24, 10.0))
        labels = cluster_map(SpectralCube(data, grid), k=4, seed=0).labels
        pairs = set(zip(truth.ravel().tolist(), labels.ravel().tolist()))
        c.detail = f"{len(pairs)} truth/cluster pairs"
        assert len(pairs) == 4 and len({p[1] for p in pairs}) == 4


def test_9_data_rate():
    with Criterion(9, "data-rate arithmetic", 1) as c:
        four_k = data_rate(3840, 2160, 204, 12, 30).data_rate
        big = data_rate(12_000_000, 1, 204, 16, 30).data_rate
        c.detail = f"4K {four_k:,} b/s, 12 Mpx {big:.5e} b/s"
        assert four_k == 3840 * 2160 * 204 * 12 * 30 == 609_140_736_000
        assert big == 1_175_040_000_000
        assert abs(big - 1.2e12) / 1.2e12 < 0.03


def _tree_digest(root: Path, skip=()):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _all_pipelines(d: Path, workers: int, capsys):
    w = ["--workers", str(workers), "--seed", "5"]
    steps = [
        ["synth", "--out", str(d / "mix"), "--size", "24", "--frames", "2"],
        ["synth", "--scene", "turntable", "--out", str(d / "tt"), "--frames", "4", "--size", "24"],
        ["train-bank", "--inputs", str(d / "mix"), "--out", str(d / "bank.txt")],
        ["encode", "--input", str(d / "mix/cube_0000.hsc"), "--bank", str(d / "bank.txt"),
         "--out", str(d / "raw.npy")],
        ["reconstruct", "--raw", str(d / "raw.npy"), "--bank", str(d / "bank.txt"),
         "--out", str(d / "rec.hsc"), "--reference", str(d / "mix/cube_0000.hsc")],
        ["cluster", "--input", str(d / "tt/cube_0000.hsc"), "--out", str(d / "cl")],
        ["ovos", "--frames", str(d / "tt"), "--bank", str(d / "bank.txt"),
         "--seed-mask", str(d / "tt/mask_0000.pgm"), "--out", str(d / "ov")],
        ["ovos", "--frames", str(d / "tt"), "--bank", str(d / "bank.txt"),
         "--anchor", "4,4", "--out", str(d / "ov2")],
        ["train-readout", "--frames", str(d / "tt"), "--bank", str(d / "bank.txt"),
         "--out", str(d / "ro.json"), "--epochs", "40"],
        ["zvos", "--frames", str(d / "tt"), "--readout", str(d / "ro.json"), "--bank", str(d / "bank.txt"),
         "--masks", str(d / "tt"), "--out", str(d / "zv")],
        ["render-rgb", "--input", str(d / "tt/cube_0001.hsc"), "--out", str(d / "rgb.ppm")],
        ["rate", "--csv", str(d / "rate.csv")],
    ]
    summaries = []
    for s in steps:
        assert run(s + w) == 0, s
        summaries.append(capsys.readouterr().out.strip().splitlines()[-1].replace(str(d), "<run>"))
    assert run(["bench", "--repetitions", "2", "--size", "16", "--bands", "16"] + w) == 0

    bench = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    return _tree_digest(d), summaries, bench["digest"]


def test_10_cli_determinism(tmp_path, capsys):
    with Criterion(10, "CLI reruns byte-identical across --workers", 120) as c:
        results = [_all_pipelines(tmp_path / f"run{i}", w, capsys) for i, w in enumerate([1, 1, 3])]
        c.detail = f"tree digest {results[0][0][:12]}"
        for r in results[1:]:
            assert r[0] == results[0][0]
            assert r[1] == results[0][1]
            assert r[2] == results[0][2]
