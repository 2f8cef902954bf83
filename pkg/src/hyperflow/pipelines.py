"""End-to-end experiment flows shared by the CLI and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import vos
from .colorimetry import spectrum_to_xyz
from .encoder import TransmissionBank, mosaic_sample
from .metrics import ConfusionMatrix, confusion_matrix
from .reconstruct import DeltaSummary, decode_spectra, demosaic, spectral_difference
from .scene import general_library, general_scenes, mixture_scene, render_scene_video, turntable_scene
from .spectral import SpectralCube, default_grid
from .training import build_training_matrix, train_pca_bank


def hyperspectral_features(cube: SpectralCube, bank: TransmissionBank, layout=None,
                           sensor=None, workers: int = 1) -> np.ndarray:
    """Mosaic-encode then demosaic: the H x W x N_k features the optical front end delivers."""
    return demosaic(mosaic_sample(cube, bank, layout, sensor, workers)).data


def rgb_features(cube: SpectralCube) -> np.ndarray:
    """Ideal 3-channel colour camera: CMF-integrated XYZ at every pixel."""
    return spectrum_to_xyz(cube.data, grid=cube.grid)


def reconstruct_cube(cube: SpectralCube, bank: TransmissionBank, layout=None, sensor=None,
                     workers: int = 1) -> SpectralCube:
    return decode_spectra(demosaic(mosaic_sample(cube, bank, layout, sensor, workers)), bank)


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    truth: SpectralCube
    estimate: SpectralCube
    delta: np.ndarray
    summary: DeltaSummary
    bank: TransmissionBank


def reconstruction_experiment(size: int = 128, n_library: int = 9, n_components: int = 9,
                              noise: float = 0.01, library_seed: int = 3, train_seed: int = 1,
                              test_seed: int = 2, max_samples: int = 20000,
                              workers: int = 1) -> ReconstructionResult:
    """Train a bank on one mixture scene, reconstruct a disjoint one from the same library."""
    grid = default_grid()
    lib = general_library(grid, n=n_library, seed=library_seed).matrix()
    train = mixture_scene(lib, grid, size, size, seed=train_seed, noise=noise)
    test = mixture_scene(lib, grid, size, size, seed=test_seed, noise=noise)
    bank = train_pca_bank(build_training_matrix([train], max_samples, seed=0), n_components)
    est = reconstruct_cube(test, bank, workers=workers)
    delta, summary = spectral_difference(test, est)
    return ReconstructionResult(test, est, delta, summary, bank)


def default_bank(n_components: int = 9, seed: int = 0) -> TransmissionBank:
    """General-purpose bank learnt from smooth random reflectance scenes."""
    grid = default_grid()
    return train_pca_bank(build_training_matrix(general_scenes(grid), 20000, seed), n_components)


def zvos_state(n_channels: int, patch: int = 2, key_dim: Optional[int] = None,
               seed: int = 0, faithful: bool = True) -> vos.ZvosState:
    """Engine with a full-rank key projection unless ``key_dim`` is given."""
    in_dim = patch * patch * n_channels
    proj = vos.make_projection(in_dim, key_dim or in_dim, seed=seed)
    return vos.ZvosState(proj, patch, faithful=faithful)


def run_zvos(state: vos.ZvosState, frames) -> List[np.ndarray]:
    preds = []
    for t, f in enumerate(frames):
        pred, state = vos.zvos_step(state, f, t)
        preds.append(pred)
    return preds


@dataclass(frozen=True, eq=False)
class PipelineScore:
    name: str
    confusion: ConfusionMatrix
    class_names: list

    @property
    def per_class_error(self) -> np.ndarray:
        return self.confusion.per_class_error


def _score_pipeline(name, featurize, train, test, n_classes, patch, epochs, seed, class_names):
    ftr = [featurize(f.cube) for f in train]
    fte = [featurize(f.cube) for f in test]
    state = zvos_state(ftr[0].shape[2], patch, seed=seed)
    x, y = vos.collect_zvos_training(state, ftr, [f.mask for f in train])
    state.readout = vos.train_readout(x, y, epochs=epochs, learning_rate=0.5, seed=seed,
                                      n_classes=n_classes)
    cm = ConfusionMatrix(np.zeros((n_classes, n_classes), dtype=np.int64))
    for pred, frame in zip(run_zvos(state, fte), test):
        cm = cm + confusion_matrix(pred, frame.mask, n_classes)
    return PipelineScore(name, cm, class_names)


def metamer_experiment(size: int = 96, n_test: int = 50, n_train: int = 12, omega: float = 3.0,
                       noise: float = 0.01, separation: float = 1.0, patch: int = 2,
                       epochs: int = 800, train_seed: int = 101, test_seed: int = 7,
                       seed: int = 0, bank: TransmissionBank | None = None, pipelines=("hs", "rgb")):
    """Zero-shot segmentation of the turntable scene through both front ends.

    ``hs`` is the 9-encoder mosaic pipeline on the full 204-band scene,
    ``rgb`` the same architecture fed with XYZ tristimulus values.
    Returns a dict of PipelineScore keyed by pipeline name.
    """
    desc = turntable_scene(size, omega=omega, noise=noise, separation=separation)
    names = [desc.class_names[i] for i in range(desc.n_classes)]
    train = list(render_scene_video(desc, n_train, seed=train_seed))
    test = list(render_scene_video(desc, n_test, seed=test_seed))
    out = {}
    if "hs" in pipelines:
        bank = bank or default_bank()
        out["hs"] = _score_pipeline("hs", lambda c: hyperspectral_features(c, bank), train, test,
                                    desc.n_classes, patch, epochs, seed, names)
    if "rgb" in pipelines:
        out["rgb"] = _score_pipeline("rgb", rgb_features, train, test, desc.n_classes, patch,
                                     epochs, seed, names)
    return out
