"""Software model of a hyperspectral optical encoder and the video analysis built on it."""

from .spectral import CubeStream, SpectralCube, WavelengthGrid, default_grid, load_cube, store_cube
from .encoder import MosaicLayout, SensorModel, TransmissionBank, mosaic_sample
from .training import build_training_matrix, project_physical, train_pca_bank
from .reconstruct import decode_spectra, demosaic, spectral_difference
from .bench import data_rate

__version__ = "0.1.0"

__all__ = [
    "CubeStream", "SpectralCube", "WavelengthGrid", "default_grid", "load_cube", "store_cube",
    "MosaicLayout", "SensorModel", "TransmissionBank", "mosaic_sample",
    "build_training_matrix", "project_physical", "train_pca_bank",
    "decode_spectra", "demosaic", "spectral_difference", "data_rate",
]
