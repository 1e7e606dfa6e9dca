"""Synthetic and file-backed sequence tasks."""

from .adding import BASELINE_MSE, adding_problem
from .base import DatasetFormatError, SequenceBatch, load_dataset, save_dataset
from .fhn import FhnConfig, fhn_generate, fhn_rhs, fhn_rk4_reference, fhn_trajectories
from .mnist import mnist_load_idx, read_idx_images, read_idx_labels, write_idx
from .noisepad import noise_padded_classification
from .rk45 import StiffnessError, Trajectory, rk45_integrate, rk4_fixed

__all__ = [
    "BASELINE_MSE", "adding_problem", "DatasetFormatError", "SequenceBatch", "load_dataset",
    "save_dataset", "FhnConfig", "fhn_generate", "fhn_rhs", "fhn_rk4_reference",
    "fhn_trajectories", "mnist_load_idx", "read_idx_images", "read_idx_labels", "write_idx",
    "noise_padded_classification", "StiffnessError", "Trajectory", "rk45_integrate", "rk4_fixed",
]
