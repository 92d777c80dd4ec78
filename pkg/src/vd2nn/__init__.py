"""Diffractive deep neural network simulator with misalignment-aware ("vaccinated") training."""

from vd2nn.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    RegimeError,
    VD2NNError,
)
from vd2nn.network import DiffractiveNetwork, DisplacementSample, NetworkGeometry, VaccinationSpec
from vd2nn.optics import ComplexField, GridSpec

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ComplexField",
    "ConfigError",
    "DataError",
    "DiffractiveNetwork",
    "DisplacementSample",
    "GridSpec",
    "NetworkGeometry",
    "RegimeError",
    "VD2NNError",
    "VaccinationSpec",
]
