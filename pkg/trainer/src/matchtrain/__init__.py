"""Desk-scale trainer for the binarized sliding-window traffic model.

Trains with straight-through estimators so every activation the deployed
tables will binarize is binarized during the forward pass too, then
exports a model bundle (tables enumerated in float64 + raw weights +
thresholds + per-packet forest) in the engine's documented file format.
This package never imports the engine; the file formats are the contract.
"""

from .config import TrainConfig  # noqa: F401

__version__ = "0.1.0"
