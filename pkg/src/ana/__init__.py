"""Quantized networks, closed-form noise smoothing of staircases, additive
noise annealing, and a constructive quantized universal approximator."""

from . import approximator, noise, quantizer, schedule
from .noise import NoiseModel, smoothed_derivative, smoothed_eval
from .quantizer import MultiStepFn, multistep_eval
from .schedule import AnnealPolicy

__all__ = [
    "AnnealPolicy",
    "MultiStepFn",
    "NoiseModel",
    "approximator",
    "multistep_eval",
    "noise",
    "quantizer",
    "schedule",
    "smoothed_derivative",
    "smoothed_eval",
]
