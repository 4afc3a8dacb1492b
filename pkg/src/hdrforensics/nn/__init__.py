"""Minimal numpy layer library with hand-written backpropagation."""

from . import functional
from .layers import (AvgPool, BatchNorm, Conv2d, Dense, Dropout, Flatten, GlobalAvgPool, Layer, MaxPool,
                     Network, ReLU, ResidualBlock, count_params, named_buffers, named_params)
from .optim import Adam, NumericalError
from .gradcheck import GradReport, grad_check

__all__ = [
    "functional", "AvgPool", "BatchNorm", "Conv2d", "Dense", "Dropout", "Flatten", "GlobalAvgPool", "Layer",
    "MaxPool", "Network", "ReLU", "ResidualBlock", "count_params", "named_buffers", "named_params", "Adam",
    "NumericalError", "GradReport", "grad_check",
]
