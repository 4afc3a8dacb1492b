"""Central-difference gradient checking in float64."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        return f"{'PASS' if self.passed else 'FAIL'} max={self.max_error:.2e} ({parts})"


# Gradients smaller than this are round-off (e.g. a conv bias feeding batch
# norm, whose true gradient is exactly zero) and are compared absolutely.
SCALE_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two tensors' max magnitudes (at least SCALE_FLOOR)."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), SCALE_FLOOR)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = f()
        flat[i] = orig - step
        minus = f()
        flat[i] = orig
        g[i] = (plus - minus) / (2 * step)
    return grad


def grad_check(layer, x: np.ndarray, tolerance: float = 1e-4, step: float = 1e-3, seed: int = 0,
               train: bool = True, corrupt: Callable[[str, np.ndarray], np.ndarray] | None = None) -> GradReport:
    """Compare a layer's backward pass with central differences.

    The layer and input are promoted to float64. The scalar objective is
    ``sum(out * probe)`` with a fixed random ``probe``. ``corrupt`` may alter
    analytic gradients (name, grad) -> grad, as a negative control.
    """
    from .layers import named_params

    layer.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    buffers = _snapshot_buffers(layer)

    def forward():
        _restore_buffers(layer, buffers)
        return layer.forward(x, train=train, rng=np.random.default_rng(seed + 1))

    out = forward()
    probe = rng.standard_normal(out.shape)
    dx = layer.backward(probe)
    analytic = {"input": dx}
    for name, lyr, key in named_params(layer):
        analytic[f"{name}.{key}" if name else key] = lyr.grads[key].copy()

    def objective():
        return float(np.sum(forward() * probe))

    report = GradReport(tolerance=tolerance)
    for label, target in [("input", x)] + [
        (f"{name}.{key}" if name else key, lyr.params[key]) for name, lyr, key in named_params(layer)
    ]:
        a = analytic[label]
        if corrupt is not None:
            a = corrupt(label, a)
        report.errors[label] = relative_error(a, numeric_grad(objective, target, step))
    _restore_buffers(layer, buffers)
    return report


def check_function(f: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray,
                   tolerance: float = 1e-4, step: float = 1e-3) -> GradReport:
    """Gradient check for a scalar function returning (value, grad)."""
    x = np.array(x, dtype=np.float64)
    _, analytic = f(x)
    numeric = numeric_grad(lambda: f(x)[0], x, step)
    return GradReport({"input": relative_error(analytic, numeric)}, tolerance)


def _snapshot_buffers(layer):
    from .layers import named_buffers
    return [(lyr, key, lyr.buffers[key].copy()) for _, lyr, key in named_buffers(layer)]


def _restore_buffers(layer, snapshot):
    for lyr, key, value in snapshot:
        lyr.buffers[key][...] = value
