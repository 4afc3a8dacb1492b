"""Inverse tone mapping operators that expand one 8-bit image into HDR.

Four parameterized families: a global power-law expansion, an HVS-style
sigmoid, an expand map that boosts blurred highlight regions, and a
piecewise operator that deepens shadows and boosts highlights. They are
approximations of the published operators of each family, with every
knob exposed through :class:`ItmoParams`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .dataset import LUMA_WEIGHTS
from .hdr_io import HdrImage, LdrImage

SHADOW_KNEE = 0.05
BLEND_WIDTH = 0.02


class Operator(str, enum.Enum):
    LINEAR = "LINEAR"
    SIGMOID = "SIGMOID"
    EXPAND_MAP = "EXPAND_MAP"
    DUAL_REGION = "DUAL_REGION"


@dataclass(frozen=True)
class ItmoParams:
    operator: Operator = Operator.LINEAR
    gamma: float = 2.2
    l_max: float = 1000.0
    highlight_threshold: float = 0.92
    boost: float = 4.0
    sigma_s: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "operator", Operator(self.operator))
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.l_max > 0:
            raise ValueError("l_max must be positive")
        if not 0 < self.highlight_threshold < 1:
            raise ValueError("highlight_threshold must lie in (0, 1)")
        if not self.boost >= 1:
            raise ValueError("boost must be >= 1")
        if not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")


def _codes(img: LdrImage) -> np.ndarray:
    return img.data.astype(np.float64) / 255.0


def itmo_linear(img: LdrImage, p: ItmoParams = ItmoParams()) -> HdrImage:
    return HdrImage((p.l_max * _codes(img) ** p.gamma).astype(np.float32))


def sigmoid_curve(n: np.ndarray, p: ItmoParams) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    return p.l_max * p.sigma_s * n / (1.0 + p.sigma_s - n)


def itmo_sigmoid(img: LdrImage, p: ItmoParams = ItmoParams(operator=Operator.SIGMOID)) -> HdrImage:
    return HdrImage(sigmoid_curve(_codes(img) ** p.gamma, p).astype(np.float32))


# ---------------------------------------------------------------------------
# expand map
# ---------------------------------------------------------------------------

def _box_sizes(sigma: float, passes: int = 3) -> list[int]:
    """Odd box widths whose repeated application approximates a Gaussian of ``sigma``."""
    ideal = math.sqrt(12.0 * sigma * sigma / passes + 1.0)
    lower = int(math.floor(ideal))
    if lower % 2 == 0:
        lower -= 1
    upper = lower + 2
    m = round((12 * sigma * sigma - passes * lower * lower - 4 * passes * lower - 3 * passes) / (-4 * lower - 4))
    return [lower if i < m else upper for i in range(passes)]


def _box_blur_axis(a: np.ndarray, radius: int, axis: int) -> np.ndarray:
    """Mean over the in-bounds part of a (2r+1) window; exact zeros stay zero."""
    if radius <= 0:
        return a
    a = np.moveaxis(a, axis, -1)
    n = a.shape[-1]
    cs = np.concatenate([np.zeros(a.shape[:-1] + (1,)), np.cumsum(a, axis=-1)], axis=-1)
    idx = np.arange(n)
    lo = np.clip(idx - radius, 0, n)
    hi = np.clip(idx + radius + 1, 0, n)
    out = (cs[..., hi] - cs[..., lo]) / (hi - lo)
    return np.moveaxis(out, -1, axis)


def gaussian_blur(a: np.ndarray, sigma: float) -> np.ndarray:
    """Three-pass separable box blur approximating a Gaussian."""
    out = np.asarray(a, dtype=np.float64)
    for width in _box_sizes(sigma):
        r = (width - 1) // 2
        out = _box_blur_axis(_box_blur_axis(out, r, 0), r, 1)
    return out


def highlight_mask(img: LdrImage, threshold: float) -> np.ndarray:
    n = _codes(img)
    lum = LUMA_WEIGHTS[0] * n[..., 0] + LUMA_WEIGHTS[1] * n[..., 1] + LUMA_WEIGHTS[2] * n[..., 2]
    return (lum >= threshold).astype(np.float64)


def expansion_map(img: LdrImage, p: ItmoParams) -> np.ndarray:
    """Blurred highlight mask in [0, 1]; blur sigma is max(w, h) / 50."""
    mask = highlight_mask(img, p.highlight_threshold)
    if not mask.any():
        return mask
    return np.clip(gaussian_blur(mask, max(img.width, img.height) / 50.0), 0.0, 1.0)


def itmo_expand_map(img: LdrImage, p: ItmoParams = ItmoParams(operator=Operator.EXPAND_MAP)) -> HdrImage:
    base = p.l_max * _codes(img) ** p.gamma
    gain = 1.0 + (p.boost - 1.0) * expansion_map(img, p)
    return HdrImage((base * gain[..., None]).astype(np.float32))


# ---------------------------------------------------------------------------
# dual region
# ---------------------------------------------------------------------------

def _blend(n: np.ndarray, knee: float) -> np.ndarray:
    """0 below the transition band around ``knee``, 1 above it, linear inside."""
    return np.clip((n - (knee - BLEND_WIDTH / 2)) / BLEND_WIDTH, 0.0, 1.0)


def dual_region_curve(n: np.ndarray, p: ItmoParams) -> np.ndarray:
    """Shadows scaled down by ``boost``, highlights up by ``boost``, mid-tones linear."""
    n = np.asarray(n, dtype=np.float64)
    linear = p.l_max * n
    t_shadow = _blend(n, SHADOW_KNEE)
    t_high = _blend(n, p.highlight_threshold)
    gain = (1.0 - t_shadow) / p.boost + t_shadow
    gain = gain * (1.0 - t_high) + p.boost * t_high
    return linear * gain


def itmo_dual_region(img: LdrImage, p: ItmoParams = ItmoParams(operator=Operator.DUAL_REGION)) -> HdrImage:
    return HdrImage(dual_region_curve(_codes(img) ** p.gamma, p).astype(np.float32))


_DISPATCH = {
    Operator.LINEAR: itmo_linear,
    Operator.SIGMOID: itmo_sigmoid,
    Operator.EXPAND_MAP: itmo_expand_map,
    Operator.DUAL_REGION: itmo_dual_region,
}


def apply_itmo(img: LdrImage, p: ItmoParams) -> HdrImage:
    return _DISPATCH[p.operator](img, p)
