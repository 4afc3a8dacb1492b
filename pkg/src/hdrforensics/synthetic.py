"""Synthetic scenes and a simple camera for desk-scale corpora.

A scene is a random linear radiance map: smooth illumination, piecewise
reflectance with fine texture, and a few bright light sources, spanning
several orders of magnitude. :func:`render_ldr` photographs it with shot
and read noise, display gamma and 8-bit quantization, so fused brackets
(mHDR) and single exposures expanded by an iTMO (iHDR) come from the
same camera model. :func:`toy_corpus` assembles a labelled corpus from
these pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import LUMA_WEIGHTS, Label, fuse_exposures
from .hdr_io import HdrImage, LdrImage, decode_rgbe, encode_rgbe
from .itmo import ItmoParams, Operator, apply_itmo

BRACKET_STOPS = (-3.0, 0.0, 3.0)
MID_GRAY = 0.18
# plausible median scene luminances, dim interior to daylight
SCENE_MEDIAN_RANGE = (0.1, 1000.0)


def _upsample_matrix(n_in: int, n_out: int) -> np.ndarray:
    pos = np.linspace(0, n_in - 1, n_out)
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 2) if n_in > 1 else np.zeros(n_out, int)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] = 1 - frac
    if n_in > 1:
        m[np.arange(n_out), lo + 1] += frac
    return m


def smooth_field(shape: tuple[int, int], cell: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance-ish random field with correlation length about ``cell`` pixels."""
    h, w = shape
    gh, gw = max(2, int(math.ceil(h / cell)) + 1), max(2, int(math.ceil(w / cell)) + 1)
    coarse = rng.standard_normal((gh, gw))
    field = _upsample_matrix(gh, h) @ coarse @ _upsample_matrix(gw, w).T
    return field / max(field.std(), 1e-12)


def random_scene(rng: np.random.Generator, size: tuple[int, int] = (256, 256)) -> HdrImage:
    """Random radiance map with a dynamic range of roughly 3 to 5 orders of magnitude."""
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    log_l = smooth_field(size, rng.uniform(0.3, 0.8) * max(h, w), rng) * rng.uniform(0.4, 0.9)

    refl = np.full(size, rng.uniform(-1.0, -0.3))
    tint = np.ones((h, w, 3)) * rng.uniform(0.8, 1.2, 3)
    for _ in range(int(rng.integers(4, 10))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.05, 0.3) * h, rng.uniform(0.05, 0.3) * w
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        refl[mask] = rng.uniform(-1.8, 0.0)
        tint[mask] = rng.uniform(0.6, 1.4, 3)
    texture = smooth_field(size, rng.uniform(1.5, 6.0), rng) * rng.uniform(0.03, 0.15)
    log_l = log_l + refl + texture

    # cast shadow band and light sources stretch the range
    if rng.random() < 0.7:
        angle = rng.uniform(0, math.pi)
        d = (xx - rng.uniform(0, w)) * math.cos(angle) + (yy - rng.uniform(0, h)) * math.sin(angle)
        log_l = log_l - rng.uniform(1.0, 2.0) / (1 + np.exp(-d / rng.uniform(2, 10)))
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(0.02, 0.08) * max(h, w)
        r2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / radius ** 2
        log_l = np.logaddexp(log_l * math.log(10), (rng.uniform(2.0, 3.5) - r2) * math.log(10)) / math.log(10)

    radiance = (10.0 ** log_l)[..., None] * tint
    lum = radiance @ np.array(LUMA_WEIGHTS)
    radiance *= 1.0 / np.median(lum)
    return HdrImage(radiance.astype(np.float32))


def auto_exposure(img: HdrImage) -> float:
    """Exposure time that maps the median luminance to 18% gray."""
    lum = img.data.astype(np.float64) @ np.array(LUMA_WEIGHTS)
    return MID_GRAY / float(np.median(lum))


def render_ldr(img: HdrImage, exposure: float, rng: np.random.Generator, gamma: float = 2.2,
               shot_noise: float = 0.01, read_noise: float = 0.002) -> LdrImage:
    """Photograph a radiance map: noise, clipping, display gamma, 8-bit quantization."""
    e = img.data.astype(np.float64) * exposure
    sigma = np.sqrt(shot_noise ** 2 * np.clip(e, 0, 1) + read_noise ** 2)
    e = e + rng.standard_normal(e.shape) * sigma
    v = np.clip(e, 0.0, 1.0) ** (1.0 / gamma)
    return LdrImage(np.clip(np.round(v * 255.0), 0, 255).astype(np.uint8))


def exposure_stack(img: HdrImage, rng: np.random.Generator,
                   stops: tuple[float, ...] = BRACKET_STOPS) -> tuple[list[LdrImage], list[float]]:
    """Bracketed exposures around the auto exposure, in stops."""
    base = auto_exposure(img)
    times = [base * 2.0 ** s for s in stops]
    return [render_ldr(img, t, rng) for t in times], times


def scale_to_median(img: HdrImage, median: float) -> HdrImage:
    """Rescale so the median luminance equals ``median``."""
    lum = img.data.astype(np.float64) @ np.array(LUMA_WEIGHTS)
    current = float(np.median(lum))
    if current <= 0:
        current = float(lum.mean()) or 1.0
    return HdrImage((img.data.astype(np.float64) * (median / current)).astype(np.float32))


# ---------------------------------------------------------------------------
# toy corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyImage:
    name: str
    label: Label
    tag: str
    image: HdrImage


def toy_corpus(seed: int, n_mhdr: int = 60, n_ihdr_per_operator: int = 15,
               size: tuple[int, int] = (256, 256), params: dict | None = None,
               median_range: tuple[float, float] = SCENE_MEDIAN_RANGE, rgbe: bool = True) -> list[ToyImage]:
    """Fused bracket stacks and iTMO-expanded single exposures of independent random scenes.

    Every scene gets an absolute median luminance drawn log-uniformly from
    ``median_range``. Fusion keeps that scale; the single exposure is
    auto-exposed, so an iHDR image lives on its operator's output scale.
    ``params`` maps operator names to :class:`ItmoParams` overrides. With
    ``rgbe`` every image takes a Radiance encode/decode round trip, as if
    stored on disk.
    """
    out = []
    ops = list(Operator)
    lo, hi = math.log10(median_range[0]), math.log10(median_range[1])
    total = n_mhdr + n_ihdr_per_operator * len(ops)
    for i in range(total):
        rng = np.random.default_rng([seed, i])
        scene = scale_to_median(random_scene(rng, size), 10.0 ** rng.uniform(lo, hi))
        if i < n_mhdr:
            stack, times = exposure_stack(scene, rng)
            img, label, tag = fuse_exposures(stack, times), Label.MHDR, "FUSION"
            name = f"fused_{i:04d}"
        else:
            j = i - n_mhdr
            op = ops[j % len(ops)]
            p = ItmoParams(operator=op, **(params or {}).get(op.value, {}))
            img = apply_itmo(render_ldr(scene, auto_exposure(scene), rng), p)
            label, tag, name = Label.IHDR, op.value, f"{op.value.lower()}_{j:04d}"
        if rgbe:
            img = decode_rgbe(encode_rgbe(img))
        out.append(ToyImage(name, label, tag, img))
    return out
