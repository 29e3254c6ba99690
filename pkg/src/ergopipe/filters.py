"""Baseline obfuscations: Gaussian blur, additive Gaussian noise and pixelation.

All transforms are deterministic in (image, spec). Results are rounded half
away from zero and clamped to [0, 255]. Noise is drawn from numpy's Philox4x64-10
counter-based generator, keyed by ``SeedSequence(seed)`` with the filter's 64-bit
seed, using ``Generator.standard_normal`` in row-major (H, W, C) sample order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ImageBuffer
from .imageio import write_image

DEFAULT_GRIDS = {
    "blur": (1.0, 2.0, 4.0, 8.0, 16.0),
    "noise": (10.0, 25.0, 50.0, 75.0, 100.0),
    "pixelate": (2.0, 4.0, 8.0, 16.0, 32.0),
}


class Method(str, Enum):
    BLUR = "blur"
    NOISE = "noise"
    PIXELATE = "pixelate"


@dataclass(frozen=True)
class FilterSpec:
    method: Method
    intensity: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.intensity < 0:
            raise ValueError("intensity must be >= 0")
        if self.method is Method.PIXELATE and self.intensity < 1:
            raise ValueError("pixelation block must be >= 1")

    def sort_key(self):
        return (self.method.value, self.intensity, self.seed)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    r = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-(r**2) / (2 * sigma**2))
    return k / k.sum()


def _convolve_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    radius = len(k) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (radius, radius)
    xp = np.pad(x, pad, mode="edge")
    out = np.zeros_like(x)
    n = x.shape[axis]
    for i, w in enumerate(k):
        out += w * np.take(xp, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img: ImageBuffer, sigma: float) -> ImageBuffer:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma < 1e-6:
        return ImageBuffer(img.data.copy())
    k = gaussian_kernel(sigma)
    x = img.data.astype(np.float64)
    x = _convolve_axis(_convolve_axis(x, k, 0), k, 1)
    return ImageBuffer(_to_u8(x))


def additive_noise(img: ImageBuffer, sigma: float, seed: int = 0) -> ImageBuffer:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return ImageBuffer(img.data.copy())
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.standard_normal(img.data.shape) * sigma
    return ImageBuffer(_to_u8(img.data.astype(np.float64) + noise))


def pixelate(img: ImageBuffer, block: int) -> ImageBuffer:
    block = int(block)
    if block < 1:
        raise ValueError("block must be >= 1")
    if block == 1:
        return ImageBuffer(img.data.copy())
    x = img.data.astype(np.float64)
    h, w, _ = x.shape
    rows = np.arange(0, h, block)
    cols = np.arange(0, w, block)
    sums = np.add.reduceat(np.add.reduceat(x, rows, axis=0), cols, axis=1)
    rh = np.diff(np.append(rows, h))
    cw = np.diff(np.append(cols, w))
    means = _to_u8(sums / (rh[:, None, None] * cw[None, :, None]))
    return ImageBuffer(np.repeat(np.repeat(means, rh, axis=0), cw, axis=1))


def apply(img: ImageBuffer, spec: FilterSpec) -> ImageBuffer:
    if spec.method is Method.BLUR:
        return gaussian_blur(img, spec.intensity)
    if spec.method is Method.NOISE:
        return additive_noise(img, spec.intensity, spec.seed)
    return pixelate(img, int(spec.intensity))


def default_specs(seed: int = 0, grids: dict | None = None) -> list[FilterSpec]:
    grids = DEFAULT_GRIDS if grids is None else grids
    return sorted((FilterSpec(Method(m), float(v), seed) for m, vals in grids.items() for v in vals),
                  key=FilterSpec.sort_key)


@dataclass(frozen=True)
class SweepRow:
    image_id: str
    method: str
    intensity: float
    seed: int
    output_path: str


def sweep(corpus: Iterable[tuple[str, ImageBuffer]], specs: Sequence[FilterSpec],
          out_dir=None, suffix: str = ".png") -> tuple[list[tuple[SweepRow, ImageBuffer]], list[SweepRow]]:
    """Apply every spec to every image.

    Returns ``(variants, manifest)`` ordered by (method, intensity, image id).
    When ``out_dir`` is given the variants are written there and the manifest
    ``output_path`` column points at them.
    """
    corpus = list(corpus)
    out = []
    for spec in sorted(specs, key=FilterSpec.sort_key):
        for image_id, img in sorted(corpus, key=lambda t: t[0]):
            variant = apply(img, spec)
            name = f"{spec.method.value}_{spec.intensity:g}/{image_id}{suffix}"
            path = ""
            if out_dir is not None:
                p = Path(out_dir) / name
                write_image(p, variant)
                path = str(p)
            row = SweepRow(image_id, spec.method.value, spec.intensity, spec.seed, path or name)
            out.append((row, variant))
    return out, [r for r, _ in out]
