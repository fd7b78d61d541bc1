"""Resizing and per-slice normalization of selected slices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume_io import Slice

MINMAX = "minmax"
ZSCORE = "zscore"


@dataclass(frozen=True)
class PreprocessConfig:
    target: tuple = (224, 224)
    normalization: str = MINMAX

    def __post_init__(self):
        h, w = self.target
        if h < 1 or w < 1:
            raise ValueError(f"target dims must be >= 1, got {self.target}")
        if self.normalization not in (MINMAX, ZSCORE):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        object.__setattr__(self, "target", (int(h), int(w)))


def _sample_positions(src: int, dst: int):
    # half-pixel centres: src = (dst + 0.5) * src/dst - 0.5, clamped
    coords = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, coords - lo


def resize_array(pixels: np.ndarray, target) -> np.ndarray:
    h, w = target
    if h < 1 or w < 1:
        raise ValueError(f"target dims must be >= 1, got {target}")
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape == (h, w):
        return pixels.copy()
    r0, r1, fr = _sample_positions(pixels.shape[0], h)
    c0, c1, fc = _sample_positions(pixels.shape[1], w)
    fr = fr[:, None]
    top = pixels[r0][:, c0] * (1 - fc) + pixels[r0][:, c1] * fc
    bottom = pixels[r1][:, c0] * (1 - fc) + pixels[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def resize_bilinear(slc: Slice, target) -> Slice:
    """Bilinear resize with half-pixel-centre sampling."""
    return slc.with_pixels(resize_array(slc.pixels, target))


def normalize_array(pixels: np.ndarray, mode: str = MINMAX) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if mode == MINMAX:
        lo, hi = pixels.min(), pixels.max()
        if hi <= lo:
            return np.zeros_like(pixels)
        return (pixels - lo) / (hi - lo)
    if mode == ZSCORE:
        sd = pixels.std()
        if sd == 0:
            return np.zeros_like(pixels)
        return (pixels - pixels.mean()) / sd
    raise ValueError(f"unknown normalization {mode!r}")


def normalize(slc: Slice, mode: str = MINMAX) -> Slice:
    """Per-slice minmax or z-score; constant slices become all zeros."""
    return slc.with_pixels(normalize_array(slc.pixels, mode))


def flatten_features(slc) -> np.ndarray:
    return np.asarray(getattr(slc, "pixels", slc), dtype=np.float64).reshape(-1).copy()


def unflatten_features(vector, shape, index: int = 0, scan_id: str = "") -> Slice:
    return Slice(np.asarray(vector, dtype=np.float64).reshape(shape), index=index, scan_id=scan_id)


def preprocess_slice(slc: Slice, config: PreprocessConfig) -> Slice:
    return normalize(resize_bilinear(slc, config.target), config.normalization)
