"""Entropy scoring of slices and the three slice-sampling regimes."""

from __future__ import annotations

import math
import re
from functools import lru_cache
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyHistogram, OverTrimmed

MAX_ONE = "max1"
TOP_K = "topk"
ALL = "all"


@dataclass(frozen=True)
class SliceScore:
    index: int
    entropy_bits: float


@dataclass(frozen=True)
class SampleSpec:
    strategy: str = ALL
    k: Optional[int] = None
    trim_head: int = 0
    trim_tail: int = 0
    bin_count: int = 256

    def __post_init__(self):
        if self.strategy not in (MAX_ONE, TOP_K, ALL):
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.strategy == TOP_K and (self.k is None or self.k < 1):
            raise ValueError("TopK sampling needs k >= 1")
        if self.trim_head < 0 or self.trim_tail < 0:
            raise ValueError("trim counts must be non-negative")
        if self.bin_count < 2:
            raise ValueError("bin_count must be at least 2")

    @classmethod
    def max_one(cls, **kw) -> "SampleSpec":
        return cls(MAX_ONE, **kw)

    @classmethod
    def top_k(cls, k: int, **kw) -> "SampleSpec":
        return cls(TOP_K, k=k, **kw)

    @classmethod
    def all(cls, **kw) -> "SampleSpec":
        return cls(ALL, **kw)

    @classmethod
    def parse(cls, text: str, **kw) -> "SampleSpec":
        """Build a spec from ``max1``, ``top50`` / ``top:50`` or ``all``."""
        text = text.strip().lower()
        if text in ("max1", "maxone", "1"):
            return cls.max_one(**kw)
        if text == "all":
            return cls.all(**kw)
        m = re.fullmatch(r"top[:_-]?(\d+)", text)
        if m:
            return cls.top_k(int(m.group(1)), **kw)
        raise ValueError(f"cannot parse sampling strategy {text!r}")

    @property
    def label(self) -> str:
        return f"top{self.k}" if self.strategy == TOP_K else self.strategy


def intensity_histogram(slc, bin_count: int = 256) -> np.ndarray:
    """Histogram of the slice after min-max scaling to [0, 1].

    Bin of a scaled value v is ``floor(v * bin_count)`` clamped to the last
    bin, so a constant slice lands entirely in bin 0.
    """
    if bin_count < 2:
        raise ValueError("bin_count must be at least 2")
    pixels = np.asarray(getattr(slc, "pixels", slc), dtype=np.float64).ravel()
    lo, hi = pixels.min(), pixels.max()
    if hi > lo:
        scaled = (pixels - lo) / (hi - lo)
        bins = np.minimum(np.floor(scaled * bin_count).astype(np.int64), bin_count - 1)
    else:
        bins = np.zeros(pixels.size, dtype=np.int64)
    return np.bincount(bins, minlength=bin_count)


@lru_cache(maxsize=None)
def _factorize(n: int) -> tuple:
    out, p = [], 2
    while p * p <= n:
        e = 0
        while n % p == 0:
            n //= p
            e += 1
        if e:
            out.append((p, e))
        p += 1
    if n > 1:
        out.append((n, 1))
    return tuple(out)


def _entropy_of_integer_counts(counts) -> float:
    # H = log2(N) - (1/N) * sum c*log2(c). The sum is accumulated as integer
    # multiples of log2(prime), so histograms with mathematically equal
    # entropy get bit-identical results and rank ties stay exact.
    total = int(sum(counts))
    coeff: dict = {}
    for c in counts:
        for p, e in _factorize(int(c)):
            coeff[p] = coeff.get(p, 0) + int(c) * e
    s = math.fsum(a * math.log2(p) for p, a in sorted(coeff.items()))
    return math.log2(total) - s / total


def shannon_entropy(hist) -> float:
    """Entropy in bits of a count vector; empty bins contribute nothing."""
    counts = np.asarray(hist)
    if counts.size == 0 or counts.sum() <= 0:
        raise EmptyHistogram("histogram has no mass")
    nz = counts[counts > 0]
    if np.all(nz == np.round(nz)):
        h = _entropy_of_integer_counts(nz.astype(np.int64).tolist())
    else:
        p = np.sort(nz.astype(np.float64)) / nz.sum()
        h = -math.fsum((p * np.log2(p)).tolist())
    return max(h, 0.0)


def slice_entropy(slc, bin_count: int = 256) -> float:
    return shannon_entropy(intensity_histogram(slc, bin_count))


def rank_slices(slices, bin_count: int = 256) -> list:
    """Scores in descending entropy; equal entropies keep ascending index."""
    scores = [SliceScore(s.index, slice_entropy(s, bin_count)) for s in slices]
    return sorted(scores, key=lambda sc: (-sc.entropy_bits, sc.index))


def _trim(slices, spec: SampleSpec) -> list:
    ordered = sorted(slices, key=lambda s: s.index)
    if spec.trim_head + spec.trim_tail >= len(ordered):
        raise OverTrimmed(
            f"trimming {spec.trim_head}+{spec.trim_tail} leaves nothing of {len(ordered)} slices"
        )
    return ordered[spec.trim_head : len(ordered) - spec.trim_tail]


def select_samples(slices, spec: SampleSpec, scores=None) -> list:
    """Apply head/tail trimming, then the sampling regime in ``spec``.

    ``scores`` may carry precomputed SliceScores to avoid recomputing entropy.
    """
    kept = _trim(slices, spec)
    if spec.strategy == ALL:
        return kept
    by_index = {s.index: s for s in kept}
    if scores is None:
        ranked = rank_slices(kept, spec.bin_count)
    else:
        ranked = sorted(
            (sc for sc in scores if sc.index in by_index),
            key=lambda sc: (-sc.entropy_bits, sc.index),
        )
    n = 1 if spec.strategy == MAX_ONE else min(spec.k, len(ranked))
    return [by_index[sc.index] for sc in ranked[:n]]


def sample_manifest_rows(slices, spec: SampleSpec, scan_id: str) -> list:
    """Rows of (scan_id, slice_index, entropy_bits, selected) in index order."""
    scores = rank_slices(slices, spec.bin_count)
    chosen = {s.index for s in select_samples(slices, spec, scores=scores)}
    return [
        (scan_id, sc.index, sc.entropy_bits, int(sc.index in chosen))
        for sc in sorted(scores, key=lambda sc: sc.index)
    ]
