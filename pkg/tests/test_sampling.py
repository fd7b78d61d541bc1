import math
from collections import Counter

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from entrovote.errors import EmptyHistogram, OverTrimmed
from entrovote.sampling import (
    SampleSpec,
    intensity_histogram,
    rank_slices,
    select_samples,
    shannon_entropy,
    slice_entropy,
)
from entrovote.volume_io import Slice


def oracle_counts(pixels, bins=256):
    """Pure-python min-max binning; returns the sorted multiset of bin counts."""
    flat = [float(v) for v in np.asarray(pixels).ravel()]
    lo, hi = min(flat), max(flat)
    if hi == lo:
        idx = [0] * len(flat)
    else:
        idx = [min(int(math.floor((v - lo) / (hi - lo) * bins)), bins - 1) for v in flat]
    return tuple(sorted(Counter(idx).values()))


def oracle_entropy(pixels, bins=256):
    counts = oracle_counts(pixels, bins)
    n = sum(counts)
    with mpmath.workdps(60):
        h = -mpmath.fsum(mpmath.mpf(c) / n * mpmath.log(mpmath.mpf(c) / n, 2) for c in counts)
        # 40 significant digits: exact ties coincide, distinct values stay apart
        return mpmath.nstr(h, 40)


def slices_with_entropies(values):
    """Slices whose entropies follow the order of ``values`` (more distinct levels = higher)."""
    out = []
    for i, v in enumerate(values):
        levels = max(1, int(round(2 ** v)))
        out.append(Slice(np.arange(64).reshape(8, 8) % levels, index=i))
    return out


def test_constant_slice_histogram():
    h = intensity_histogram(Slice(np.full((5, 5), 3.0)), 256)
    assert h[0] == 25 and h.sum() == 25


def test_two_bin_floor_rule():
    # 0.5 * 2 = 1.0 lands in bin 1 under floor(v * bins)
    h = intensity_histogram(np.array([[0.0, 0.0], [0.5, 1.0]]), 2)
    assert h.tolist() == [2, 2]
    h = intensity_histogram(np.array([[0.0, 0.0], [0.25, 1.0]]), 2)
    assert h.tolist() == [3, 1]


def test_histogram_sums_to_pixel_count(rng):
    for _ in range(20):
        px = rng.normal(size=(rng.integers(1, 20), rng.integers(1, 20)))
        assert intensity_histogram(px, 256).sum() == px.size


@pytest.mark.parametrize(
    "counts, bits",
    [([10], 0.0), ([0, 7, 0], 0.0), ([5, 5], 1.0), ([3] * 256, 8.0), ([2, 1, 1], 1.5)],
)
def test_entropy_values(counts, bits):
    assert shannon_entropy(counts) == pytest.approx(bits, abs=1e-12)


def test_empty_histogram():
    with pytest.raises(EmptyHistogram):
        shannon_entropy([0, 0, 0])


def test_ramp_slice_is_eight_bits():
    assert slice_entropy(Slice(np.arange(256.0).reshape(16, 16))) == pytest.approx(8.0)


def test_distinct_histograms_with_equal_entropy_tie_exactly():
    # 4*(2 log2 2) == 4 log2 4, and 6*(3 log2 3) == 9 log2 9
    assert shannon_entropy([2, 2, 2, 2, 10]) == shannon_entropy([4, 1, 1, 1, 1, 10])
    assert shannon_entropy([3] * 6 + [5]) == shannon_entropy([9] + [1] * 9 + [5])


def test_rank_examples():
    ranked = rank_slices(slices_with_entropies([0.2, 3.1, 1.0]))
    assert [s.index for s in ranked] == [1, 2, 0]
    tied = [Slice(np.eye(4), index=3), Slice(np.eye(4), index=1)]
    assert [s.index for s in rank_slices(tied)] == [1, 3]


def test_rank_matches_sort_oracle(rng):
    slices = [Slice(rng.integers(0, rng.integers(1, 300), size=(12, 12)), index=i) for i in range(100)]
    value = {i: mpmath.mpf(oracle_entropy(slices[i].pixels)) for i in range(100)}
    expected = sorted(range(100), key=lambda i: (-value[i], i))
    ranked = rank_slices(slices)
    assert [s.index for s in ranked] == expected
    for s in ranked:
        assert s.entropy_bits == pytest.approx(float(value[s.index]), abs=1e-12)


def test_max_one():
    chosen = select_samples(slices_with_entropies([0.2, 3.1, 1.0]), SampleSpec.max_one())
    assert [s.index for s in chosen] == [1]


def test_top50_of_150(rng):
    slices = [Slice(rng.normal(size=(6, 6)), index=i) for i in range(150)]
    assert len(select_samples(slices, SampleSpec.top_k(50))) == 50


def test_topk_clamps():
    chosen = select_samples(slices_with_entropies([0.2, 3.1, 1.0]), SampleSpec.top_k(5))
    assert [s.index for s in chosen] == [1, 2, 0]


def test_trim_then_all():
    slices = [Slice(np.zeros((2, 2)), index=i) for i in range(150)]
    chosen = select_samples(slices, SampleSpec.all(trim_head=35, trim_tail=35))
    assert [s.index for s in chosen] == list(range(35, 115))


def test_over_trim():
    slices = [Slice(np.zeros((2, 2)), index=i) for i in range(10)]
    with pytest.raises(OverTrimmed):
        select_samples(slices, SampleSpec.all(trim_head=5, trim_tail=5))


def test_trim_excludes_high_entropy_edges(rng):
    slices = [Slice(rng.normal(size=(8, 8)) if i in (0, 9) else np.zeros((8, 8)), index=i) for i in range(10)]
    chosen = select_samples(slices, SampleSpec.max_one(trim_head=1, trim_tail=1))
    assert chosen[0].index not in (0, 9)


@pytest.mark.parametrize("text, label", [("max1", "max1"), ("top50", "top50"), ("top:7", "top7"), ("ALL", "all")])
def test_spec_parse(text, label):
    assert SampleSpec.parse(text).label == label


def test_spec_validation():
    with pytest.raises(ValueError):
        SampleSpec.top_k(0)
    with pytest.raises(ValueError):
        SampleSpec.parse("best")


pixel_arrays = arrays(
    np.float64,
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    elements=st.floats(-1e3, 1e3, allow_nan=False),
)


@settings(max_examples=200, deadline=None)
@given(pixel_arrays, st.sampled_from([2, 16, 256]))
def test_entropy_bounds(px, bins):
    h = slice_entropy(Slice(px), bins)
    assert 0.0 <= h <= math.log2(bins) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=40).filter(any), st.randoms(use_true_random=False))
def test_entropy_permutation_invariant(counts, rnd):
    shuffled = list(counts)
    rnd.shuffle(shuffled)
    assert shannon_entropy(shuffled) == pytest.approx(shannon_entropy(counts), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.int64, st.tuples(st.integers(1, 10), st.integers(1, 10)), elements=st.integers(-500, 500)),
    st.sampled_from([0.25, 1.0, 4.0, 64.0]),
    st.integers(-1000, 1000),
)
def test_histogram_affine_invariant(px, scale, shift):
    # power-of-two scales and integer shifts keep the arithmetic exact
    base = intensity_histogram(px.astype(float), 256)
    moved = intensity_histogram(px * scale + shift, 256)
    np.testing.assert_array_equal(base, moved)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_regimes_nest(n, k, seed):
    r = np.random.default_rng(seed)
    slices = [Slice(r.integers(0, r.integers(1, 50), size=(6, 6)), index=i) for i in range(n)]
    one = {s.index for s in select_samples(slices, SampleSpec.max_one())}
    top = {s.index for s in select_samples(slices, SampleSpec.top_k(k))}
    everything = {s.index for s in select_samples(slices, SampleSpec.all())}
    assert one <= top <= everything
