import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entrovote.dataset import (
    ScanRecord,
    SplitConfig,
    generate_dataset,
    generate_volume,
    read_manifest,
    simulate_predictions,
    stratified_split,
    train_count,
    write_manifest,
)
from entrovote.errors import BadExtents, ClassTooSmall
from entrovote.sampling import slice_entropy
from entrovote.volume_io import extract_slices, load_volume


def records_for(counts):
    return [ScanRecord(f"{c}_{i:03d}", c) for c, n in zip(("AD", "MCI", "CN"), counts) for i in range(n)]


def per_class(records):
    return tuple(sum(r.label == c for r in records) for c in range(3))


def edge_vs_middle(volume):
    h = [slice_entropy(s) for s in extract_slices(volume, "z")]
    nz = len(h)
    edge = max(1, nz // 10)
    middle = np.mean(h[nz // 3 : 2 * nz // 3])
    return middle, np.mean(h[:edge] + h[nz - edge :])


def test_split_counts_example():
    train, test = stratified_split(records_for((20, 45, 35)), SplitConfig(0.75, seed=3))
    assert per_class(train) == (15, 34, 26)
    assert per_class(test) == (5, 11, 9)


def test_four_records_one_class():
    train, test = stratified_split(records_for((4, 0, 0)))
    assert (len(train), len(test)) == (3, 1)


@pytest.mark.parametrize("n, expected", [(2, 2), (3, 2), (5, 4), (6, 5), (8, 6), (14, 11), (13, 10)])
def test_round_half_up(n, expected):
    # 2*0.75 = 1.5 -> 2; 6*0.75 = 4.5 -> 5; 13*0.75 = 9.75 -> 10
    assert train_count(n, 0.75) == expected


def test_split_determinism_and_counts_across_seeds():
    recs = records_for((8, 14, 13))
    a = stratified_split(recs, SplitConfig(seed=5))
    assert a == stratified_split(recs, SplitConfig(seed=5))
    shapes = {per_class(stratified_split(recs, SplitConfig(seed=s))[0]) for s in range(20)}
    assert shapes == {(6, 11, 10)}
    assert len({tuple(r.scan_id for r in stratified_split(recs, SplitConfig(seed=s))[0]) for s in range(20)}) > 1


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.integers(2, 30), st.integers(2, 30), st.integers(2, 30)), st.integers(0, 2**31 - 1))
def test_split_is_partition_without_leakage(counts, seed):
    recs = records_for(counts)
    train, test = stratified_split(recs, SplitConfig(seed=seed))
    tr, te = {r.scan_id for r in train}, {r.scan_id for r in test}
    assert not tr & te
    assert tr | te == {r.scan_id for r in recs}
    for c, n in enumerate(counts):
        assert abs(per_class(train)[c] / n - 0.75) <= 1 / n


def test_class_too_small():
    with pytest.raises(ClassTooSmall):
        stratified_split(records_for((1, 4, 4)))


@pytest.mark.parametrize("seed", range(10))
def test_generator_prefers_central_slices(seed):
    for c in range(3):
        middle, edges = edge_vs_middle(generate_volume(c, seed))
        assert middle > edges


def test_generator_deterministic():
    a, b = generate_volume("MCI", 12), generate_volume("MCI", 12)
    assert a.data.tobytes() == b.data.tobytes()
    assert generate_volume("MCI", 13).data.tobytes() != a.data.tobytes()


def test_generator_class_dependence():
    ad, cn = generate_volume("AD", 4), generate_volume("CN", 4)
    mid = ad.extents[2] // 2
    assert not np.array_equal(ad.data[:, :, mid], cn.data[:, :, mid])


def test_bad_extents():
    with pytest.raises(BadExtents):
        generate_volume("AD", 0, (8, 8, 7))


def test_default_dataset(tmp_path):
    records = generate_dataset(tmp_path)
    assert len(list(tmp_path.glob("*.nii"))) == 35
    manifest = read_manifest(tmp_path / "manifest.csv")
    assert len(manifest) == 35 and per_class(manifest) == (8, 14, 13)
    assert [r.scan_id for r in manifest] == [r.scan_id for r in records]
    for r in manifest:
        assert load_volume(r.path).extents == (32, 32, 150)


def test_manifest_round_trip(tmp_path):
    recs = [ScanRecord("a", "AD", str(tmp_path / "x" / "a.nii")), ScanRecord("b", "NC", "")]
    (tmp_path / "x").mkdir()
    write_manifest(recs, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == ["scan_id,label,path", "a,AD,x/a.nii", "b,CN,"]
    back = read_manifest(tmp_path / "m.csv")
    assert back[0].path == str(tmp_path / "x" / "a.nii") and back[1].label == 2


def test_simulated_classifier_accuracy():
    r = np.random.default_rng(0)
    truth = r.integers(0, 3, 5000)
    pred = simulate_predictions(truth, 0.65, r)
    assert abs(np.mean(pred.predicted() == truth) - 0.65) < 0.03
