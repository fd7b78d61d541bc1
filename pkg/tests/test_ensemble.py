import itertools
import math

import numpy as np
import pytest

from entrovote.base_learner import PredictionMatrix, TrainConfig, train
from entrovote.ensemble import (
    StackingModel,
    aggregate_by_scan,
    aggregate_scan,
    load_stacking_model,
    majority_vote,
    mean_scores,
    save_stacking_model,
    select_top_k_models,
    stack_features,
    stack_loss_and_gradient,
    stack_predict,
    stack_train,
    tie_fraction,
    vote_decision,
    write_votes,
)
from entrovote.errors import EmptyScan, IdMismatch, KTooLarge
from entrovote.labels import AD, CN, MCI


def one_hot(labels):
    return np.eye(3)[np.asarray(labels)]


def random_bases(r, n, ids=None, names=("a", "b", "c")):
    ids = ids or [f"s{i}" for i in range(n)]
    return [PredictionMatrix(m, ids, r.dirichlet(np.ones(3), size=n)) for m in names]


def vote_oracle(votes):
    """Exhaustive reading of the rule: a class named at least twice wins, else CN."""
    for c in (AD, MCI, CN):
        if list(votes).count(c) >= 2:
            return c, False
    return CN, True


def test_select_top_k_example():
    recalls = {"inceptionv3": 0.75, "mobilenetv2": 0.82, "resnet18": 0.79, "squeezenetv1": 0.88, "vgg11bn": 0.82}
    assert select_top_k_models(recalls, 3) == ["squeezenetv1", "mobilenetv2", "vgg11bn"]
    assert select_top_k_models(recalls, 5) == ["squeezenetv1", "mobilenetv2", "vgg11bn", "resnet18", "inceptionv3"]


def test_select_top_k_tie_and_error():
    assert select_top_k_models({"zeta": 0.9, "alpha": 0.9}, 1) == ["alpha"]
    with pytest.raises(KTooLarge):
        select_top_k_models({"a": 0.5}, 2)


def test_stack_zero_epochs_uniform():
    r = np.random.default_rng(0)
    bases = random_bases(r, 10)
    model = stack_train(bases, r.integers(0, 3, 10), TrainConfig(epochs=0))
    assert model.weights.shape == (3, 9)
    np.testing.assert_allclose(stack_predict(model, bases).probs, 1 / 3)


def test_stack_one_hot_correct_bases_fit():
    r = np.random.default_rng(1)
    y = r.integers(0, 3, 60)
    ids = [f"s{i}" for i in range(60)]
    bases = [PredictionMatrix(m, ids, one_hot(y)) for m in "abc"]
    model = stack_train(bases, y, TrainConfig(epochs=50))
    assert np.mean(stack_predict(model, bases).predicted() == y) >= 0.99


@pytest.mark.parametrize("seed", range(20))
def test_stack_gradient_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 10))
    bases = random_bases(r, n)
    y = r.integers(0, 3, n)
    model = StackingModel(r.normal(size=(3, 9)), r.normal(size=3), ("a", "b", "c"))
    _, g_w, g_b = stack_loss_and_gradient(model, bases, y)
    eps = 1e-6
    fd_w = np.zeros_like(model.weights)
    for idx in np.ndindex(fd_w.shape):
        up, dn = model.weights.copy(), model.weights.copy()
        up[idx] += eps
        dn[idx] -= eps
        lu = stack_loss_and_gradient(StackingModel(up, model.bias, model.base_order), bases, y)[0]
        ld = stack_loss_and_gradient(StackingModel(dn, model.bias, model.base_order), bases, y)[0]
        fd_w[idx] = (lu - ld) / (2 * eps)
    fd_b = np.zeros(3)
    for i in range(3):
        up, dn = model.bias.copy(), model.bias.copy()
        up[i] += eps
        dn[i] -= eps
        lu = stack_loss_and_gradient(StackingModel(model.weights, up, model.base_order), bases, y)[0]
        ld = stack_loss_and_gradient(StackingModel(model.weights, dn, model.base_order), bases, y)[0]
        fd_b[i] = (lu - ld) / (2 * eps)
    for a, b in ((g_w, fd_w), (g_b, fd_b)):
        rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
        assert rel.max() < 1e-4


def test_stack_base_order_resolved_by_id():
    r = np.random.default_rng(2)
    bases = random_bases(r, 8)
    y = r.integers(0, 3, 8)
    model = stack_train(bases, y, TrainConfig(epochs=5, batch_size=3))
    ref = stack_predict(model, bases).probs
    for perm in itertools.permutations(bases):
        np.testing.assert_array_equal(stack_predict(model, list(perm)).probs, ref)


def test_stack_hand_example():
    # features: a=[1,0,0], b=[0,1,0], c=[0.5,0.25,0.25]
    w = np.zeros((3, 9))
    w[0, 0] = 1.0  # a's AD score feeds class AD
    w[1, 4] = 2.0  # b's MCI score feeds class MCI
    w[2, 6] = 2.0  # c's AD score feeds class CN
    b = np.array([0.0, -1.0, math.log(2)])
    model = StackingModel(w, b, ("a", "b", "c"))
    bases = [
        PredictionMatrix("a", ["s"], [[1.0, 0.0, 0.0]]),
        PredictionMatrix("b", ["s"], [[0.0, 1.0, 0.0]]),
        PredictionMatrix("c", ["s"], [[0.5, 0.25, 0.25]]),
    ]
    # logits (1, 1, 1 + ln 2) -> exp proportional to (1, 1, 2)
    np.testing.assert_allclose(stack_predict(model, bases).probs[0], [0.25, 0.25, 0.5], rtol=1e-12)


def test_stack_single_base_reduces_to_train():
    r = np.random.default_rng(3)
    base = random_bases(r, 30, names=("only",))
    y = r.integers(0, 3, 30)
    cfg = TrainConfig(epochs=4, batch_size=7, seed=9)
    stacked = stack_train(base, y, cfg)
    direct = train(base[0].probs, y, cfg)
    np.testing.assert_array_equal(stacked.weights, direct.weights)
    np.testing.assert_array_equal(stacked.bias, direct.bias)


def test_stack_shift_invariance():
    r = np.random.default_rng(4)
    bases = random_bases(r, 5)
    model = StackingModel(r.normal(size=(3, 9)), r.normal(size=3), ("a", "b", "c"))
    shifted = StackingModel(model.weights, model.bias + 7.5, model.base_order)
    np.testing.assert_allclose(stack_predict(shifted, bases).probs, stack_predict(model, bases).probs, atol=1e-12)


def test_stack_id_mismatch():
    r = np.random.default_rng(5)
    a, b, c = random_bases(r, 4)
    other = PredictionMatrix("c", ["x0", "x1", "x2", "x3"], c.probs)
    with pytest.raises(IdMismatch):
        stack_features([a, b, other])
    swapped = PredictionMatrix("c", list(reversed(c.ids)), c.probs)
    with pytest.raises(IdMismatch):
        stack_features([a, b, swapped])
    model = StackingModel(np.zeros((3, 9)), np.zeros(3), ("a", "b", "z"))
    with pytest.raises(IdMismatch):
        stack_predict(model, [a, b, c])


def test_stacking_model_round_trip(tmp_path):
    model = StackingModel(np.arange(27.0).reshape(3, 9) / 7, np.array([0.1, 0.2, 0.3]), ("x", "y", "z"), [1.0])
    save_stacking_model(model, tmp_path / "s.json")
    back = load_stacking_model(tmp_path / "s.json")
    np.testing.assert_array_equal(back.weights, model.weights)
    assert back.base_order == model.base_order


@pytest.mark.parametrize(
    "votes, decision, tie",
    [((AD, AD, MCI), AD, False), ((AD, MCI, CN), CN, True), ((MCI, MCI, MCI), MCI, False)],
)
def test_vote_examples(votes, decision, tie):
    assert vote_decision(votes) == (decision, tie)


def test_all_27_triples_match_oracle():
    for votes in itertools.product(range(3), repeat=3):
        assert vote_decision(votes) == vote_oracle(votes), votes


def test_vote_permutation_invariance():
    r = np.random.default_rng(6)
    for _ in range(100):
        bases = random_bases(r, 5)
        ref = [(v.decision, v.tie) for v in majority_vote(bases)]
        for perm in itertools.permutations(bases):
            assert [(v.decision, v.tie) for v in majority_vote(list(perm))] == ref


def test_majority_vote_rows_and_ties(tmp_path):
    ids = ["p", "q"]
    bases = [
        PredictionMatrix("a", ids, [[0.8, 0.1, 0.1], [0.8, 0.1, 0.1]]),
        PredictionMatrix("b", ids, [[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]]),
        PredictionMatrix("c", ids, [[0.1, 0.1, 0.8], [0.1, 0.1, 0.8]]),
    ]
    res = majority_vote(bases)
    assert [(r.votes, r.decision, r.tie) for r in res] == [((0, 0, 2), AD, False), ((0, 1, 2), CN, True)]
    assert tie_fraction(res) == 0.5
    write_votes(res, tmp_path / "v.csv")
    assert (tmp_path / "v.csv").read_text().splitlines() == [
        "id,vote_1,vote_2,vote_3,decision,tie",
        "p,AD,AD,CN,AD,0",
        "q,AD,MCI,CN,CN,1",
    ]
    np.testing.assert_allclose(mean_scores(bases).probs[0], [1.6 / 3, 0.4 / 3, 1.0 / 3])


def test_majority_vote_id_mismatch():
    r = np.random.default_rng(7)
    a, b, _ = random_bases(r, 3)
    with pytest.raises(IdMismatch):
        majority_vote([a, b, PredictionMatrix("c", ["u", "v", "w"], a.probs)])


def test_aggregate_scan_examples():
    row = [0.2, 0.3, 0.5]
    np.testing.assert_array_equal(aggregate_scan(PredictionMatrix("m", ["s:0"], [row])), row)
    two = aggregate_scan(PredictionMatrix("m", ["s:0", "s:1"], [[1, 0, 0], [0, 1, 0]]))
    np.testing.assert_array_equal(two, [0.5, 0.5, 0.0])
    assert int(np.argmax(two)) == AD
    same = aggregate_scan(PredictionMatrix("m", [f"s:{i}" for i in range(4)], [row] * 4))
    np.testing.assert_allclose(same, row, rtol=1e-15)
    with pytest.raises(EmptyScan):
        aggregate_scan(PredictionMatrix("m", [], np.zeros((0, 3))))


def test_aggregate_by_scan_groups_rows():
    pm = PredictionMatrix("m", ["b:1", "a:0", "b:2"], [[1, 0, 0], [0, 0, 1], [0, 1, 0]])
    out = aggregate_by_scan(pm)
    assert out.ids == ("a", "b")
    np.testing.assert_array_equal(out.probs, [[0, 0, 1], [0.5, 0.5, 0]])
