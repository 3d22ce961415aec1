from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duca.errors import IntegrityError, InvalidInputError
from duca.pipeline import (
    OvOModel,
    load_model,
    patch_contributions,
    pool,
    predict,
    predict_batch,
    save_model,
    target_direction,
    train_classifier,
)


def test_pool_examples():
    codes = [[1.0, -2.0], [0.0, 5.0]]
    np.testing.assert_array_equal(pool(codes, "max", normalize=False), [1.0, 5.0])
    np.testing.assert_array_equal(pool(codes, "mean", normalize=False), [0.5, 1.5])
    one = np.array([[3.0, 4.0]])
    np.testing.assert_allclose(pool(one), [0.6, 0.8])


def test_pool_errors():
    with pytest.raises(InvalidInputError):
        pool([])
    with pytest.raises(InvalidInputError):
        pool([[1.0, 2.0], [1.0]])
    with pytest.raises(InvalidInputError):
        pool([[1.0]], "median")


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_pool_properties(n, d, seed):
    r = np.random.default_rng(seed)
    codes = r.standard_normal((n, d))
    mx = pool(codes, "max", normalize=False)
    assert np.all(mx >= codes)
    perm = codes[r.permutation(n)]
    np.testing.assert_array_equal(pool(perm, "max", False), mx)
    np.testing.assert_allclose(pool(perm, "mean", False), pool(codes, "mean", False))
    same = np.repeat(codes[:1], 3, axis=0)
    np.testing.assert_array_equal(pool(same, "max", False), codes[0])
    np.testing.assert_allclose(pool(same, "mean", False), codes[0])
    s = float(r.uniform(0.1, 10))
    np.testing.assert_allclose(pool(s * codes, "max"), pool(codes, "max"), atol=1e-12)


def test_pair_count_67_classes(rng):
    labels = [f"c{k:02d}" for k in range(67) for _ in range(2)]
    X = rng.standard_normal((len(labels), 4))
    model = train_classifier(X, labels)
    assert len(model.pairs) == 2211 == 67 * 66 // 2


def test_two_clusters_perfect(rng):
    X = np.vstack([rng.normal(3, 0.5, (20, 3)), rng.normal(-3, 0.5, (20, 3))])
    y = ["a"] * 20 + ["b"] * 20
    model = train_classifier(X, y)
    pred, _, _ = predict_batch(model, X)
    assert pred == y
    # two classes: the label is the sign of the single machine
    d = model.decisions(X)[:, 0]
    assert [("a" if v > 0 else "b") for v in d] == pred


def test_contradictory_duplicates_do_not_crash():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    model = train_classifier(X, ["a", "a", "b", "b"])
    assert predict(model, [1.0, 0.0]).label == "a"


def test_one_class_rejected(rng):
    with pytest.raises(InvalidInputError):
        train_classifier(rng.standard_normal((4, 2)), ["a"] * 4)


def test_unanimous_votes(rng):
    angles = np.pi / 2 * np.arange(4)
    centres = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    X = np.vstack([rng.normal(c, 0.05, (10, 2)) for c in centres])
    model = train_classifier(X, [f"k{k}" for k in range(4) for _ in range(10)])
    p = predict(model, X[35])
    assert p.label == "k3" and p.votes[3] == 3
    assert p.votes.sum() == 6


def _manual(weights, biases, n=3):
    return OvOModel([f"c{k}" for k in range(n)], list(combinations(range(n), 2)),
                    np.asarray(weights, float), np.asarray(biases, float))


def brute_force_label(model, v):
    # independent recount straight from the pair definitions
    L = len(model.classes)
    votes, margin = [0] * L, [0.0] * L
    for (i, j), w, b in zip(model.pairs, model.weights, model.biases):
        d = float(np.dot(w, v) + b)
        votes[i if d > 0 else j] += 1
        margin[i] += d
        margin[j] -= d
    best = max(votes)
    tied = [k for k in range(L) if votes[k] == best]
    top = max(margin[k] for k in tied)
    return [k for k in tied if margin[k] == top][0], votes, margin


def test_cyclic_tie_broken_by_margins():
    # decisions for pairs (0,1), (0,2), (1,2) on v = 1: 0 beats 1, 2 beats 0, 1 beats 2
    model = _manual([[0.5], [-2.0], [1.0]], [0.0, 0.0, 0.0])
    p = predict(model, [1.0])
    label, votes, margin = brute_force_label(model, [1.0])
    assert list(p.votes) == votes == [1, 1, 1]
    np.testing.assert_allclose(p.scores, margin)
    assert p.label == model.classes[label] == "c2"


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 6), st.integers(0, 2**31 - 1))
def test_resolution_matches_brute_force(L, seed):
    r = np.random.default_rng(seed)
    P = L * (L - 1) // 2
    model = OvOModel([f"c{k}" for k in range(L)], list(combinations(range(L), 2)),
                     r.integers(-2, 3, (P, 2)).astype(float), r.integers(-1, 2, P).astype(float))
    v = r.integers(-2, 3, 2).astype(float)
    label, votes, _ = brute_force_label(model, v)
    p = predict(model, v)
    assert p.label == model.classes[label]
    assert p.votes.sum() == P


def test_prediction_dimension_mismatch():
    model = _manual([[1.0], [1.0], [1.0]], [0, 0, 0])
    with pytest.raises(InvalidInputError):
        predict(model, [1.0, 2.0])
    with pytest.raises(IntegrityError):
        OvOModel(["a", "b", "c"], [(0, 1)], [[1.0]], [0.0])


def test_model_round_trip(tmp_path, rng):
    model = _manual(rng.standard_normal((3, 4)), rng.standard_normal(3))
    model.meta["bank_digest"] = "abc"
    save_model(model, tmp_path / "m.ducm")
    back = load_model(tmp_path / "m.ducm")
    assert back.classes == model.classes and back.pairs == model.pairs
    assert back.meta["bank_digest"] == "abc"
    np.testing.assert_allclose(back.weights, model.weights, rtol=1e-6)


def test_contributions_single_and_identical(rng):
    model = _manual(rng.standard_normal((3, 4)), np.zeros(3))
    np.testing.assert_array_equal(patch_contributions(model, rng.random((1, 4)), "c0"), [1.0])
    c = rng.random(4)
    scores = patch_contributions(model, np.stack([c, c]), "c1", raw=True)
    assert scores[0] == scores[1]


def test_contributions_dominant_patch():
    # target c0 gains from both dimensions; patch 0 supplies both maxima
    model = _manual([[1.0, 2.0], [0.5, 0.5], [0.0, 0.0]], np.zeros(3))
    codes = np.array([[0.9, 0.8], [0.1, 0.2]])
    np.testing.assert_allclose(patch_contributions(model, codes, "c0"), [1.0, 0.0])


def test_contributions_sum_to_target_score(rng):
    model = _manual(rng.standard_normal((3, 5)), np.zeros(3))
    codes = rng.integers(0, 3, (6, 5)).astype(float)  # plenty of ties
    raw = patch_contributions(model, codes, "c2", raw=True)
    pooled = pool(codes, "max", normalize=False)
    assert raw.sum() == pytest.approx(pooled @ target_direction(model, "c2"))


def test_contributions_need_max_pooling(rng):
    model = _manual(rng.standard_normal((3, 2)), np.zeros(3))
    with pytest.raises(InvalidInputError):
        patch_contributions(model, rng.random((2, 2)), "c0", pooling="mean")
    with pytest.raises(InvalidInputError):
        patch_contributions(model, rng.random((2, 2)), "zz")
