import numpy as np
import pytest

from duca.errors import ConvergenceError, InvalidInputError
from duca.svmcore import decision, primal_objective, train_binary, train_many

from oracles import one_d_svm_weight, separable_problem, squared_hinge_dual, squared_hinge_primal

X1 = np.array([[-1.0], [1.0]])
Y1 = np.array([-1.0, 1.0])


@pytest.mark.parametrize("C", [0.1, 1.0, 10.0, 1e4])
def test_one_d_closed_form(C):
    svm = train_binary(X1, Y1, C=C, fit_bias=False)
    assert svm.w[0] == pytest.approx(one_d_svm_weight(C), abs=1e-4)
    assert svm.b == 0.0


def test_one_d_examples():
    svm = train_binary(X1, Y1, C=1.0, fit_bias=False)
    assert svm.w[0] == pytest.approx(0.8, abs=1e-4)
    assert decision(svm, [1.0]) == pytest.approx(0.8, abs=1e-4)
    hard = train_binary(X1, Y1, C=1e4, fit_bias=False)
    assert abs(hard.w[0] - 1.0) < 1e-3
    # with the bias on, symmetry keeps it at zero
    biased = train_binary(X1, Y1, C=1.0)
    assert biased.b == pytest.approx(0.0, abs=1e-6)


def test_duality_gap_certificate(rng):
    for _ in range(25):
        X, y = separable_problem(rng)
        C = float(10 ** rng.uniform(-2, 2))
        svm = train_binary(X, y, C=C, seed=int(rng.integers(1000)))
        a = svm.alpha
        assert np.all(a >= 0)
        Xa = np.hstack([X, np.ones((len(X), 1))])
        np.testing.assert_allclose(np.append(svm.w, svm.b), Xa.T @ (a * y), atol=1e-10)
        P = squared_hinge_primal(svm.w, svm.b, X, y, C)
        D = squared_hinge_dual(a, X, y, C)
        assert -1e-9 <= P - D <= 1e-4 * (1 + abs(P))
        assert svm.gap == pytest.approx(P - D, abs=1e-9)


def test_primal_objective_matches_oracle(rng):
    X, y = separable_problem(rng, 20, 3)
    w, b = rng.standard_normal(3), 0.3
    assert primal_objective(w, b, X, y, 2.0)[0] == pytest.approx(
        squared_hinge_primal(w, b, X, y, 2.0))


def test_duplication_halves_C(rng):
    X, y = separable_problem(rng, 30, 4, margin=0.0)
    a = train_binary(X, y, C=1.0, tol=1e-8)
    b = train_binary(np.vstack([X, X]), np.concatenate([y, y]), C=0.5, tol=1e-8)
    np.testing.assert_allclose(b.w, a.w, atol=1e-5)
    assert b.b == pytest.approx(a.b, abs=1e-5)
    assert squared_hinge_primal(a.w, a.b, X, y, 1.0) == pytest.approx(
        squared_hinge_primal(b.w, b.b, np.vstack([X, X]), np.concatenate([y, y]), 0.5), rel=1e-7)


def test_label_flip_antisymmetry(rng):
    X, y = separable_problem(rng, 25, 5, margin=0.1)
    a = train_binary(X, y, C=0.7, tol=1e-8)
    b = train_binary(X, -y, C=0.7, tol=1e-8)
    np.testing.assert_allclose(b.w, -a.w, atol=1e-6)
    assert b.b == pytest.approx(-a.b, abs=1e-6)


def test_scaling_keeps_sign_pattern(rng):
    X, y = separable_problem(rng, 40, 3)
    a = train_binary(X, y, C=1.0)
    s = 3.0
    b = train_binary(s * X, y, C=1.0 / s**2)
    np.testing.assert_array_equal(np.sign(a.decision(X)), np.sign(b.decision(s * X)))


def test_dual_objective_monotone(rng):
    X, y = separable_problem(rng, 50, 6, margin=0.0)
    svm = train_binary(X, y, C=5.0, tol=1e-7)
    hist = np.array(svm.dual_history)
    assert np.all(np.diff(hist) <= 1e-12 * (1 + np.abs(hist[:-1])))


def test_train_many_matches_binary(rng):
    X, y = separable_problem(rng, 30, 4)
    Y = np.stack([y, -y, np.where(X[:, 0] > 0, 1.0, -1.0)], axis=1)
    W, b, _ = train_many(X, Y, C=1.0, tol=1e-8)
    for k in range(3):
        one = train_binary(X, Y[:, k], C=1.0, tol=1e-8)
        np.testing.assert_allclose(W[:, k], one.w, atol=1e-6)


def test_decision_linear_and_bias(rng):
    X, y = separable_problem(rng, 20, 3)
    svm = train_binary(X, y)
    assert decision(svm, np.zeros(3)) == pytest.approx(svm.b)
    u, v = rng.standard_normal(3), rng.standard_normal(3)
    lhs = decision(svm, 2 * u + 3 * v) - svm.b
    assert lhs == pytest.approx(2 * (decision(svm, u) - svm.b) + 3 * (decision(svm, v) - svm.b))
    with pytest.raises(InvalidInputError):
        decision(svm, np.zeros(4))


def test_errors(rng):
    with pytest.raises(InvalidInputError):
        train_binary(X1, [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        train_binary(X1, Y1, C=0.0)
    with pytest.raises(InvalidInputError):
        train_binary(X1, [1.0, 0.5])
    X, y = separable_problem(rng, 40, 5, margin=0.0)
    with pytest.raises(ConvergenceError) as exc:
        train_binary(X, y, C=100.0, tol=1e-12, max_epochs=2)
    assert exc.value.iterations == 2 and exc.value.context["columns"] == [0]
