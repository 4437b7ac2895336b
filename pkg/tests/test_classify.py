import numpy as np
import pytest

from tifl import classify as C
from tifl.transform_ops import InvalidParameterError

from conftest import central_diff, rel_err


def blobs(rng, n=120, dim=4, k=3, spread=1.0):
    centers = rng.normal(0, 3, (k, dim))
    y = np.arange(n) % k
    return centers[y] + rng.normal(0, spread, (n, dim)), y


def test_separable_points():
    clf = C.fit([[0.0, 1.0], [1.0, 0.0]], [0, 1], reg=1e-8)
    assert C.evaluate(clf, [[0.0, 1.0], [1.0, 0.0]], [0, 1])[0] == 1.0


def test_objective_gradient_matches_finite_differences(rng):
    for _ in range(20):
        X, y = blobs(rng, n=15, dim=3, k=3)
        Y = np.eye(3)[y]
        theta = rng.normal(size=3 * 3 + 3)
        reg = rng.uniform(0, 1)
        _, g = C.objective_and_gradient(theta, X, Y, reg)
        fd = central_diff(lambda t: C.objective_and_gradient(t, X, Y, reg)[0], theta.copy())
        assert rel_err(g, fd) < 1e-6


def test_large_regularization_predicts_prior(rng):
    X, y = blobs(rng, n=100, k=3)
    y = np.where(np.arange(100) < 60, 2, y)
    clf = C.fit(X, y, reg=1e8)
    assert np.abs(clf.weights).max() < 1e-6
    assert np.all(clf.predict(X) == 2)


def test_fit_is_deterministic_and_improves_on_zero(rng):
    X, y = blobs(rng)
    a, b = C.fit(X, y, 1e-2), C.fit(X, y, 1e-2)
    np.testing.assert_array_equal(a.weights, b.weights)
    zero = C.objective_and_gradient(np.zeros(a.weights.size + 3), X, np.eye(3)[y], 1e-2)[0]
    assert a.objective <= zero
    assert a.converged and a.grad_norm < 1e-4


def test_single_class_rejected():
    with pytest.raises(InvalidParameterError):
        C.fit(np.ones((4, 2)), [1, 1, 1, 1])


def test_cross_validation_grid_handling(rng):
    X, y = blobs(rng, spread=3.0)
    assert C.cross_validate(X, y, [0.5], folds=3)[0] == 0.5
    a = C.cross_validate(X, y, [1e-3, 1e-1, 1e-3, 10.0, 1e-1], folds=3, seed=2)
    b = C.cross_validate(X, y, [1e-3, 1e-1, 10.0], folds=3, seed=2)
    assert a == b
    with pytest.raises(InvalidParameterError):
        C.cross_validate(X, y, [], folds=3)
    with pytest.raises(InvalidParameterError):
        C.cross_validate(X[:5], y[:5], [1.0], folds=3)


def test_cross_validation_matches_independent_refits(rng):
    X, y = blobs(rng, spread=4.0)
    best, scores = C.cross_validate(X, y, [1e-2, 1.0], folds=4, seed=7)
    splits = C.stratified_folds(y, 4, seed=7)
    for reg in (1e-2, 1.0):
        accs = []
        for tr, va in splits:
            clf = C.fit(X[tr], y[tr], reg, n_classes=3)
            accs.append(np.mean(clf.predict(X[va]) == y[va]))
        assert scores[reg] == pytest.approx(np.mean(accs), abs=1e-12)
    assert best == max(scores, key=lambda r: (scores[r], -r))
    for tr, va in splits:
        assert np.all(np.bincount(y[va], minlength=3) == 10)


def test_evaluate_confusion(rng):
    X, y = blobs(rng)
    clf = C.fit(X, y, 1e-3)
    acc, conf = C.evaluate(clf, X, y)
    np.testing.assert_array_equal(conf.sum(axis=1), np.bincount(y))
    assert acc == pytest.approx(np.trace(conf) / len(y))
    perfect = C.SoftmaxClassifier(np.eye(3), np.zeros(3), 0.0)
    acc, conf = C.evaluate(perfect, np.eye(3)[y], y)
    assert acc == 1.0 and np.count_nonzero(conf - np.diag(np.diag(conf))) == 0


def test_constant_predictor_on_balanced_labels(rng):
    n = 5000
    y = rng.permutation(np.arange(n) % 10)
    const = C.SoftmaxClassifier(np.zeros((2, 10)), np.eye(10)[4], 0.0)
    acc, _ = C.evaluate(const, np.zeros((n, 2)), y)
    assert abs(acc - 0.1) <= 3 * np.sqrt(0.1 * 0.9 / n)


def test_argmax_ties_go_to_lowest_class():
    clf = C.SoftmaxClassifier(np.zeros((1, 3)), np.zeros(3), 0.0)
    assert np.all(clf.predict(np.ones((4, 1))) == 0)


def test_results_csv(tmp_path):
    rows = [{"dataset": "d", "model": "RBM", "K": 3, "S": 1, "reg": 0.1,
             "accuracy": 0.9, "error": 0.1}]
    C.write_results(tmp_path / "r.csv", rows)
    C.write_results(tmp_path / "r.csv", rows, append=True)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "dataset,model,K,S,reg,accuracy,error" and len(lines) == 3
