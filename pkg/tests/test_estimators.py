import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from disentangle.estimators import PairRegressor, TokenPairClassifier
from disentangle.tasks import gen_mod_arith


def test_clone_and_params():
    est = TokenPairClassifier(family="relu", hidden=8)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(hidden=16)
    assert c.hidden == 16 and est.hidden == 8
    assert clone(PairRegressor(split=3)).get_params()["split"] == 3


def test_classifier_learns_small_addition():
    ds = gen_mod_arith(7, train_fraction=1.0, seed=0)
    clf = TokenPairClassifier(hidden=32, embed_dim=16, lr=1e-2, weight_decay=0.0, batch_size=49,
                              max_epochs=300)
    clf.fit(ds.X_train, ds.y_train)
    assert clf.score(ds.X_train, ds.y_train) == 1.0
    proba = clf.predict_proba(ds.X_train[:3])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.interaction_matrices().shape == (7, 7, 7)


def test_classifier_validation():
    clf = TokenPairClassifier(max_epochs=1)
    with pytest.raises(NotFittedError):
        clf.predict(np.zeros((1, 2), dtype=int))
    with pytest.raises(ValueError):
        clf.fit(np.zeros((3, 3), dtype=int), [0, 1, 0])
    with pytest.raises(ValueError):
        clf.fit(np.array([[0, -1]]), [0])


def test_regressor_fits_product():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((512, 2))
    y = X[:, 0] * X[:, 1]
    reg = PairRegressor(hidden=8, split=1, lr=1e-2, batch_size=64, epochs=60).fit(X, y)
    assert reg.score(X, y) > 0.95
    assert reg.predict(X).shape == (512,)
    assert reg.interaction_matrix().shape == (1, 1)
    with pytest.raises(ValueError):
        reg.predict(np.zeros((2, 3)))


def test_regressor_multi_output_deterministic():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((64, 3))
    Y = np.stack([X[:, 0] * X[:, 1], X[:, 1] * X[:, 2]], axis=1)
    a = PairRegressor(family="swiglu", hidden=8, epochs=3, random_state=4).fit(X, Y)
    b = PairRegressor(family="swiglu", hidden=8, epochs=3, random_state=4).fit(X, Y)
    assert a.predict(X).shape == (64, 2)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
