"""scikit-learn compatible wrappers around the model families and training loops."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .architectures import class_interaction_matrices, extract_bilinear_interaction, make_spec, predict
from .autodiff import softmax
from .tasks import ArrayDataset
from .training import OptimizerConfig, TrainConfig, train

__all__ = ["TokenPairClassifier", "PairRegressor"]


class TokenPairClassifier(ClassifierMixin, BaseEstimator):
    """Classify token pairs ``(a, b)`` with a two-embedding model.

    ``X`` is an integer array of shape ``(n, 2)``. Bilinear models embed
    both tokens and multiply two projections; other families see the
    concatenated embeddings.
    """

    def __init__(self, family="bilinear", hidden=64, embed_dim=32, vocab=None, optimizer="adamw",
                 lr=1e-3, weight_decay=0.1, batch_size=256, max_epochs=200, early_stop=None,
                 random_state=0):
        self.family = family
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.vocab = vocab
        self.optimizer = optimizer
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop = early_stop
        self.random_state = random_state

    def _check_tokens(self, X):
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != 2:
            raise ValueError(f"expected token pairs of shape (n, 2), got {X.shape}")
        if X.min() < 0:
            raise ValueError("token ids must be non-negative")
        return X

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=np.int64)
        X = self._check_tokens(X)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        vocab = int(X.max()) + 1 if self.vocab is None else int(self.vocab)
        if X.max() >= vocab:
            raise ValueError(f"token id {X.max()} outside vocab of size {vocab}")
        self.spec_ = make_spec(self.family, "tokens", hidden=self.hidden, out_dim=len(self.classes_),
                               vocab=vocab, embed_dim=self.embed_dim)
        yv = None
        if X_val is not None:
            X_val = self._check_tokens(X_val)
            yv = self.label_encoder_.transform(np.asarray(y_val))
        ds = ArrayDataset(X, self.label_encoder_.transform(y), X_val, yv)
        self.params_, self.report_ = train(
            self.spec_, ds,
            TrainConfig(self.batch_size, self.max_epochs, self.early_stop, "xent", seed=self.random_state),
            OptimizerConfig(self.optimizer, self.lr, self.weight_decay), seed=self.random_state)
        self.n_features_in_ = 2
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = self._check_tokens(X)
        if X.max() >= self.spec_.vocab:
            raise ValueError(f"token id {X.max()} outside vocab of size {self.spec_.vocab}")
        return predict(self.spec_, self.params_, X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def interaction_matrices(self, n=None):
        """Logit tables ``out[k, a, b]`` over every token pair (class order follows ``classes_``)."""
        check_is_fitted(self, "params_")
        return class_interaction_matrices(self.spec_, self.params_, n)


class PairRegressor(RegressorMixin, BaseEstimator):
    """Regression on real vectors.

    With ``split`` set, bilinear models multiply projections of
    ``X[:, :split]`` and ``X[:, split:]``; otherwise both projections read
    the whole row. A 1-D target uses a scalar read-out, a 2-D target one
    output per column.
    """

    def __init__(self, family="bilinear", hidden=64, split=None, optimizer="adam", lr=1e-3,
                 weight_decay=0.0, batch_size=256, epochs=50, l1=0.0, init="default", random_state=0):
        self.family = family
        self.hidden = hidden
        self.split = split
        self.optimizer = optimizer
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.l1 = l1
        self.init = init
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        y = np.asarray(y, dtype=np.float64)
        self.scalar_target_ = y.ndim == 1
        out_dim = 1 if self.scalar_target_ else y.shape[1]
        task = "vector" if self.split is None else "pair"
        self.spec_ = make_spec(self.family, task, hidden=self.hidden, out_dim=out_dim,
                               head="scalar" if self.scalar_target_ else "regression", input_dim=X.shape[1],
                               split=self.split or 0, init=self.init)
        self.params_, self.report_ = train(
            self.spec_, ArrayDataset(X, y, None, None),
            TrainConfig(self.batch_size, self.epochs, None, "mse", self.l1, seed=self.random_state),
            OptimizerConfig(self.optimizer, self.lr, self.weight_decay), seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = predict(self.spec_, self.params_, X)
        return out[:, 0] if self.scalar_target_ else out

    def interaction_matrix(self, direction=None):
        """``W1 diag(w) W2^T`` of a fitted bilinear model."""
        check_is_fitted(self, "params_")
        return extract_bilinear_interaction(self.spec_, self.params_, direction)
