"""Scikit-learn style estimator wrapping the training pipeline.

The classifier is transductive: it fits on a DatasetBundle (graph + features
+ labels + split) and predicts for every node of that graph.  Hyperparameters
live on the constructor so get_params/set_params/clone compose with the
scikit-learn ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from scipy.special import softmax

from .graph import DatasetBundle
from .model import ModelConfig, evaluate, fit_model, forward
from .validation import check_bundle
from .walks import WalkParams


class FlowPathClassifier(BaseEstimator):
    """Transductive node classifier trained on sampled flow paths.

    Parameters mirror the training configuration: `layers` stacked
    propagation layers of width `hidden`, each fed by its own batch of
    (walk_p, walk_q)-biased walks of `path_len` nodes, `restarts` rounds per
    node scaled by degree importance.
    """

    def __init__(self, layers=2, hidden=50, path_len=6, walk_p=1000.0,
                 walk_q=1.0, restarts=10, learning_rate=1e-4,
                 weight_decay=1e-5, epochs=100, patience=10,
                 activation="relu", resample_per_epoch=False,
                 batch_mode="full", batch_nodes=256, seed=0):
        self.layers = layers
        self.hidden = hidden
        self.path_len = path_len
        self.walk_p = walk_p
        self.walk_q = walk_q
        self.restarts = restarts
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.patience = patience
        self.activation = activation
        self.resample_per_epoch = resample_per_epoch
        self.batch_mode = batch_mode
        self.batch_nodes = batch_nodes
        self.seed = seed

    def model_config(self) -> ModelConfig:
        return ModelConfig(layers=self.layers, hidden=self.hidden,
                           learning_rate=self.learning_rate,
                           weight_decay=self.weight_decay, epochs=self.epochs,
                           patience=self.patience, activation=self.activation,
                           seed=self.seed,
                           resample_per_epoch=self.resample_per_epoch,
                           batch_mode=self.batch_mode,
                           batch_nodes=self.batch_nodes)

    def walk_params(self) -> WalkParams:
        return WalkParams(p=self.walk_p, q=self.walk_q, path_len=self.path_len,
                          restarts=self.restarts, seed=self.seed)

    def fit(self, bundle: DatasetBundle, y=None) -> "FlowPathClassifier":
        """Train on the bundle's train split, early-stopping on its val split."""
        check_bundle(bundle)
        result = fit_model(bundle, self.model_config(), self.walk_params())
        self.params_ = result.params
        self.report_ = result.report
        self.prop_matrices_ = result.matrices
        self.bundle_ = bundle
        self.classes_ = np.arange(bundle.num_classes)
        return self

    def predict_proba(self) -> np.ndarray:
        """Class probabilities for every node of the fitted graph."""
        check_is_fitted(self, "params_")
        cache = forward(self.bundle_.features, self.prop_matrices_, self.params_,
                        self.activation)
        return softmax(cache.logits, axis=1)

    def predict(self) -> np.ndarray:
        """Predicted class id for every node (ties to the lowest class id)."""
        check_is_fitted(self, "params_")
        cache = forward(self.bundle_.features, self.prop_matrices_, self.params_,
                        self.activation)
        return np.argmax(cache.logits, axis=1)

    def score(self, split: str = "test") -> float:
        """Accuracy on one split of the fitted bundle."""
        check_is_fitted(self, "params_")
        return self.split_accuracy()[split]

    def split_accuracy(self) -> dict:
        check_is_fitted(self, "params_")
        return evaluate(self.params_, self.bundle_, self.prop_matrices_,
                        self.activation)
