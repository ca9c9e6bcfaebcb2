"""scikit-learn style front end for the plateau network."""

from __future__ import annotations

import io

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_responses
from .dataset import atomic_write, read_container, write_container
from .nn import NetworkConfig, forward, init_params, param_shapes
from .pipeline import TrainConfig, extract_sources, train_network

__all__ = ["CHECKPOINT_MAGIC", "OracleLocator", "PlateauNetLocator", "load_checkpoint"]

CHECKPOINT_MAGIC = b"WGNN"
CHECKPOINT_VERSION = 1


class PlateauNetLocator(BaseEstimator):
    """Predicts plateau probability images from array responses.

    ``fit`` trains the dense + convolutional network with ADAM on
    ``(responses, labels)``; ``predict_proba`` returns probability images and
    ``predict`` the extracted source pixels per sample.

    Parameters
    ----------
    n_channels, n_conv_layers, kernel_size : int
        Network size.
    loss_mode : {"nll_plus_pi", "nll_only"}
    weights : tuple of float
        ``(w_nll, w_pi)`` for ``nll_plus_pi``.
    field_operator : FieldOperator or list of them, optional
        Required for ``nll_plus_pi``.
    epochs, batch_size, patience, learning_rate : training schedule.
    plateau_size, threshold : peak extraction settings.
    random_state : int
        Seeds both initialisation and batch shuffling.
    """

    def __init__(self, n_channels=8, n_conv_layers=3, kernel_size=3, loss_mode="nll_plus_pi",
                 weights=(0.5, 0.5), field_operator=None, epochs=50, batch_size=8, patience=5,
                 learning_rate=1e-3, plateau_size=3, threshold=0.9, one_sided_ce=False,
                 scale_inputs=True, random_state=0):
        self.n_channels = n_channels
        self.n_conv_layers = n_conv_layers
        self.kernel_size = kernel_size
        self.loss_mode = loss_mode
        self.weights = weights
        self.field_operator = field_operator
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.learning_rate = learning_rate
        self.plateau_size = plateau_size
        self.threshold = threshold
        self.one_sided_ce = one_sided_ce
        self.scale_inputs = scale_inputs
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.loss_mode, tuple(self.weights),
                           self.patience, self.learning_rate, int(self.random_state), self.one_sided_ce)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on ``X`` (responses) and ``y`` (binary labels).

        Without a validation set the training data doubles as one.
        """
        X = check_responses(X)
        y = check_images(y, name="labels")
        if len(X) != len(y):
            raise ValueError("X and y have different lengths")
        if X_val is None:
            X_val, y_val = X, y
        X_val = check_responses(X_val, X.shape[1:])
        y_val = check_images(y_val, y.shape[1:], "labels")
        tcfg = self._train_config()
        scale = float(np.sqrt(np.mean(np.abs(X) ** 2))) if self.scale_inputs else 1.0
        self.config_ = NetworkConfig(X.shape[1:], y.shape[1:], self.n_channels, self.n_conv_layers,
                                     self.kernel_size, scale if scale > 0 else 1.0)
        params = init_params(self.config_, seed=tcfg.seed)
        op = self.field_operator if tcfg.loss_mode == "nll_plus_pi" else None
        result = train_network(params, self.config_, X, y, X_val, y_val, tcfg, op)
        self.params_ = result.params
        self.train_loss_ = result.train_loss
        self.val_loss_ = result.val_loss
        self.best_epoch_ = result.best_epoch
        return self

    def predict_proba(self, X, batch_size=64):
        check_is_fitted(self, "params_")
        X = check_responses(X, self.config_.input_dims)
        out = [forward(self.params_, X[i:i + batch_size], self.config_)[0]
               for i in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.empty((0,) + self.config_.output_dims)

    def predict(self, X):
        """Source pixel sets ``{(ix, iy), ...}`` per sample."""
        return [extract_sources(p, self.plateau_size, self.threshold) for p in self.predict_proba(X)]

    def save(self, path):
        """Write a ``WGNN`` checkpoint (JSON header + float64 tensors in order)."""
        check_is_fitted(self, "params_")
        header = {
            "network": self.config_.to_dict(),
            "estimator": {k: v for k, v in self.get_params().items() if k != "field_operator"},
            "params": [[name, list(arr.shape)] for name, arr in self.params_.items()],
            "train_loss": list(self.train_loss_),
            "val_loss": list(self.val_loss_),
            "best_epoch": int(self.best_epoch_),
        }
        header["estimator"]["weights"] = list(self.weights)
        buf = io.BytesIO()
        write_container(buf, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header)
        for arr in self.params_.values():
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        atomic_write(path, buf.getvalue())


def load_checkpoint(path, **overrides) -> PlateauNetLocator:
    with open(path, "rb") as fh:
        _, header = read_container(fh, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        raw = fh.read()
    kwargs = dict(header["estimator"])
    kwargs["weights"] = tuple(kwargs["weights"])
    kwargs.update(overrides)
    est = PlateauNetLocator(**kwargs)
    cfg = NetworkConfig(**header["network"])
    expected = param_shapes(cfg)
    params, offset = {}, 0
    for name, shape in header["params"]:
        shape = tuple(shape)
        if expected.get(name) != shape:
            raise ValueError(f"checkpoint tensor {name} has shape {shape}, config expects {expected.get(name)}")
        n = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(raw[offset:offset + n], dtype="<f8").reshape(shape).copy()
        offset += n
    if offset != len(raw):
        raise ValueError("checkpoint payload size does not match its header")
    est.config_, est.params_ = cfg, params
    est.train_loss_, est.val_loss_ = header["train_loss"], header["val_loss"]
    est.best_epoch_ = header["best_epoch"]
    return est


class OracleLocator(BaseEstimator):
    """Debug predictor that returns the given label images regardless of input."""

    def __init__(self, labels=None, plateau_size=3, threshold=0.9):
        self.labels = labels
        self.plateau_size = plateau_size
        self.threshold = threshold

    def fit(self, X=None, y=None):
        return self

    def predict_proba(self, X):
        labels = np.asarray(self.labels, dtype=float)
        if len(X) != len(labels):
            raise ValueError("oracle labels and inputs differ in length")
        return labels

    def predict(self, X):
        return [extract_sources(p, self.plateau_size, self.threshold) for p in self.predict_proba(X)]

