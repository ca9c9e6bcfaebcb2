"""Input checks shared by the estimators.

sklearn's ``check_array`` rejects complex input, so responses get their own
checker here.
"""

import numpy as np


def check_responses(X, shape=None):
    """Return ``X`` as a complex ``(n_samples, N_r, N_f)`` array.

    A single ``(N_r, N_f)`` tensor is not promoted; shapes are never guessed.
    """
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"expected responses of shape (n_samples, N_r, N_f), got {X.shape}")
    if shape is not None and X.shape[1:] != tuple(shape):
        raise ValueError(f"responses have shape {X.shape[1:]}, expected {tuple(shape)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("responses contain non-finite values")
    return X.astype(complex, copy=False)


def check_images(Y, shape=None, name="images"):
    """Return ``Y`` as a float ``(n_samples, N_x, N_y)`` array."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 3:
        raise ValueError(f"expected {name} of shape (n_samples, N_x, N_y), got {Y.shape}")
    if shape is not None and Y.shape[1:] != tuple(shape):
        raise ValueError(f"{name} have shape {Y.shape[1:]}, expected {tuple(shape)}")
    return Y


def check_same_length(a, b, what="inputs"):
    if len(a) != len(b):
        raise ValueError(f"{what} have mismatched lengths {len(a)} and {len(b)}")
