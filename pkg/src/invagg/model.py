"""Linear-logistic client model: activation, loss, gradients, and local SGD.

The model is a bias-free linear scorer w.x trained with a sigmoid activation
and logistic loss. Clients run seeded mini-batch SGD locally and report the
pseudo-gradient ``w0 - w_final``, which is what the server aggregates.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["sigmoid", "logistic_loss", "point_gradient", "predict", "local_train"]

# Largest double below 1.0; sigmoid output is clamped into (0, 1) so that
# logistic_loss stays finite for any representable score.
_ONE_BELOW = float(np.nextafter(1.0, 0.0))
_TINY = float(np.finfo(float).tiny)


def sigmoid(z):
    """Numerically stable logistic function 1 / (1 + exp(-z)).

    Accepts a scalar or array; never overflows, and the result is clamped
    into the open interval (0, 1).
    """
    arr = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ez = np.exp(arr[~pos])
    out[~pos] = ez / (1.0 + ez)
    np.clip(out, _TINY, _ONE_BELOW, out=out)
    if np.ndim(z) == 0:
        return float(out[0])
    return out


def logistic_loss(z, y):
    """Cross-entropy loss -y*log(z) - (1-y)*log(1-z) for z in (0, 1).

    Raises ValueError if any z lies outside the open unit interval.
    """
    z_arr = np.asarray(z, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if np.any(z_arr <= 0.0) or np.any(z_arr >= 1.0):
        raise ValueError("logistic_loss requires probabilities strictly inside (0, 1)")
    out = -(y_arr * np.log(z_arr) + (1.0 - y_arr) * np.log1p(-z_arr))
    if np.ndim(z) == 0 and np.ndim(y) == 0:
        return float(out)
    return out


def point_gradient(w, x, y):
    """Gradient of the logistic loss w.r.t. w at a sample: x * (s(w.x) - y).

    ``x`` may be a single feature vector of shape (d,) or a batch (n, d);
    the result has the same leading shape.
    """
    w_arr = np.asarray(w, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim == 1:
        return x_arr * (sigmoid(float(x_arr @ w_arr)) - y)
    s = sigmoid(x_arr @ w_arr)
    return x_arr * (s - np.asarray(y, dtype=float))[:, None]


def predict(w, x):
    """Decision rule: class 1 iff w.x >= 0 (the tie at zero goes to class 1)."""
    score = np.asarray(x, dtype=float) @ np.asarray(w, dtype=float)
    if np.ndim(score) == 0:
        return int(score >= 0)
    return (score >= 0).astype(int)


def local_train(w0, features, labels, lr, epochs=1.0, batch_size=None, seed=0):
    """Train locally with seeded mini-batch SGD and return the pseudo-gradient.

    The pseudo-gradient is ``w0 - w_final``, the quantity a client reports to
    the server. Each SGD step moves against the mean point_gradient of one
    mini-batch. The number of steps is ceil(epochs * num_batches), at least 1,
    so fractional epochs such as 0.1 run a prefix of an epoch. Samples are
    reshuffled at every epoch boundary by the client's own generator, making
    the result deterministic given (data, seed).

    Args:
        w0: initial weights, shape (d,).
        features: (n, d) matrix of client samples.
        labels: (n,) binary labels.
        lr: positive learning rate.
        epochs: positive, possibly fractional, number of local passes.
        batch_size: mini-batch size; None means full batch.
        seed: anything accepted by numpy.random.default_rng.

    Returns:
        Pseudo-gradient vector of shape (d,).
    """
    w0_arr = np.asarray(w0, dtype=float)
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("local_train needs a nonempty (n, d) feature matrix")
    if y.shape[0] != X.shape[0]:
        raise ValueError("features and labels disagree on sample count")
    if X.shape[1] != w0_arr.shape[0]:
        raise ValueError("feature dimension does not match the weight vector")
    if lr <= 0:
        raise ValueError("lr must be positive")
    if epochs <= 0:
        raise ValueError("epochs must be positive")
    n = X.shape[0]
    if batch_size is None or batch_size > n:
        batch_size = n
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")

    num_batches = math.ceil(n / batch_size)
    steps = max(1, math.ceil(epochs * num_batches))
    rng = np.random.default_rng(seed)
    w = w0_arr.copy()
    order = np.arange(n)
    for step in range(steps):
        b = step % num_batches
        if b == 0 and num_batches > 1:  # full batch: order is irrelevant
            order = rng.permutation(n)
        idx = order[b * batch_size:(b + 1) * batch_size]
        grad = point_gradient(w, X[idx], y[idx]).mean(axis=0)
        w = w - lr * grad
    return w0_arr - w
