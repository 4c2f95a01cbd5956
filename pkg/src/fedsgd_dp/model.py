"""Multinomial logistic regression on flat parameter vectors.

Parameters are the row-major flattening of a weight matrix of shape
``(n_features, n_classes)``; logits are ``x @ W``. An optional ridge term
``(l2 / 2) * ||theta||^2`` makes the objective ``l2``-strongly convex.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .data import Dataset

L1 = "l1"
L2 = "l2"


def n_params(n_features: int, n_classes: int) -> int:
    return n_features * n_classes


def zeros(data: Dataset) -> np.ndarray:
    return np.zeros(n_params(data.n_features, data.n_classes))


def _weights(params: np.ndarray, data: Dataset) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    p = n_params(data.n_features, data.n_classes)
    if params.shape != (p,):
        raise ValueError(f"params has shape {params.shape}, model needs ({p},)")
    return params.reshape(data.n_features, data.n_classes)


def _check_nonempty(data: Dataset) -> None:
    if len(data) == 0:
        raise ValueError("empty batch")


def logits(params, data: Dataset) -> np.ndarray:
    return data.features @ _weights(params, data)


def loss(params, data: Dataset, l2: float = 0.0) -> float:
    """Mean cross-entropy plus the ridge term."""
    _check_nonempty(data)
    z = logits(params, data)
    ce = logsumexp(z, axis=1) - z[np.arange(len(data)), data.labels]
    val = float(ce.mean())
    if l2:
        val += 0.5 * l2 * float(np.dot(params, params))
    return val


def _residual(params, data: Dataset) -> np.ndarray:
    z = logits(params, data)
    probs = np.exp(z - logsumexp(z, axis=1, keepdims=True))
    probs[np.arange(len(data)), data.labels] -= 1.0
    return probs


def gradient(params, data: Dataset, l2: float = 0.0) -> np.ndarray:
    """Mean of per-sample gradients of :func:`loss`."""
    _check_nonempty(data)
    g = (data.features.T @ _residual(params, data)).ravel() / len(data)
    if l2:
        g = g + l2 * np.asarray(params, dtype=np.float64)
    return g


def per_sample_gradients(params, data: Dataset, l2: float = 0.0) -> np.ndarray:
    """Row ``j`` is the gradient of the loss of sample ``j`` alone."""
    _check_nonempty(data)
    r = _residual(params, data)
    g = (data.features[:, :, None] * r[:, None, :]).reshape(len(data), -1)
    if l2:
        g = g + l2 * np.asarray(params, dtype=np.float64)
    return g


def norm(v: np.ndarray, norm_order: str) -> float:
    if norm_order == L1:
        return float(np.abs(v).sum())
    if norm_order == L2:
        return float(np.sqrt(np.dot(v, v)))
    raise ValueError(f"unknown norm order {norm_order!r}")


def clip_gradient(grad, bound: float, norm_order: str = L2) -> np.ndarray:
    """Rescale ``grad`` onto the ball of radius ``bound`` if it lies outside.

    The returned norm never exceeds ``bound``, so clipping twice is the same
    as clipping once.
    """
    if not bound > 0:
        raise ValueError("clipping bound must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    size = norm(grad, norm_order)
    if size <= bound:
        return grad
    scale = bound / size
    out = grad * scale
    # rounding can leave the result a few ulps outside the ball
    while norm(out, norm_order) > bound:
        scale = np.nextafter(scale, 0.0)
        out = grad * scale
    return out


def clip_rows(rows: np.ndarray, bound: float, norm_order: str = L2) -> np.ndarray:
    """Clip every row independently (per-sample clipping)."""
    return np.stack([clip_gradient(r, bound, norm_order) for r in rows])


def predict(params, data: Dataset) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class id
    return np.argmax(logits(params, data), axis=1)


def accuracy(params, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(params, data) == data.labels))


def smoothness_constant(data: Dataset, l2: float = 0.0) -> float:
    """Upper bound on the Hessian spectrum: ``max ||x||^2 / 2 + l2``.

    The softmax Jacobian ``diag(pi) - pi pi^T`` has spectral norm at most 1/2.
    """
    return 0.5 * float(np.max(np.einsum("ij,ij->i", data.features, data.features))) + l2


def fit_optimum(
    data: Dataset,
    l2: float,
    x0: np.ndarray | None = None,
    gtol: float = 1e-10,
    max_iter: int = 20_000,
) -> tuple[np.ndarray, bool]:
    """Minimize the regularized loss with L-BFGS.

    Returns ``(theta, converged)`` where convergence means the gradient norm
    fell below ``sqrt(gtol)``.
    """
    x0 = zeros(data) if x0 is None else np.asarray(x0, dtype=np.float64)
    res = optimize.minimize(
        lambda th: (loss(th, data, l2), gradient(th, data, l2)),
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 0.0, "maxcor": 30},
    )
    theta = res.x
    converged = float(np.linalg.norm(gradient(theta, data, l2))) < math.sqrt(gtol)
    if not converged:
        warnings.warn(
            f"optimum fit stopped with gradient norm {np.linalg.norm(gradient(theta, data, l2)):.3e}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return theta, converged


class NonConvergenceWarning(RuntimeWarning):
    pass


def gradient_descent(
    data: Dataset,
    l2: float,
    steps: int,
    lr: float,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Plain full-batch gradient descent with a constant step."""
    theta = zeros(data) if x0 is None else np.array(x0, dtype=np.float64)
    for _ in range(steps):
        theta = theta - lr * gradient(theta, data, l2)
    return theta
