"""Which losses let a gradient step transmit the label, and which cannot.

The construction recovers y from the loss gradient at the zero prediction,
so everything hinges on y -> grad l(y, 0) being linear and invertible.
Squared error gives -y (trivially invertible).  Softmax cross-entropy gives
(C - I)y with C the constant 1/d_y matrix; C - I annihilates the all-ones
direction, but valid labels (one-hot or probability vectors) all share
sum(y) = 1, so label *differences* are sum-zero, C kills them, and the map
acts as -I exactly where it matters.  Losses with piecewise-constant
gradients (l1, hinge, Huber tails) collapse distinct labels onto one
gradient and cannot transmit them.
"""

from __future__ import annotations

import numpy as np

__all__ = ["loss_gradient_matrix", "gradient_at_zero", "loss_counterexample"]


def loss_gradient_matrix(loss: str, d_y: int):
    """(A, invertible) with grad l(y, 0) = A y for valid labels.

    Invertibility is judged where labels can differ: the full space for MSE,
    the sum-zero difference subspace for cross-entropy (the affine constraint
    sum(y) = 1 removes the one direction C - I annihilates).
    """
    if d_y < 1:
        raise ValueError("d_y must be at least 1")
    if loss == "mse":
        a = -np.eye(d_y)
        return a, bool(abs(np.linalg.det(a)) > 1e-12)
    if loss == "xent":
        if d_y < 2:
            raise ValueError("cross-entropy needs d_y >= 2")
        a = np.full((d_y, d_y), 1.0 / d_y) - np.eye(d_y)
        return a, bool(abs(restricted_determinant(a)) > 1e-12)
    raise ValueError(f"unsupported loss {loss!r} (have mse, xent)")


def restricted_determinant(a: np.ndarray) -> float:
    """Determinant of ``a`` restricted to the sum-zero subspace.

    Columns of an orthonormal basis Q of {v : sum(v) = 0} give the restricted
    operator Q^T A Q; its determinant is the volume scaling on label
    differences.
    """
    d = a.shape[0]
    # Basis of the orthogonal complement of the all-ones vector.
    q, _ = np.linalg.qr(np.eye(d) - np.full((d, d), 1.0 / d))
    q = q[:, :d - 1]
    return float(np.linalg.det(q.T @ a @ q))


def gradient_at_zero(loss: str, y: np.ndarray) -> np.ndarray:
    """grad_yhat l(y, yhat) evaluated at yhat = 0, componentwise."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if loss == "mse":                      # l = ||y - p||² / 2
        return -y
    if loss == "xent":                     # softmax(0) is uniform
        return np.full(y.shape, 1.0 / y.size) - y
    if loss == "l1":                       # l = |y - p| summed
        return -np.sign(y)
    if loss == "hinge":                    # margin form: max(0, |y - p| - 1)
        return np.where(np.abs(y) > 1.0, -np.sign(y), 0.0)
    if loss == "huber":                    # delta = 1; linear tails
        return np.where(np.abs(y) <= 1.0, -y, -np.sign(y))
    raise ValueError(f"unsupported loss {loss!r}")


_COUNTEREXAMPLES = {
    # two distinct labels the loss gradient at zero cannot tell apart
    "l1": (1.0, 2.0),
    "hinge": (2.0, 3.0),
    "huber": (2.0, 3.0),
}


def loss_counterexample(loss: str):
    """(y1, y2, shared gradient): proof the loss cannot transmit the label."""
    try:
        y1, y2 = _COUNTEREXAMPLES[loss]
    except KeyError:
        raise ValueError(
            f"no counterexample family for {loss!r}; have {sorted(_COUNTEREXAMPLES)}"
        ) from None
    g1 = gradient_at_zero(loss, np.array([y1]))
    g2 = gradient_at_zero(loss, np.array([y2]))
    if not np.array_equal(g1, g2):
        raise AssertionError(
            f"counterexample for {loss} is broken: gradients {g1} vs {g2}")
    return y1, y2, float(g1[0])
