"""Attack losses evaluated on logits.

All three losses decrease as the attack makes progress, so the attack always
descends. ``ce`` is ``log softmax(z)_y`` (not its negative), ``ll`` is the logit
margin and ``dlr`` the margin divided by ``z_(1) - z_(3)``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DegenerateLossError, UnsupportedConfigError
from .model import Model, ScalarHead, input_gradient


class LossKind(str, Enum):
    CE = "ce"
    LL = "ll"
    DLR = "dlr"


def _batch(logits, y):
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    Y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if Y.shape != (Z.shape[0],):
        Y = np.broadcast_to(Y, (Z.shape[0],))
    if np.any(Y < 0) or np.any(Y >= Z.shape[1]):
        raise ValueError(f"labels out of range for {Z.shape[1]} classes")
    return Z, Y, single


def _runner_up(Z, Y):
    """Index of the largest non-true logit (lowest index on ties)."""
    masked = Z.copy()
    masked[np.arange(len(Y)), Y] = -np.inf
    return np.argmax(masked, axis=1)


def sorted_logit_indices(logits) -> np.ndarray:
    """Permutation ordering the logits descending; ties keep the lower index first."""
    z = np.asarray(logits, dtype=np.float64)
    return np.argsort(-z, axis=-1, kind="stable")


def loss_value_and_grad(kind, logits, y, *, degenerate: str = "raise"):
    """Loss values and their gradients with respect to the logits.

    ``degenerate`` controls DLR rows whose denominator is zero: ``"raise"``
    raises :class:`DegenerateLossError`; ``"zero"`` returns value 0 and a zero
    gradient for those rows, which is what the attack loop wants.
    """
    kind = LossKind(kind)
    Z, Y, single = _batch(logits, y)
    rows = np.arange(len(Y))
    grad = np.zeros_like(Z)

    if kind is LossKind.CE:
        shifted = Z - Z.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        value = logp[rows, Y]
        grad -= np.exp(logp)
        grad[rows, Y] += 1.0
    else:
        j = _runner_up(Z, Y)
        margin = Z[rows, Y] - Z[rows, j]
        grad[rows, Y] += 1.0
        grad[rows, j] -= 1.0
        if kind is LossKind.LL:
            value = margin
        else:
            if Z.shape[1] < 3:
                raise UnsupportedConfigError("DLR needs at least 3 classes")
            order = sorted_logit_indices(Z)
            p1, p3 = order[:, 0], order[:, 2]
            denom = Z[rows, p1] - Z[rows, p3]
            bad = ~(denom > 0)
            if np.any(bad) and degenerate == "raise":
                raise DegenerateLossError("DLR denominator is zero (top and third logits tie)")
            safe = np.where(bad, 1.0, denom)
            value = np.where(bad, 0.0, margin / safe)
            # quotient rule: d(m/D) = dm/D - m/D^2 dD, with dD = e_p1 - e_p3
            grad /= safe[:, None]
            coef = margin / safe**2
            grad[rows, p1] -= coef
            grad[rows, p3] += coef
            grad[bad] = 0.0

    if single:
        return value[0], grad[0]
    return value, grad


def loss_value(kind, logits, y):
    return loss_value_and_grad(kind, logits, y)[0]


def loss_head(kind, y, *, degenerate: str = "raise") -> ScalarHead:
    """Bind a label so the loss can be used as a scalar head on a model."""
    return lambda z: loss_value_and_grad(kind, z, y, degenerate=degenerate)


def loss_gradient(kind, model: Model, x, y) -> np.ndarray:
    """Gradient of the loss with respect to the model input."""
    return input_gradient(model, x, loss_head(kind, y))


def is_adversarial(logits, y) -> np.ndarray | bool:
    """True where the predicted class differs from ``y`` (argmax, lowest index wins ties)."""
    z = np.asarray(logits)
    out = np.argmax(z, axis=-1) != np.asarray(y)
    return bool(out) if np.ndim(out) == 0 else out
