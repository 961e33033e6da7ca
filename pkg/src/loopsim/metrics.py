"""Scalar regression metrics: R², MAE, MSE.

All metrics operate in log-price space, the same space the models are
fit in, so MSE here doubles as the sampling variance base used by the
user decision model.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ZeroVarianceError", "r2", "mae", "mse"]


class ZeroVarianceError(ValueError):
    """Raised when R² is requested for a constant true-target vector."""


def _check_pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    if yt.ndim != 1 or yp.ndim != 1:
        raise ValueError("metric inputs must be 1-D vectors")
    if yt.size == 0:
        raise ValueError("metric inputs must be non-empty")
    if yt.shape != yp.shape:
        raise ValueError(f"length mismatch: {yt.size} true vs {yp.size} predicted")
    return yt, yp


def r2(y_true, y_pred) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot.

    SS_tot is taken about the mean of ``y_true``. Raises
    :class:`ZeroVarianceError` when every true value is identical, since
    the score is undefined there and silently returning 0 would mask it.
    """
    yt, yp = _check_pair(y_true, y_pred)
    ss_tot = float(np.sum((yt - yt.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVarianceError("R² undefined: all true values are identical")
    ss_res = float(np.sum((yt - yp) ** 2))
    return 1.0 - ss_res / ss_tot


def mae(y_true, y_pred) -> float:
    """Mean absolute error."""
    yt, yp = _check_pair(y_true, y_pred)
    return float(np.mean(np.abs(yt - yp)))


def mse(y_true, y_pred) -> float:
    """Mean squared error."""
    yt, yp = _check_pair(y_true, y_pred)
    return float(np.mean((yt - yp) ** 2))
