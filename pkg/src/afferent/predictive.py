"""Predictive-discrepancy CAT component.

A linear safe-state model predicts the next biomechanical feature vector under
healthy dynamics from the current features, the action, and a small context
vector.  Deviations from that prediction feed a logistic risk signal which can
be blended with the envelope-based CAT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .util import sigmoid

__all__ = [
    "SafeStateModel",
    "DiscrepancyParams",
    "fit_safe_model",
    "discrepancy",
    "pred_signal",
    "combine_cat",
]


@dataclass
class SafeStateModel:
    """Linear model x_hat = A [x; a; s] + b over features, action, context."""

    A: np.ndarray  # K x (K + 1 + S)
    b: np.ndarray  # length K
    residual_rms: float = 0.0
    ridge: bool = False  # set when the fit fell back to a ridge solve

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValidationError("safe-state model has non-finite coefficients")
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise ValidationError("safe-state model shape mismatch")

    def predict(self, x: np.ndarray, action: float, context: np.ndarray) -> np.ndarray:
        z = np.concatenate([np.asarray(x, float), [float(action)], np.asarray(context, float)])
        if z.shape[0] != self.A.shape[1]:
            raise ValidationError("safe-state model input length mismatch")
        return self.A @ z + self.b


@dataclass
class DiscrepancyParams:
    """Weights and calibration for the predictive risk signal."""

    w_delta: np.ndarray
    kappa: float = 10.0
    delta0: float = 0.0
    lambda_env: float = 0.7
    lambda_pred: float = 0.3

    def __post_init__(self):
        self.w_delta = np.asarray(self.w_delta, dtype=float)
        if np.any(self.w_delta < 0):
            raise ValidationError("w_delta must be nonnegative")
        if not self.kappa > 0:
            raise ValidationError("kappa must be positive")
        if self.delta0 < 0:
            raise ValidationError("delta0 must be nonnegative")
        if self.lambda_env < 0 or self.lambda_pred < 0:
            raise ValidationError("combination weights must be nonnegative")


def fit_safe_model(rollouts) -> SafeStateModel:
    """Least-squares fit of the safe-state model from healthy transitions.

    rollouts is a sequence of (x_t, a_t, s_t, x_next) tuples.  A rank-deficient
    design triggers a ridge solve with penalty 1e-6, flagged on the result.
    """
    rows = []
    targets = []
    for x, a, s, x_next in rollouts:
        rows.append(np.concatenate([np.asarray(x, float), [float(a)], np.asarray(s, float)]))
        targets.append(np.asarray(x_next, float))
    Z = np.asarray(rows)
    Y = np.asarray(targets)
    if Z.ndim != 2 or Y.ndim != 2:
        raise ConfigError("safe-model fit needs nonempty rollout tuples")
    n = Z.shape[0]
    design = np.hstack([Z, np.ones((n, 1))])
    if n < design.shape[1]:
        raise ConfigError("too few samples to fit the safe-state model")
    coef, _, rank, _ = np.linalg.lstsq(design, Y, rcond=None)
    ridge = False
    if rank < design.shape[1]:
        ridge = True
        gram = design.T @ design + 1e-6 * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ Y)
    A = coef[:-1, :].T
    b = coef[-1, :]
    resid = design @ coef - Y
    rms = float(np.sqrt(np.mean(resid**2)))
    return SafeStateModel(A=A, b=b, residual_rms=rms, ridge=ridge)


def discrepancy(x_next: np.ndarray, x_hat: np.ndarray, p: DiscrepancyParams) -> float:
    """Weighted Euclidean distance ||diag(w_delta)(x_next - x_hat)||."""
    x_next = np.asarray(x_next, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_next.shape != x_hat.shape or x_next.shape != p.w_delta.shape:
        raise ValidationError("discrepancy length mismatch")
    return float(np.linalg.norm(p.w_delta * (x_next - x_hat)))


def pred_signal(delta: float, p: DiscrepancyParams) -> float:
    """Logistic risk signal sigma(kappa * (delta - delta0))."""
    return float(sigmoid(p.kappa * (delta - p.delta0)))


def combine_cat(c_env: float, c_pred: float, p: DiscrepancyParams) -> float:
    """Convex blend of envelope and predictive components."""
    total = p.lambda_env + p.lambda_pred
    if total <= 0:
        raise ConfigError("lambda_env + lambda_pred must be positive")
    return (p.lambda_env * c_env + p.lambda_pred * c_pred) / total
