"""Soft-overlap loss kernels with analytic gradients.

Both losses treat the ground truth as reals in {0, 1} and the prediction as
reals in [0, 1], reduce over all pixels, and are minimized by a perfect
prediction:

    jaccard_bce_loss   = 1 - (sum(t*p) + alpha) / (sum(t) + sum(p) - sum(t*p) + beta)
                         - mean(t*log(p) + (1-t)*log(1-p))
    modified_jaccard   = 1 - (sum(t*p) + alpha) / (sum(t^2) + sum(p^2) - sum(t*p) + beta)

Predictions are clipped to [eps, 1-eps] only where a logarithm is taken;
the overlap ratios use the raw values so exact inputs give exact results.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, ValidationError
from .rasters import BinaryMask, LossCoefficients, ProbabilityMap

EPS = 1e-7

LESION_COEFFS = LossCoefficients(alpha=1.0, beta=1.0)
ATTRIBUTE_COEFFS = LossCoefficients(alpha=0.0, beta=1.0)

LOSS_KINDS = ("jaccard_bce", "modified_jaccard")


def _as_flat(y) -> np.ndarray:
    if isinstance(y, (ProbabilityMap, BinaryMask)):
        y = y.data
    a = np.asarray(y, dtype=np.float64)
    return a if a.ndim == 1 else a.ravel()


def _pair(y_t, y_p) -> tuple[np.ndarray, np.ndarray]:
    t, p = _as_flat(y_t), _as_flat(y_p)
    if t.shape != p.shape:
        raise DimensionError(f"shape mismatch: {t.shape} vs {p.shape}")
    return t, p


def jaccard_bce_loss(y_t, y_p, coeffs: LossCoefficients = LESION_COEFFS) -> float:
    """Soft Jaccard plus binary cross entropy (the lesion training loss)."""
    t, p = _pair(y_t, y_p)
    inter = float(t @ p)
    union = float(t.sum() + p.sum()) - inter
    j_term = 1.0 - (inter + coeffs.alpha) / (union + coeffs.beta)
    # BCE written as t @ (log p - log(1-p)) + sum(log(1-p)), reusing buffers;
    # this function sits inside finite-difference loops, so per-call cost matters
    pc = np.clip(p, EPS, 1.0 - EPS)
    log_p = np.log(pc)
    np.subtract(1.0, pc, out=pc)
    log_q = np.log(pc, out=pc)
    bce = -(float(t @ log_p) - float(t @ log_q) + float(log_q.sum())) / t.size
    return j_term + bce


def modified_jaccard_loss(y_t, y_p, coeffs: LossCoefficients = ATTRIBUTE_COEFFS) -> float:
    """Squared-denominator soft Jaccard (the attribute training loss).

    With alpha=0, beta=1 the value lies in [0, 1]: an all-zero prediction on
    an all-zero truth scores a full 1, so the network earns nothing for
    predicting emptiness.
    """
    t, p = _pair(y_t, y_p)
    inter = float(t @ p)
    denom = float(t @ t + p @ p) - inter
    return 1.0 - (inter + coeffs.alpha) / (denom + coeffs.beta)


def loss_gradient(kind: str, y_t, y_p, coeffs: LossCoefficients | None = None) -> np.ndarray:
    """Analytic d(loss)/d(y_p), same shape as the prediction.

    Valid where the prediction lies strictly inside (eps, 1-eps), i.e. where
    the log clipping is inactive.
    """
    if kind not in LOSS_KINDS:
        raise ValidationError(f"unknown loss kind {kind!r}")
    t, p = _pair(y_t, y_p)
    shape = np.shape(y_p.data if isinstance(y_p, (ProbabilityMap, BinaryMask)) else y_p)

    if kind == "modified_jaccard":
        c = coeffs or ATTRIBUTE_COEFFS
        inter = float(t @ p)
        denom = float(t @ t + p @ p) - inter + c.beta
        grad = -(t * denom - (inter + c.alpha) * (2.0 * p - t)) / denom**2
        return grad.reshape(shape)

    c = coeffs or LESION_COEFFS
    inter = float(t @ p)
    union = float(t.sum() + p.sum()) - inter + c.beta
    grad_j = -(t * union - (inter + c.alpha) * (1.0 - t)) / union**2
    pc = np.clip(p, EPS, 1.0 - EPS)
    grad_bce = -(t / pc - (1.0 - t) / (1.0 - pc)) / t.size
    return (grad_j + grad_bce).reshape(shape)
