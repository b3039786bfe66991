"""Training losses: cross entropy + Dice + label-space KL, plus weight KL.

All three data terms are sums over pixels. The combined objective averages
them and adds the variational weight-space KL scaled by ``kl_scale``;
kl_scale=0 leaves the pure three-term data loss.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .errors import ShapeError


def _check_match(y_true: np.ndarray, y_pred: Variable) -> np.ndarray:
    y = np.asarray(y_true, dtype=y_pred.dtype)
    if y.shape != y_pred.value.shape:
        raise ShapeError(f"labels {y.shape} vs predictions {y_pred.value.shape}")
    return y


def loss_ce(y_true, y_pred: Variable, eps: float = 1e-7) -> Variable:
    """-sum[y ln p + (1-y) ln(1-p)], probabilities clamped to [eps, 1-eps]."""
    y = _check_match(y_true, y_pred)
    p = ad.clamp(y_pred, eps, 1.0 - eps)
    pos = ad.mul(ad.log(p), y)
    negterm = ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - y)
    return ad.neg(ad.tensor_sum(ad.add(pos, negterm)))


def loss_dice(y_true, y_pred: Variable) -> Variable:
    """1 - 2*sum(y*p) / (sum(y^2) + sum(p^2)); 0 when both maps are empty."""
    y = _check_match(y_true, y_pred)
    denom = ad.add(float((y.astype(np.float64) ** 2).sum()),
                   ad.tensor_sum(ad.mul(y_pred, y_pred)))
    if float(denom.value) == 0.0:
        return Variable(np.zeros((), dtype=y_pred.dtype))
    overlap = ad.tensor_sum(ad.mul(y_pred, y))
    return ad.sub(1.0, ad.div(ad.mul(overlap, 2.0), denom))


def loss_kld(y_true, y_pred: Variable, eps: float = 1e-7) -> Variable:
    """sum y*ln(y/p) with the 0*ln(0) = 0 convention; p clamped as in CE."""
    y = _check_match(y_true, y_pred)
    y64 = y.astype(np.float64)
    y_log_y = float(np.where(y64 > 0, y64 * np.log(np.where(y64 > 0, y64, 1.0)), 0.0).sum())
    p = ad.clamp(y_pred, eps, 1.0 - eps)
    return ad.sub(y_log_y, ad.tensor_sum(ad.mul(ad.log(p), y)))


def total_loss(y_true, y_pred: Variable, net, hp) -> Variable:
    """(ce + dice + kld)/3 + kl_scale * KL(posterior || prior)."""
    terms = loss_terms(y_true, y_pred, net, hp)
    return terms["total"]


def loss_terms(y_true, y_pred: Variable, net, hp) -> dict:
    """Combined loss plus its components (floats for bookkeeping)."""
    ce = loss_ce(y_true, y_pred, hp.clamp_epsilon)
    dice = loss_dice(y_true, y_pred)
    kld = loss_kld(y_true, y_pred, hp.clamp_epsilon)
    data = ad.mul(ad.add(ad.add(ce, dice), kld), 1.0 / 3.0)
    kl_scale = hp.kl_scale if hp.kl_scale is not None else 0.0
    if kl_scale > 0.0 and net is not None:
        weight_kl = net.kl_weights()
        total = ad.add(data, ad.mul(weight_kl, kl_scale))
        weight_kl_value = float(weight_kl.value)
    else:
        total = data
        weight_kl_value = float(net.kl_weights().value) if net is not None else 0.0
    return {
        "total": total,
        "ce": float(ce.value),
        "dice": float(dice.value),
        "kld": float(kld.value),
        "weight_kl": weight_kl_value,
    }
