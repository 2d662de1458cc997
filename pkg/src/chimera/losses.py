"""Loss terms for joint detection + localization training.

All functions accept either a single sequence (1-d scores / 2-d views) or a
batch (one extra leading axis) and return a scalar tensor; batch inputs are
averaged so magnitudes do not depend on batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted components of one training step, all as plain floats."""

    detector: float
    localizer: float
    disentangle: float
    align: float
    total: float


def detection_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped away from {0, 1}."""
    y = np.asarray(labels, dtype=np.float64)
    p = ad.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    ll = Tensor(y) * ad.log(p) + Tensor(1.0 - y) * ad.log(1.0 - p)
    return -ad.mean(ll)


def ranking_loss(normal_scores: Tensor, anomalous_scores: Tensor) -> Tensor:
    """Multi-instance hinge: the best-scoring position of an anomalous window
    should beat the best-scoring position of a normal window by a margin of 1.

    Inputs are per-position scores, shape [n] for one pair or [k, n] for k
    paired windows; pairs are averaged.
    """
    if normal_scores.size == 0 or anomalous_scores.size == 0:
        raise ValueError("ranking loss needs scores from both classes")
    top_normal = ad.amax(normal_scores, axis=-1)
    top_anomalous = ad.amax(anomalous_scores, axis=-1)
    hinge = ad.relu(1.0 + top_normal - top_anomalous)
    return ad.mean(hinge)


def disentanglement_loss(private_det: Tensor, private_loc: Tensor, shared: Tensor) -> Tensor:
    """Squared Frobenius norm of both private x shared cross-products.

    Zero exactly when every private row is orthogonal to every shared row.
    Views are [n, hidden] or [batch, n, hidden]; batched input is averaged
    per sequence.
    """
    batch = 1 if shared.ndim == 2 else shared.shape[0]
    shared_t = ad.swapaxes(shared, -1, -2)
    cross_d = private_det @ shared_t
    cross_l = private_loc @ shared_t
    return (ad.sum_(cross_d * cross_d) + ad.sum_(cross_l * cross_l)) / batch


def alignment_loss(attention_dist: Tensor, root_cause_dist: Tensor) -> Tensor:
    """Jensen-Shannon divergence between the two per-position distributions.

    Plain KL would be the obvious distance here but is asymmetric and would
    only pull one task toward the other; JS keeps the interaction
    bidirectional. Natural log; entries floored at 1e-12 before any log, so
    the value lives in [0, ln 2]. Rows of batched input are averaged.
    """
    a = ad.clip(attention_dist, PROB_FLOOR, 1.0)
    r = ad.clip(root_cause_dist, PROB_FLOOR, 1.0)
    mid = (a + r) * 0.5
    log_mid = ad.log(mid)
    kl_a = ad.sum_(a * (ad.log(a) - log_mid), axis=-1)
    kl_r = ad.sum_(r * (ad.log(r) - log_mid), axis=-1)
    return ad.mean(0.5 * kl_a + 0.5 * kl_r)


def combined_loss(detector: Tensor, localizer: Tensor, disentangle: Tensor,
                  align: Tensor, lambdas: tuple[float, float, float, float]) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the four terms; returns the scalar plus a float record."""
    l1, l2, l3, l4 = (float(v) for v in lambdas)
    if min(l1, l2, l3, l4) < 0:
        raise ValueError("loss weights must be non-negative")
    total = l1 * detector + l2 * localizer + l3 * disentangle + l4 * align
    breakdown = LossBreakdown(
        detector=detector.item(),
        localizer=localizer.item(),
        disentangle=disentangle.item(),
        align=align.item(),
        total=total.item(),
    )
    return total, breakdown
