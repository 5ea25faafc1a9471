"""Two-way multi-label loss, GCE actionness loss and the combined objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .asl import LossConfig, PseudoGT
from .numerics import Tensor


def _check_labels(x: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != x.shape or x.ndim != 2:
        raise ValueError(f"logits {x.shape} and labels {labels.shape} must be matching [M, C] arrays")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    return labels.astype(bool)


def sample_wise_loss(x: Tensor, labels: np.ndarray, gamma: float = 4.0) -> Tensor:
    """Mean over rows of softplus(lse_neg(x) + gamma * lse_pos(-x / gamma)).

    Rows with no positive or no negative entry contribute zero but still
    count in the 1/M normaliser.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    x = nx.as_tensor(x)
    pos = _check_labels(x, labels)
    neg = ~pos
    valid = (pos.any(axis=1) & neg.any(axis=1)).astype(float)
    z = nx.logsumexp(x, axis=1, mask=neg) + gamma * nx.logsumexp(x * (-1.0 / gamma), axis=1, mask=pos)
    return (nx.softplus(z) * valid).sum() * (1.0 / x.shape[0])


def class_wise_loss(x: Tensor, labels: np.ndarray, gamma: float = 4.0) -> Tensor:
    """The sample-wise loss of the transposed logit matrix (normalised by C)."""
    x = nx.as_tensor(x)
    return sample_wise_loss(x.swapaxes(0, 1), np.asarray(labels).T, gamma)


def two_way_loss(x: Tensor, labels: np.ndarray, alpha: float = 1.0, gamma: float = 4.0) -> Tensor:
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    loss = sample_wise_loss(x, labels, gamma)
    if alpha == 0:
        return loss
    return loss + alpha * class_wise_loss(x, labels, gamma)


def _gce_terms(log_p: Tensor, log_not_p: Tensor, positives, negatives, q: float) -> Tensor:
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    pos = np.asarray(positives, dtype=float)
    neg = np.asarray(negatives, dtype=float)
    pos_term = (1.0 - nx.exp(log_p * q)) * (1.0 / q)
    neg_term = (1.0 - nx.exp(log_not_p * q)) * (1.0 / q)
    n_pos = pos.sum(axis=-1, keepdims=True)
    n_neg = neg.sum(axis=-1, keepdims=True)
    w_pos = np.divide(pos, n_pos, out=np.zeros_like(pos), where=n_pos > 0)
    w_neg = np.divide(neg, n_neg, out=np.zeros_like(neg), where=n_neg > 0)
    return (pos_term * w_pos).sum(axis=-1) + (neg_term * w_neg).sum(axis=-1)


def gce_actionness_loss(p_a: Tensor, positives, negatives, q: float = 0.7) -> Tensor:
    """Generalized cross-entropy on actionness probabilities of one video.

    ``positives``/``negatives`` are boolean frame masks (or index lists).
    An empty negative (or positive) set contributes zero.
    """
    p_a = nx.as_tensor(p_a)
    pos, neg = _frame_mask(positives, p_a.shape[-1]), _frame_mask(negatives, p_a.shape[-1])
    if np.any(p_a.data < 0) or np.any(p_a.data > 1):
        raise ValueError("actionness probabilities must lie in [0, 1]")
    # frames outside a mask are pinned to 1 so log() stays finite there
    log_p = nx.log(p_a * pos + (~pos))
    log_not_p = nx.log((1.0 - p_a) * neg + (~neg))
    return _gce_terms(log_p, log_not_p, pos, neg, q)


def gce_actionness_loss_from_logits(logits: Tensor, positives, negatives, q: float = 0.7) -> Tensor:
    """Same loss with p_a = sigmoid(logits); stable for saturated logits.

    Works on batches: ``logits`` and the masks are [..., T] and the result is
    the per-video loss with shape [...].
    """
    logits = nx.as_tensor(logits)
    pos, neg = _frame_mask(positives, logits.shape[-1]), _frame_mask(negatives, logits.shape[-1])
    return _gce_terms(nx.log_sigmoid(logits), nx.log_sigmoid(-logits), pos, neg, q)


def _frame_mask(frames, T: int) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.dtype == bool:
        return frames
    mask = np.zeros(T, dtype=bool)
    mask[frames.astype(int)] = True
    return mask


@dataclass
class LossBreakdown:
    view: float
    frame: float
    actionness: float
    total: float

    def as_dict(self) -> dict:
        return {"view": self.view, "frame": self.frame, "actionness": self.actionness, "total": self.total}


def overall_loss(view_logits: Tensor, frame_logits: Tensor, actionness_logits: Tensor,
                 pseudo: PseudoGT, labels: np.ndarray, cfg: LossConfig) -> tuple[Tensor, LossBreakdown]:
    """view_weight * L_view + beta1 * L_frame + beta2 * L_actionness.

    ``view_logits`` and ``frame_logits`` are [M, C] (the latter already
    mean-aggregated over the selected frames); ``actionness_logits`` is
    [M, T].  Samples flagged invalid in ``pseudo`` are left out of the frame
    and actionness terms.  Terms with zero weight are not evaluated and
    report 0.
    """
    cfg.validate()
    labels = np.asarray(labels)
    total = nx.Tensor(0.0)
    parts = {"view": 0.0, "frame": 0.0, "actionness": 0.0}
    if cfg.view_weight > 0:
        lv = two_way_loss(view_logits, labels, cfg.alpha, cfg.gamma)
        parts["view"] = float(lv.data)
        total = total + cfg.view_weight * lv
    keep = np.flatnonzero(pseudo.valid)
    if keep.size:
        if cfg.beta1 > 0:
            rows = frame_logits if keep.size == labels.shape[0] else frame_logits[keep]
            lf = two_way_loss(rows, labels[keep], cfg.alpha, cfg.gamma)
            parts["frame"] = float(lf.data)
            total = total + cfg.beta1 * lf
        if cfg.beta2 > 0:
            per_video = gce_actionness_loss_from_logits(
                actionness_logits[keep], pseudo.positives[keep], pseudo.negatives[keep], cfg.q)
            la = per_video.mean()
            parts["actionness"] = float(la.data)
            total = total + cfg.beta2 * la
    return total, LossBreakdown(total=float(total.data), **parts)
