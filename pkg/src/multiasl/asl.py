"""Action selection learning: frame heads, top-k selection, pseudo labels.

Selection and pseudo-label construction are plain numpy on prediction values;
no gradient flows through which frames were chosen, only through the logits
gathered at those frames.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor


@dataclass
class LossConfig:
    alpha: float = 1.0
    gamma: float = 4.0
    q: float = 0.7
    beta1: float = 1.0
    beta2: float = 1.0
    k: int | None = None  # None -> ceil(T / 8)
    view_weight: float = 1.0  # 0 drops the view-level term (loss ablations)

    def validate(self, T: int | None = None) -> None:
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if min(self.alpha, self.beta1, self.beta2, self.view_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if T is not None and not 1 <= self.top_k(T) <= T:
            raise ValueError(f"k={self.k} out of range for T={T}")

    def top_k(self, T: int) -> int:
        return self.k if self.k is not None else max(1, math.ceil(T / 8))


@dataclass
class FramePredictions:
    class_logits: Tensor  # [..., T, C]
    actionness_logits: Tensor  # [..., T]

    @property
    def class_probs(self) -> Tensor:
        return nx.sigmoid(self.class_logits)

    @property
    def actionness_probs(self) -> Tensor:
        return nx.sigmoid(self.actionness_logits)


class PseudoGT(NamedTuple):
    positives: np.ndarray  # bool [..., T]
    negatives: np.ndarray  # bool [..., T]
    valid: np.ndarray  # bool [...]; False where the label vector has no positive


def init_head_params(fused_dim: int, num_classes: int, rng: np.random.Generator) -> dict[str, Parameter]:
    std = np.sqrt(2.0 / (fused_dim + num_classes))
    return {
        "frame_cls.weight": Parameter(rng.normal(0.0, std, (fused_dim, num_classes)), "frame_cls.weight"),
        "frame_cls.bias": Parameter(np.zeros(num_classes), "frame_cls.bias"),
        # zero init: p_a starts at 0.5 everywhere, so early selection follows p_c
        "actionness.weight": Parameter(np.zeros((fused_dim, 1)), "actionness.weight"),
        "actionness.bias": Parameter(np.zeros(1), "actionness.bias"),
    }


def predict_frames(fused: Tensor, params: dict[str, Parameter]) -> FramePredictions:
    w = params["frame_cls.weight"]
    if fused.shape[-1] != w.shape[0]:
        raise ValueError(f"fused width {fused.shape[-1]} does not match head input {w.shape[0]}")
    cls = nx.linear(fused, w, params["frame_cls.bias"])
    act = nx.linear(fused, params["actionness.weight"], params["actionness.bias"])
    return FramePredictions(cls, act.reshape(act.shape[:-1]))


def selection_scores(preds: FramePredictions) -> np.ndarray:
    """p_c(t) + p_a(t), shape [..., T, C]."""
    return preds.class_probs.data + preds.actionness_probs.data[..., None]


def select_topk(preds: FramePredictions | np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` highest-scoring frames per class, shape [..., k, C].

    Accepts predictions or a precomputed [..., T, C] score array.  Ties go to
    the lower frame index; each column is returned in ascending frame order.
    """
    scores = selection_scores(preds) if isinstance(preds, FramePredictions) else np.asarray(preds)
    T = scores.shape[-2]
    if not 1 <= k <= T:
        raise ValueError(f"k={k} out of range for T={T}")
    order = np.argsort(-scores, axis=-2, kind="stable")
    return np.sort(order[..., :k, :], axis=-2)


def selected_sets(indices: np.ndarray) -> list[set[int]]:
    """Per-class frame sets from a single video's [k, C] index array."""
    return [set(int(t) for t in indices[:, c]) for c in range(indices.shape[-1])]


def aggregate_video_scores(preds: FramePredictions, indices: np.ndarray) -> tuple[Tensor, Tensor]:
    """Mean of class probabilities and of class logits over each class's frames."""
    probs = nx.take_along_axis(preds.class_probs, indices, axis=-2).mean(axis=-2)
    logits = nx.take_along_axis(preds.class_logits, indices, axis=-2).mean(axis=-2)
    return probs, logits


def build_pseudo_gt(indices: np.ndarray, labels: np.ndarray, T: int) -> PseudoGT:
    """Positive frames are the union of the selected sets of ground-truth classes.

    ``indices`` is [..., k, C]; ``labels`` is [..., C].  Every other frame is
    negative.  Samples without a positive label are flagged invalid (their
    positive set is empty).
    """
    indices = np.asarray(indices)
    labels = np.asarray(labels).astype(bool)
    if indices.shape[-1] != labels.shape[-1]:
        raise ValueError("indices and labels disagree on the number of classes")
    onehot = indices[..., None] == np.arange(T)  # [..., k, C, T]
    hits = (onehot & labels[..., None, :, None]).any(axis=(-3, -2))
    return PseudoGT(hits, ~hits, labels.any(axis=-1))
