"""Finite-difference gradient checks for every loss and every encoder layer.

Each check builds a tiny random instance, wraps it in a scalar function and
compares autodiff gradients with central differences.  Shared by the
``gradcheck`` command and the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .asl import LossConfig, aggregate_video_scores, build_pseudo_gt, init_head_params, predict_frames, select_topk
from .encoder import EncoderConfig, init_encoder_params, self_attention, spatial_encode, temporal_encode
from .fusion import fuse_frames, fuse_views
from .losses import (
    class_wise_loss, gce_actionness_loss, gce_actionness_loss_from_logits, overall_loss,
    sample_wise_loss, two_way_loss,
)

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    probes: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE

    def as_dict(self) -> dict:
        return {"check": self.name, "probes": self.probes, "max_rel_err": self.max_rel_err, "passed": self.passed}


TINY = EncoderConfig(patch_size=2, spatial_dim=4, temporal_dim=8, heads=2, layers=1, feedforward_dim=6)


def _loss_cases(rng) -> dict[str, tuple[Callable, list]]:
    M, C, T = 5, 4, 9
    labels = (rng.random((M, C)) < 0.4).astype(int)
    labels[:, 0] = [1, 0, 1, 0, 0]
    labels[:, 1] = [0, 1, 0, 1, 1]
    x = nx.Parameter(rng.normal(size=(M, C)) * 1.5, "logits")
    f = nx.Parameter(rng.normal(size=(M, C)), "frame_logits")
    a = nx.Parameter(rng.normal(size=(M, T)), "actionness_logits")
    p = nx.Parameter(rng.uniform(0.1, 0.9, T), "actionness_probs")
    pos = rng.random((M, T)) < 0.3
    pos[:, 0] = True
    pseudo = build_pseudo_gt(select_topk(rng.random((M, T, C)), 2), labels, T)
    return {
        "loss.sample_wise": (lambda: sample_wise_loss(x, labels), [x]),
        "loss.class_wise": (lambda: class_wise_loss(x, labels), [x]),
        "loss.two_way": (lambda: two_way_loss(x, labels, alpha=1.0), [x]),
        "loss.gce": (lambda: gce_actionness_loss(p, pos[0], ~pos[0]), [p]),
        "loss.gce_logits": (lambda: gce_actionness_loss_from_logits(a, pos, ~pos).sum(), [a]),
        "loss.overall": (lambda: overall_loss(x, f, a, pseudo, labels, LossConfig())[0], [x, f, a]),
    }


def _layer_cases(rng) -> dict[str, tuple[Callable, list]]:
    params = init_encoder_params(TINY, 1, rng)
    for q in params.values():
        q.data += rng.normal(scale=0.1, size=q.shape)
    heads = init_head_params(TINY.spatial_dim + TINY.temporal_dim, 3, rng)
    for q in heads.values():
        q.data += rng.normal(scale=0.3, size=q.shape)
    frames = rng.normal(size=(2, 3, 1, 4, 4))  # N=2 views, T=3
    seq = rng.normal(size=(2, 4, TINY.temporal_dim))
    w_s = rng.normal(size=(2, 3, TINY.spatial_dim))
    w_t = rng.normal(size=(2, 3, TINY.temporal_dim))
    w_c = rng.normal(size=(2, TINY.temporal_dim))
    w_a = rng.normal(size=seq.shape)
    labels = np.array([1, 0, 1])

    def by_prefix(prefix):
        return [q for k, q in params.items() if k.startswith(prefix)]

    def spatial():
        return (spatial_encode(frames, params, TINY) * w_s).sum()

    def attention():
        out, _ = self_attention(nx.Tensor(seq), params, "temporal.block0.attn.", TINY.heads)
        return (out * w_a).sum()

    def temporal():
        s = spatial_encode(frames, params, TINY)
        f_t, cls = temporal_encode(s, params, TINY)
        return (f_t * w_t).sum() + (cls * w_c).sum()

    def stack():
        s = spatial_encode(frames, params, TINY)
        f_t, cls = temporal_encode(s, params, TINY)
        fused = fuse_frames(s, f_t, "max", axis=0)
        preds = predict_frames(fused, heads)
        idx = select_topk(preds, 2)
        probs, logits = aggregate_video_scores(preds, idx)
        return ((fuse_views(cls, "max", axis=0) * w_c[0]).sum() + (logits * labels).sum()
                + (probs * labels).sum() + preds.actionness_probs.sum())

    return {
        "layer.spatial": (spatial, by_prefix("spatial.")),
        "layer.attention": (attention, by_prefix("temporal.block0.attn.")),
        "layer.temporal": (temporal, list(params.values())),
        "layer.encoder_stack": (stack, list(params.values()) + list(heads.values())),
    }


def run_gradchecks(seed: int = 0, probes: int = 100) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (fn, params) in {**_loss_cases(rng), **_layer_cases(rng)}.items():
        report = nx.finite_difference_check(fn, params, probes=probes, h=1e-5, rng=rng)
        results.append(CheckResult(name, report["probes"], report["max_rel_err"]))
    return results
