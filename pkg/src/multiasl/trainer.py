"""End-to-end optimisation: batching, AdamW, evaluation and checkpointing."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .asl import LossConfig, build_pseudo_gt, aggregate_video_scores, select_topk
from .checkpoint import load_tensors, save_tensors
from .datagen import SynthVideo, WeakVideo, sample_test_indices, sample_train_indices
from .encoder import EncoderConfig, patch_means
from .losses import LossBreakdown, overall_loss
from .metrics import actionness_auc, map_c, map_s, per_class_ap
from .model import ModelConfig, MultiASL, video_scores

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    clip_length: int = 16
    val_fraction: float = 0.1
    views: list[int] | None = None
    view_fusion: str = "max"
    frame_fusion: str = "max"
    score_source: str | None = None  # "view" | "frame"; None picks by loss weights
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self) -> None:
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.score_source not in (None, "view", "frame"):
            raise ValueError("score_source must be 'view' or 'frame'")
        self.encoder.validate()
        self.loss.validate(self.clip_length)

    @property
    def scores_from(self) -> str:
        if self.score_source:
            return self.score_source
        return "view" if self.loss.view_weight > 0 else "frame"

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Prepared:
    """Training-side view of a dataset: patch means and weak labels only."""

    means: list[np.ndarray]  # per video [N, T_raw, D*p*p], float64
    labels: np.ndarray  # [M, C]

    def __len__(self) -> int:
        return len(self.means)


def prepare(videos: Sequence[WeakVideo], patch_size: int, views: Sequence[int] | None = None,
            stats: tuple[np.ndarray, np.ndarray] | None = None) -> Prepared:
    """Cache standardised patch means; ``stats`` is the (mean, std) pair from :func:`input_stats`."""
    means, labels = [], []
    for v in videos:
        frames = v.frames if views is None else v.frames[list(views)]
        m = patch_means(frames, patch_size)
        if stats is not None:
            m = (m - stats[0]) / stats[1]
        means.append(m)
        labels.append(np.asarray(v.labels, dtype=np.uint8))
    c = len(labels[0]) if labels else 0
    return Prepared(means, np.array(labels, dtype=np.uint8).reshape(len(labels), c))


def input_stats(data: Prepared) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std of raw patch means over all views and frames."""
    flat = np.concatenate([m.reshape(-1, m.shape[-1]) for m in data.means])
    return flat.mean(axis=0), np.maximum(flat.std(axis=0), 1e-8)


def _batch(data: Prepared, idx: Sequence[int], T: int, rng: np.random.Generator | None) -> np.ndarray:
    out = []
    for i in idx:
        m = data.means[i]
        frames = sample_test_indices(m.shape[1], T) if rng is None else sample_train_indices(m.shape[1], T, rng)
        out.append(m[:, frames])
    return np.stack(out)


class AdamW:
    """Adam with decoupled weight decay: p <- p * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, params: Sequence[nx.Parameter], lr: float, weight_decay: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.t = 0

    def step(self, params: Sequence[nx.Parameter]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p in params:
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(model: MultiASL, x: np.ndarray, labels: np.ndarray, opt: AdamW, loss_cfg: LossConfig) -> LossBreakdown:
    """One forward/backward/update on a batch of patch means [B, N, T, F]."""
    params = model.parameters()
    for p in params:
        p.zero_grad()
    try:
        out = model.forward(x)
        T = x.shape[2]
        idx = select_topk(out.frames, loss_cfg.top_k(T))
        _, frame_logits = aggregate_video_scores(out.frames, idx)
        pseudo = build_pseudo_gt(idx, labels, T)
        total, parts = overall_loss(out.view_logits, frame_logits, out.frames.actionness_logits,
                                    pseudo, labels, loss_cfg)
        nx.backward(total, params)
    except FloatingPointError as exc:
        bad = {p.name: float(np.abs(p.data).max()) for p in params}
        raise TrainingError(f"non-finite value during training step: {exc}; "
                            f"parameter magnitudes: {json.dumps(bad)}") from exc
    opt.step(params)
    for p in params:
        p.zero_grad()
    return parts


@dataclass
class EvalResult:
    scores: np.ndarray  # [M, C]
    actionness: np.ndarray  # [M, T]
    positives: np.ndarray  # bool [M, T]
    frame_indices: np.ndarray  # [M, T] raw indices used
    map_c: float
    map_s: float
    per_class_ap: np.ndarray

    def summary(self) -> dict:
        return {"map_c": self.map_c, "map_s": self.map_s,
                "per_class_ap": [None if np.isnan(a) else float(a) for a in self.per_class_ap]}


def evaluate(model: MultiASL, data: Prepared, T: int, loss_cfg: LossConfig, source: str = "view",
             batch_size: int = 32) -> EvalResult:
    k = loss_cfg.top_k(T)
    scores, act, pos, frames = [], [], [], []
    with nx.no_grad():
        for start in range(0, len(data), batch_size):
            idx = list(range(start, min(start + batch_size, len(data))))
            out = model.forward(_batch(data, idx, T, None))
            scores.append(video_scores(out, source, k))
            act.append(out.frames.actionness_probs.data)
            sel = select_topk(out.frames, k)
            pos.append(build_pseudo_gt(sel, data.labels[idx], T).positives)
            frames.extend(sample_test_indices(data.means[i].shape[1], T) for i in idx)
    scores = np.concatenate(scores)
    return EvalResult(scores, np.concatenate(act), np.concatenate(pos), np.array(frames),
                      map_c(scores, data.labels), map_s(scores, data.labels), per_class_ap(scores, data.labels))


def localization_auc(result: EvalResult, videos: Sequence[SynthVideo], views: Sequence[int] | None = None) -> float:
    """Mean per-video actionness AUC against planted segments visible in ``views``.

    Videos whose sampled mask is all-positive or all-negative are skipped.
    """
    aucs = []
    for p_a, frames, v in zip(result.actionness, result.frame_indices, videos):
        mask = v.segment_mask(frames, views)
        if 0 < mask.sum() < len(mask):
            aucs.append(actionness_auc(p_a, mask))
    if not aucs:
        raise ValueError("no video has both action and background frames")
    return float(np.mean(aucs))


@dataclass
class FitResult:
    model: MultiASL
    history: list[dict]
    best_epoch: int
    test: EvalResult | None
    config: TrainConfig


def _split_validation(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([cfg.seed, 99]).permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _subset(data: Prepared, idx: np.ndarray) -> Prepared:
    return Prepared([data.means[i] for i in idx], data.labels[idx])


def build_model(cfg: TrainConfig, num_views: int, num_classes: int, channels: int) -> MultiASL:
    mcfg = ModelConfig(num_classes=num_classes, num_views=num_views, channels=channels,
                       encoder=copy.deepcopy(cfg.encoder), view_fusion=cfg.view_fusion,
                       frame_fusion=cfg.frame_fusion)
    return MultiASL(mcfg, seed=cfg.seed)


def fit(cfg: TrainConfig, train: Sequence[WeakVideo], test: Sequence[WeakVideo] | None = None,
        out_dir=None, resume=None, stop_after_epoch: int | None = None) -> FitResult:
    """Train for ``cfg.epochs`` epochs and keep the epoch with the best validation mAP_C.

    Epoch 0 is the untrained model.  A validation subset is carved out of
    ``train`` (``cfg.val_fraction``); with no validation data the last epoch is
    kept.  When ``out_dir`` is set, ``train.log.jsonl`` and ``checkpoint.bin``
    are written there after every epoch; ``resume`` continues from such a
    checkpoint.  ``stop_after_epoch`` ends the run early as if interrupted.
    """
    cfg.validate()
    if not train:
        raise ValueError("empty training set")
    n_views = train[0].frames.shape[0] if cfg.views is None else len(cfg.views)
    model = build_model(cfg, n_views, len(train[0].labels), train[0].frames.shape[2])
    p = cfg.encoder.patch_size
    full = prepare([WeakVideo(v.frames, v.labels) for v in train], p, cfg.views)
    stats = input_stats(full)
    full = Prepared([(m - stats[0]) / stats[1] for m in full.means], full.labels)
    fit_idx, val_idx = _split_validation(len(full), cfg)
    train_data, val_data = _subset(full, fit_idx), _subset(full, val_idx)
    test_data = prepare([WeakVideo(v.frames, v.labels) for v in test], p, cfg.views, stats) if test else None
    model.input_stats = stats
    T, source = cfg.clip_length, cfg.scores_from
    opt = AdamW(model.parameters(), cfg.learning_rate, cfg.weight_decay)

    out_dir = Path(out_dir) if out_dir else None
    history: list[dict] = []
    start, best_epoch, best_score, best_state = 0, -1, -np.inf, None
    if resume is not None:
        start, best_epoch, best_score, best_state, history = _restore(resume, cfg, model, opt)
    else:
        row = {"epoch": 0, **_evaluate_epoch(model, val_data, test_data, T, cfg, source)}
        history.append(row)
        best_epoch, best_score, best_state = 0, row.get("val_map_c", -np.inf), model.state()
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "train.log.jsonl", "w") as fh:
            for row in history:
                fh.write(json.dumps(row) + "\n")

    for epoch in range(start + 1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch, 17])
        order = rng.permutation(len(train_data))
        sums = np.zeros(4)
        steps = 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x = _batch(train_data, idx, T, rng)
            parts = train_step(model, x, train_data.labels[idx], opt, cfg.loss)
            sums += [parts.view, parts.frame, parts.actionness, parts.total]
            steps += 1
        means = sums / max(steps, 1)
        row = {"epoch": epoch, "view": means[0], "frame": means[1], "actionness": means[2], "total": means[3],
               **_evaluate_epoch(model, val_data, test_data, T, cfg, source)}
        history.append(row)
        score = row.get("val_map_c", 0.0)
        if len(val_data) == 0 or score > best_score:
            best_epoch, best_score, best_state = epoch, score, model.state()
        log.info("epoch %d total=%.4f val_map_c=%s", epoch, row["total"], row.get("val_map_c"))
        if out_dir:
            with open(out_dir / "train.log.jsonl", "a") as fh:
                fh.write(json.dumps(row) + "\n")
            save_checkpoint(out_dir / "checkpoint.bin", cfg, model, opt, epoch, best_epoch, best_score,
                            best_state, history)
        if stop_after_epoch is not None and epoch >= stop_after_epoch:
            break

    if out_dir and not (out_dir / "checkpoint.bin").exists():
        save_checkpoint(out_dir / "checkpoint.bin", cfg, model, opt, start, best_epoch, best_score,
                        best_state, history)
    model.load_state(best_state)
    test_result = evaluate(model, test_data, T, cfg.loss, source) if test_data else None
    return FitResult(model, history, best_epoch, test_result, cfg)


def _evaluate_epoch(model, val_data, test_data, T, cfg, source) -> dict:
    row = {}
    if len(val_data) and val_data.labels.any():
        row["val_map_c"] = evaluate(model, val_data, T, cfg.loss, source).map_c
    if test_data is not None:
        r = evaluate(model, test_data, T, cfg.loss, source)
        row["test_map_c"], row["test_map_s"] = r.map_c, r.map_s
    return row


def save_checkpoint(path, cfg: TrainConfig, model: MultiASL, opt: AdamW, epoch: int, best_epoch: int,
                    best_score: float, best_state: dict, history: list[dict]) -> None:
    tensors = {}
    for name, arr in best_state.items():
        tensors["param." + name] = arr
    for name, p in model.params.items():
        tensors["last." + name] = p.data
        tensors["adam.m." + name] = opt.m[name]
        tensors["adam.v." + name] = opt.v[name]
    if getattr(model, "input_stats", None) is not None:
        tensors["input.mean"], tensors["input.std"] = model.input_stats
    meta = {"epoch": epoch, "best_epoch": best_epoch, "best_score": float(best_score),
            "adam_step": opt.t, "rng": {"seed": cfg.seed, "next_epoch": epoch + 1},
            "config": cfg.to_dict(), "config_hash": cfg.digest(),
            "num_views": model.cfg.num_views, "num_classes": model.cfg.num_classes,
            "channels": model.cfg.channels, "history": history}
    save_tensors(path, tensors, meta)


def _restore(path, cfg: TrainConfig, model: MultiASL, opt: AdamW):
    tensors, meta = load_tensors(path)
    if meta.get("config_hash") != cfg.digest():
        raise ValueError("checkpoint was written with a different configuration")
    model.load_state({k[5:]: v for k, v in tensors.items() if k.startswith("last.")})
    for name in model.params:
        opt.m[name] = tensors["adam.m." + name].copy()
        opt.v[name] = tensors["adam.v." + name].copy()
    opt.t = meta["adam_step"]
    best_state = {k[6:]: v for k, v in tensors.items() if k.startswith("param.")}
    return meta["epoch"], meta["best_epoch"], meta["best_score"], best_state, meta["history"]


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    enc = EncoderConfig(**d.pop("encoder", {}))
    loss = LossConfig(**d.pop("loss", {}))
    return TrainConfig(encoder=enc, loss=loss, **d)


def load_model(path) -> tuple[MultiASL, TrainConfig, dict]:
    """Rebuild the selected model stored in a checkpoint."""
    tensors, meta = load_tensors(path)
    cfg = config_from_dict(meta["config"])
    model = build_model(cfg, meta["num_views"], meta["num_classes"], meta["channels"])
    model.load_state({k[6:]: v for k, v in tensors.items() if k.startswith("param.")})
    if "input.mean" in tensors:
        model.input_stats = (tensors["input.mean"], tensors["input.std"])
    return model, cfg, meta
