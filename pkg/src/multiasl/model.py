"""The full network: shared encoders, both fusion levels and all heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .asl import FramePredictions, aggregate_video_scores, init_head_params, predict_frames, select_topk
from .encoder import EncoderConfig, init_encoder_params, spatial_from_patch_means, temporal_encode
from .fusion import FusionKind, fuse_frames, fuse_views
from .numerics import Parameter, Tensor


@dataclass
class ModelConfig:
    num_classes: int = 6
    num_views: int = 4
    channels: int = 3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    view_fusion: str = "max"
    frame_fusion: str = "max"

    def validate(self) -> None:
        self.encoder.validate()
        FusionKind.parse(self.view_fusion)
        if FusionKind.parse(self.frame_fusion) is FusionKind.CONCAT:
            raise ValueError("concat is only available for view-level fusion")


@dataclass
class ModelOutput:
    spatial: Tensor  # [B, N, T, D_S]
    temporal: Tensor  # [B, N, T, D_T]
    cls: Tensor  # [B, N, D_T]
    view_logits: Tensor  # [B, C]
    frames: FramePredictions


class MultiASL:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng([seed, 1])
        enc = cfg.encoder
        self.params: dict[str, Parameter] = init_encoder_params(enc, cfg.channels, rng)
        view_in = enc.temporal_dim * (cfg.num_views if FusionKind.parse(cfg.view_fusion) is FusionKind.CONCAT else 1)
        std = np.sqrt(2.0 / (view_in + cfg.num_classes))
        self.params["view_cls.weight"] = Parameter(rng.normal(0.0, std, (view_in, cfg.num_classes)), "view_cls.weight")
        self.params["view_cls.bias"] = Parameter(np.zeros(cfg.num_classes), "view_cls.bias")
        self.params.update(init_head_params(enc.spatial_dim + enc.temporal_dim, cfg.num_classes, rng))
        # (mean, std) of training patch means; inputs are standardised with it before forward()
        self.input_stats: tuple[np.ndarray, np.ndarray] | None = None

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def forward(self, means: np.ndarray) -> ModelOutput:
        """``means``: patch means shaped [B, N, T, D*p*p]."""
        if means.ndim != 4 or means.shape[1] != self.cfg.num_views:
            raise ValueError(f"expected [B, {self.cfg.num_views}, T, F] input, got {means.shape}")
        spatial = spatial_from_patch_means(means, self.params)
        temporal, cls = temporal_encode(spatial, self.params, self.cfg.encoder)
        w = self.params["view_cls.weight"]
        fused_view = fuse_views(cls, self.cfg.view_fusion, axis=1, expected_dim=w.shape[0])
        view_logits = nx.linear(fused_view, w, self.params["view_cls.bias"])
        fused_frames = fuse_frames(spatial, temporal, self.cfg.frame_fusion, axis=1)
        return ModelOutput(spatial, temporal, cls, view_logits, predict_frames(fused_frames, self.params))

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"state/parameter name mismatch: {sorted(missing)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data[...] = state[k]


def video_scores(out: ModelOutput, source: str, k: int) -> np.ndarray:
    """Video-level class scores from the view classifier or the frame branch."""
    if source == "view":
        return nx.sigmoid(out.view_logits).data
    if source == "frame":
        probs, _ = aggregate_video_scores(out.frames, select_topk(out.frames, k))
        return probs.data
    raise ValueError(f"unknown score source {source!r}")
