"""Shared spatial and temporal encoders.

Both encoders are applied to every view with the same parameter objects, so a
batch laid out as ``[B, N, T, ...]`` is simply treated as ``B*N`` independent
sequences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor


@dataclass
class EncoderConfig:
    patch_size: int = 8
    spatial_dim: int = 64
    temporal_dim: int = 128
    heads: int = 4
    layers: int = 1
    feedforward_dim: int = 256

    def validate(self, height: int | None = None, width: int | None = None) -> None:
        if self.temporal_dim % self.heads:
            raise ValueError("temporal_dim must be divisible by heads")
        if min(self.patch_size, self.spatial_dim, self.temporal_dim, self.heads,
               self.layers, self.feedforward_dim) < 1:
            raise ValueError("encoder sizes must be positive")
        for size in (height, width):
            if size is not None and size % self.patch_size:
                raise ValueError(f"frame size {size} not divisible by patch_size {self.patch_size}")


def _dense(rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def init_encoder_params(cfg: EncoderConfig, channels: int, rng: np.random.Generator) -> dict[str, Parameter]:
    d_in = channels * cfg.patch_size ** 2
    dt, ff = cfg.temporal_dim, cfg.feedforward_dim
    raw = {
        "spatial.weight": _dense(rng, d_in, cfg.spatial_dim),
        "spatial.bias": np.zeros(cfg.spatial_dim),
        "temporal.proj.weight": _dense(rng, cfg.spatial_dim, dt),
        "temporal.proj.bias": np.zeros(dt),
        "temporal.cls": rng.normal(0.0, 0.02, size=dt),
    }
    for i in range(cfg.layers):
        p = f"temporal.block{i}."
        raw.update({
            p + "ln1.gain": np.ones(dt), p + "ln1.bias": np.zeros(dt),
            p + "attn.q": _dense(rng, dt, dt), p + "attn.k": _dense(rng, dt, dt),
            p + "attn.v": _dense(rng, dt, dt),
            p + "attn.out.weight": _dense(rng, dt, dt), p + "attn.out.bias": np.zeros(dt),
            p + "ln2.gain": np.ones(dt), p + "ln2.bias": np.zeros(dt),
            p + "ff1.weight": _dense(rng, dt, ff), p + "ff1.bias": np.zeros(ff),
            p + "ff2.weight": _dense(rng, ff, dt), p + "ff2.bias": np.zeros(dt),
        })
    raw["temporal.norm.gain"] = np.ones(dt)
    raw["temporal.norm.bias"] = np.zeros(dt)
    return {name: Parameter(v, name) for name, v in raw.items()}


def patchify(frames: np.ndarray, patch_size: int) -> np.ndarray:
    """[..., D, H, W] -> [..., P, D*p*p] non-overlapping patches in raster order."""
    *lead, d, h, w = frames.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"frame {h}x{w} not divisible by patch_size {p}")
    k = len(lead)
    x = frames.reshape(*lead, d, h // p, p, w // p, p)
    # patch vectors are laid out (D, p, p) like a flattened frame
    x = x.transpose(*range(k), k + 1, k + 3, k, k + 2, k + 4)
    return x.reshape(*lead, (h // p) * (w // p), d * p * p)


def patch_means(frames: np.ndarray, patch_size: int) -> np.ndarray:
    """Average patch of each frame.

    Mean-pooling linearly projected patches equals projecting the mean patch,
    so training caches this once per dataset.
    """
    return patchify(np.asarray(frames, dtype=np.float64), patch_size).mean(axis=-2)


def spatial_from_patch_means(means, params: dict[str, Parameter]) -> Tensor:
    return nx.linear(nx.as_tensor(means), params["spatial.weight"], params["spatial.bias"])


def spatial_encode(frames: np.ndarray, params: dict[str, Parameter], cfg: EncoderConfig) -> Tensor:
    """[..., T, D, H, W] frames -> [..., T, D_S] features."""
    d_in = params["spatial.weight"].shape[0]
    if frames.shape[-3] * cfg.patch_size ** 2 != d_in:
        raise ValueError(f"frames with {frames.shape[-3]} channels do not match spatial weight {d_in}")
    return spatial_from_patch_means(patch_means(frames, cfg.patch_size), params)


def positional_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return pe


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, dim = x.shape
    return x.reshape(*lead, length, heads, dim // heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, length, heads * dh)


def self_attention(x: Tensor, params: dict[str, Parameter], prefix: str, heads: int):
    q = _split_heads(x @ params[prefix + "q"], heads)
    k = _split_heads(x @ params[prefix + "k"], heads)
    v = _split_heads(x @ params[prefix + "v"], heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    attn = nx.softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1)
    out = _merge_heads(attn @ v)
    return nx.linear(out, params[prefix + "out.weight"], params[prefix + "out.bias"]), attn


def temporal_encode(spatial: Tensor, params: dict[str, Parameter], cfg: EncoderConfig,
                    return_attention: bool = False):
    """[..., T, D_S] -> ([..., T, D_T] frame features, [..., D_T] CLS vector).

    With ``return_attention`` a third item lists the attention maps
    ``[..., heads, T+1, T+1]`` of every block.
    """
    if spatial.shape[-1] != params["temporal.proj.weight"].shape[0]:
        raise ValueError(f"expected spatial dim {params['temporal.proj.weight'].shape[0]}, got {spatial.shape[-1]}")
    z = nx.linear(spatial, params["temporal.proj.weight"], params["temporal.proj.bias"])
    *lead, t, dt = z.shape
    cls = nx.Tensor(np.zeros((*lead, 1, dt))) + params["temporal.cls"]
    # embeddings scaled by sqrt(D_T) so content is not swamped by the encoding
    z = nx.concat([cls, z * np.sqrt(dt)], axis=-2) + positional_encoding(t + 1, dt)
    maps = []
    for i in range(cfg.layers):
        p = f"temporal.block{i}."
        h = nx.layer_norm(z, params[p + "ln1.gain"], params[p + "ln1.bias"])
        a, attn = self_attention(h, params, p + "attn.", cfg.heads)
        maps.append(attn.data)
        z = z + a
        h = nx.layer_norm(z, params[p + "ln2.gain"], params[p + "ln2.bias"])
        h = nx.gelu(nx.linear(h, params[p + "ff1.weight"], params[p + "ff1.bias"]))
        z = z + nx.linear(h, params[p + "ff2.weight"], params[p + "ff2.bias"])
    z = nx.layer_norm(z, params["temporal.norm.gain"], params["temporal.norm.bias"])
    idx = (Ellipsis, slice(1, None), slice(None))
    out = (z[idx], z[(Ellipsis, 0, slice(None))])
    return out + (maps,) if return_attention else out
