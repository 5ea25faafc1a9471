"""Synthetic multi-view videos with planted, partially visible action segments.

Each class owns a solid block with a fixed colour and position.  A segment of
class ``c`` paints that block into the frames ``[onset, offset)`` of the views
that can see it; everything else is Gaussian noise.  The generator keeps the
segment table as ground truth for localisation scoring, but the training code
only ever receives :class:`WeakVideo` views that drop it.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

MAGIC = b"MASL"
FORMAT_VERSION = 1

_RECORD_HEADER = struct.Struct("<6I")
_SEGMENT = struct.Struct("<3H")


class DatasetFormatError(ValueError):
    """Raised when a dataset file is malformed or truncated."""


@dataclass
class SynthConfig:
    num_views: int = 4
    num_classes: int = 6
    frames_per_video: int = 16
    raw_frames: int = 32
    frame_height: int = 32
    frame_width: int = 32
    channels: int = 3
    videos: int = 500
    max_concurrent_actions: int = 2
    visibility_prob: float = 0.6
    noise_std: float = 0.45
    pattern_size: int = 4
    min_segment: int = 2  # raw frames; with T_raw=32 and T=16 a segment covers 1-2 sampled frames
    max_segment: int = 4
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.num_views < 1:
            raise ValueError("num_views must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.frames_per_video < 8:
            raise ValueError("frames_per_video must be >= 8")
        if self.raw_frames < self.frames_per_video:
            raise ValueError("raw_frames must be >= frames_per_video")
        if not 0.0 < self.visibility_prob <= 1.0:
            raise ValueError("visibility_prob must lie in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 1 <= self.max_concurrent_actions <= self.num_classes:
            raise ValueError("max_concurrent_actions must lie in [1, num_classes]")
        if not 1 <= self.min_segment <= self.max_segment <= self.raw_frames:
            raise ValueError("segment lengths must satisfy 1 <= min <= max <= raw_frames")
        if self.videos < 0:
            raise ValueError("videos must be non-negative")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        ps = self.pattern_size
        if ps < 1 or self.frame_height < ps or self.frame_width < ps:
            raise ValueError("pattern_size must fit inside a frame")
        cells = (self.frame_height // ps) * (self.frame_width // ps)
        if cells < self.num_classes:
            raise ValueError("frame too small to give every class its own block")


@dataclass
class Segment:
    cls: int
    onset: int
    offset: int
    visible_views: tuple[int, ...]


@dataclass
class WeakVideo:
    """What the trainer is allowed to see: frames and video-level tags."""

    frames: np.ndarray  # float32 [N, T_raw, D, H, W]
    labels: np.ndarray  # uint8 [C]


@dataclass
class SynthVideo(WeakVideo):
    segments: list[Segment] = field(default_factory=list)

    def weak(self) -> WeakVideo:
        return WeakVideo(self.frames, self.labels)

    def segment_mask(self, indices: Sequence[int] | None = None, views: Sequence[int] | None = None) -> np.ndarray:
        """1 where some segment visible from ``views`` covers the raw frame."""
        n_raw = self.frames.shape[1]
        mask = np.zeros(n_raw, dtype=np.uint8)
        for s in self.segments:
            if views is None or set(views) & set(s.visible_views):
                mask[s.onset:s.offset] = 1
        return mask if indices is None else mask[np.asarray(indices)]


def class_pattern(cls: int, cfg: SynthConfig) -> tuple[np.ndarray, int, int]:
    """Colour vector and top-left pixel of the block that encodes ``cls``.

    Colours cycle through single channels (alternating sign once channels run
    out) and positions are spread over the block grid so that no two classes
    overlap.
    """
    ps = cfg.pattern_size
    gh, gw = cfg.frame_height // ps, cfg.frame_width // ps
    cells = gh * gw
    stride = 5 if math.gcd(5, cells) == 1 else 1
    cell = (cls * stride + 1) % cells
    colour = np.zeros(cfg.channels)
    colour[cls % cfg.channels] = 1.0 if (cls // cfg.channels) % 2 == 0 else -1.0
    return colour * 2.0, (cell // gw) * ps, (cell % gw) * ps


def _video_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _generate_one(cfg: SynthConfig, index: int) -> SynthVideo:
    rng = _video_rng(cfg.seed, index)
    n, t_raw, d, h, w = cfg.num_views, cfg.raw_frames, cfg.channels, cfg.frame_height, cfg.frame_width
    n_seg = int(rng.integers(1, cfg.max_concurrent_actions + 1))
    classes = rng.choice(cfg.num_classes, size=n_seg, replace=False)
    segments = []
    for c in sorted(int(x) for x in classes):
        length = int(rng.integers(cfg.min_segment, cfg.max_segment + 1))
        onset = int(rng.integers(0, t_raw - length + 1))
        visible = rng.random(n) < cfg.visibility_prob
        if not visible.any():
            visible[rng.integers(n)] = True
        segments.append(Segment(c, onset, onset + length, tuple(int(v) for v in np.flatnonzero(visible))))
    if cfg.noise_std > 0:
        frames = rng.normal(0.0, cfg.noise_std, size=(n, t_raw, d, h, w)).astype(np.float32)
    else:
        frames = np.zeros((n, t_raw, d, h, w), dtype=np.float32)
    ps = cfg.pattern_size
    for s in segments:
        colour, y, x = class_pattern(s.cls, cfg)
        for v in s.visible_views:
            frames[v, s.onset:s.offset, :, y:y + ps, x:x + ps] += colour[None, :, None, None].astype(np.float32)
    labels = np.zeros(cfg.num_classes, dtype=np.uint8)
    for s in segments:
        labels[s.cls] = 1
    return SynthVideo(frames, labels, segments)


def generate(cfg: SynthConfig) -> list[SynthVideo]:
    cfg.validate()
    return [_generate_one(cfg, i) for i in range(cfg.videos)]


def split_indices(labels: np.ndarray, test_fraction: float, seed: int) -> np.ndarray:
    """Stratified shuffle by label multiset; returns a boolean ``is_test`` mask.

    Videos are grouped by their exact label vector, shuffled within the group,
    and the test quota is allocated to groups by largest remainder so the
    overall ratio is exact.
    """
    labels = np.asarray(labels)
    m = len(labels)
    is_test = np.zeros(m, dtype=bool)
    if m == 0 or test_fraction == 0:
        return is_test
    rng = np.random.default_rng([seed, 0x5EED])
    keys = [row.tobytes() for row in labels.astype(np.uint8)]
    groups: dict[bytes, list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    ordered = [groups[k] for k in sorted(groups)]
    target = int(round(test_fraction * m))
    quotas = np.array([test_fraction * len(g) for g in ordered])
    take = np.floor(quotas).astype(int)
    rem = target - take.sum()
    order = np.argsort(-(quotas - take), kind="stable")
    take[order[:rem]] += 1
    for g, q in zip(ordered, take):
        members = np.array(g)
        rng.shuffle(members)
        is_test[members[:q]] = True
    return is_test


# frame index samplers

def sample_train_indices(raw_length: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """One uniformly drawn index per equal-width bin of ``[0, raw_length)``."""
    if raw_length < T:
        raise ValueError(f"raw_length {raw_length} shorter than T={T}")
    edges = np.arange(T + 1) * raw_length / T
    lo = np.ceil(edges[:-1]).astype(int)
    hi = np.ceil(edges[1:]).astype(int)
    return lo + np.floor(rng.random(T) * (hi - lo)).astype(int)


def sample_test_indices(raw_length: int, T: int) -> np.ndarray:
    """Midpoint of each equal-width bin."""
    if raw_length < T:
        raise ValueError(f"raw_length {raw_length} shorter than T={T}")
    return np.floor((np.arange(T) + 0.5) * raw_length / T).astype(int)


# binary dataset format

def _write_record(fh: BinaryIO, video: SynthVideo) -> None:
    n, t_raw, d, h, w = video.frames.shape
    c = len(video.labels)
    fh.write(_RECORD_HEADER.pack(n, t_raw, d, h, w, c))
    fh.write(np.packbits(np.asarray(video.labels, dtype=np.uint8), bitorder="little").tobytes())
    fh.write(struct.pack("<H", len(video.segments)))
    vis_bytes = (n + 7) // 8
    for s in video.segments:
        fh.write(_SEGMENT.pack(s.cls, s.onset, s.offset))
        bits = np.zeros(n, dtype=np.uint8)
        bits[list(s.visible_views)] = 1
        fh.write(np.packbits(bits, bitorder="little").tobytes()[:vis_bytes])
    fh.write(np.ascontiguousarray(video.frames, dtype="<f4").tobytes())


def write_dataset(videos: Iterable[SynthVideo], path, splits: Sequence[str] | None = None) -> Path:
    """Write ``videos`` to ``path`` plus a ``.manifest.jsonl`` sidecar."""
    path = Path(path)
    videos = list(videos)
    splits = list(splits) if splits is not None else ["train"] * len(videos)
    manifest = []
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        for i, (v, split) in enumerate(zip(videos, splits)):
            manifest.append({"index": i, "offset": fh.tell(),
                             "labels": [int(x) for x in v.labels], "split": split})
            _write_record(fh, v)
    with open(manifest_path(path), "w") as fh:
        for row in manifest:
            fh.write(json.dumps(row) + "\n")
    return path


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.jsonl")


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DatasetFormatError(f"truncated record: expected {n} bytes of {what}, got {len(buf)}")
    return buf


def read_dataset(path) -> list[SynthVideo]:
    videos = []
    with open(path, "rb") as fh:
        head = fh.read(6)
        if len(head) < 6 or head[:4] != MAGIC:
            raise DatasetFormatError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<H", head[4:])
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"{path}: unsupported format version {version}")
        while True:
            hdr = fh.read(_RECORD_HEADER.size)
            if not hdr:
                break
            if len(hdr) != _RECORD_HEADER.size:
                raise DatasetFormatError("truncated record header")
            n, t_raw, d, h, w, c = _RECORD_HEADER.unpack(hdr)
            raw = _read_exact(fh, (c + 7) // 8, "label bitmap")
            labels = np.unpackbits(np.frombuffer(raw, np.uint8), bitorder="little")[:c].astype(np.uint8)
            (n_seg,) = struct.unpack("<H", _read_exact(fh, 2, "segment count"))
            vis_bytes = (n + 7) // 8
            segments = []
            for _ in range(n_seg):
                cls, on, off = _SEGMENT.unpack(_read_exact(fh, _SEGMENT.size, "segment"))
                bits = np.unpackbits(np.frombuffer(_read_exact(fh, vis_bytes, "visibility"), np.uint8),
                                     bitorder="little")[:n]
                segments.append(Segment(cls, on, off, tuple(int(v) for v in np.flatnonzero(bits))))
            count = n * t_raw * d * h * w
            payload = _read_exact(fh, 4 * count, "frame payload")
            frames = np.frombuffer(payload, dtype="<f4").reshape(n, t_raw, d, h, w).astype(np.float32)
            videos.append(SynthVideo(frames, labels, segments))
    return videos


def read_manifest(path) -> list[dict]:
    with open(manifest_path(path)) as fh:
        return [json.loads(line) for line in fh if line.strip()]
