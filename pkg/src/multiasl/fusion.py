"""Cross-view fusion of CLS vectors and of per-frame features."""
from __future__ import annotations

import enum
from typing import Sequence

from . import numerics as nx
from .numerics import Tensor


class FusionKind(str, enum.Enum):
    MAX = "max"
    MEAN = "mean"
    SUM = "sum"
    CONCAT = "concat"

    @classmethod
    def parse(cls, value) -> "FusionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown fusion kind {value!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


def _as_stack(views, axis: int) -> tuple[Tensor, int]:
    if isinstance(views, Tensor):
        if views.shape[axis] == 0:
            raise ValueError("cannot fuse an empty set of views")
        return views, axis
    views = list(views)
    if not views:
        raise ValueError("cannot fuse an empty set of views")
    shapes = {nx.as_tensor(v).shape for v in views}
    if len(shapes) != 1:
        raise ValueError(f"views have mismatched shapes {sorted(shapes)}")
    return nx.stack(views, axis=0), 0


def _pool(x: Tensor, kind: FusionKind, axis: int) -> Tensor:
    if kind is FusionKind.MAX:
        return nx.amax(x, axis=axis)
    if kind is FusionKind.MEAN:
        return x.mean(axis=axis)
    if kind is FusionKind.SUM:
        return x.sum(axis=axis)
    raise ValueError(f"{kind.value} is not a pooling fusion")


def fuse_views(cls_vectors: Tensor | Sequence[Tensor], kind="max", axis: int = 0,
               expected_dim: int | None = None) -> Tensor:
    """Fuse per-view CLS vectors along the view axis.

    ``cls_vectors`` is either a list of equally shaped tensors or one tensor
    whose ``axis`` indexes views.  Concat joins views in order along the
    feature (last) axis; ``expected_dim`` lets the caller assert the width its
    classifier was built for.
    """
    kind = FusionKind.parse(kind)
    x, axis = _as_stack(cls_vectors, axis)
    if kind is not FusionKind.CONCAT:
        out = _pool(x, kind, axis)
    else:
        axis %= x.ndim
        x = x.swapaxes(axis, x.ndim - 2) if axis != x.ndim - 2 else x
        *lead, n, d = x.shape
        out = x.reshape(*lead, n * d)
    if expected_dim is not None and out.shape[-1] != expected_dim:
        raise ValueError(f"fused width {out.shape[-1]} does not match classifier input {expected_dim}")
    return out


def fuse_frames(spatial: Tensor | Sequence[Tensor], temporal: Tensor | Sequence[Tensor],
                kind="max", axis: int = 0) -> Tensor:
    """Per-frame cross-view fusion, then [spatial | temporal] concatenation.

    Inputs are ``[T, D_S]`` / ``[T, D_T]`` per view (or stacked with a view
    axis); the result is ``[..., T, D_S + D_T]``.
    """
    kind = FusionKind.parse(kind)
    if kind is FusionKind.CONCAT:
        raise ValueError("concat is only available for view-level fusion")
    s, s_axis = _as_stack(spatial, axis)
    t, t_axis = _as_stack(temporal, axis)
    if s.shape[s_axis] != t.shape[t_axis] or s.shape[:-1] != t.shape[:-1]:
        raise ValueError(f"spatial {s.shape} and temporal {t.shape} features disagree")
    return nx.concat([_pool(s, kind, s_axis), _pool(t, kind, t_axis)], axis=-1)
