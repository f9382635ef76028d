"""Flow fields, time-parametrised flow initialisation and backward warping.

Flow tensors are channel-first ``(..., 2, H, W)`` with channels ``(dx, dy)``
in pixels.  Flows point from the target pixel into the source image, so
``backward_warp(src, flow)(q) = src(q + flow(q))``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np
import torch

from .errors import CorruptFlowFile, ShapeMismatch

TimeLike = Union[float, torch.Tensor]

FLO_MAGIC = b"FLO2"
_FLO_HEADER = struct.Struct("<4sII")


@dataclass
class FlowField:
    data: torch.Tensor  # (2, H, W) or (N, 2, H, W)
    src_time: TimeLike = 0.0
    dst_time: TimeLike = 1.0

    def __post_init__(self):
        if self.data.dim() not in (3, 4) or self.data.shape[-3] != 2:
            raise ShapeMismatch(f"flow must be (..., 2, H, W), got {tuple(self.data.shape)}")

    @classmethod
    def from_numpy(cls, arr: np.ndarray, src_time=0.0, dst_time=1.0) -> "FlowField":
        return cls(torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)), src_time, dst_time)

    @classmethod
    def zeros(cls, h: int, w: int, batch: int | None = None, **kw) -> "FlowField":
        shape = (2, h, w) if batch is None else (batch, 2, h, w)
        return cls(torch.zeros(shape), **kw)

    @property
    def shape(self):
        return tuple(self.data.shape)

    def numpy(self) -> np.ndarray:
        return self.data.detach().cpu().numpy()


@dataclass
class WarpResult:
    image: torch.Tensor  # (N, C, H, W) or (C, H, W)
    validity: torch.Tensor  # (N, 1, H, W) or (1, H, W), values in {0, 1}


def _check_same(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def _time_view(t: TimeLike, like: torch.Tensor) -> TimeLike:
    if isinstance(t, torch.Tensor) and t.dim() > 0:
        return t.to(like.dtype).reshape(-1, *([1] * (like.dim() - 1)))
    return float(t)


def fuse_initial_flow(f01: FlowField, f10: FlowField, t: TimeLike) -> tuple[FlowField, FlowField]:
    """Quadratic-in-``t`` combination of the two boundary flows.

    ``F_t0 = -(1-t) t F01 + t^2 F10`` and ``F_t1 = (1-t)^2 F01 - t (1-t) F10``.
    """
    _check_same(f01.data, f10.data, "fuse_initial_flow")
    tt = _time_view(t, f01.data)
    ft0 = -(1 - tt) * tt * f01.data + tt * tt * f10.data
    ft1 = (1 - tt) * (1 - tt) * f01.data - tt * (1 - tt) * f10.data
    return FlowField(ft0, t, 0.0), FlowField(ft1, t, 1.0)


def compose_residual(base: FlowField, delta: FlowField) -> FlowField:
    _check_same(base.data, delta.data, "compose_residual")
    return replace(base, data=base.data + delta.data)


def backward_warp(src: torch.Tensor, flow: FlowField | torch.Tensor) -> WarpResult:
    """Bilinearly sample ``src`` at ``q + flow(q)``; zero fill outside.

    ``validity`` is 0 where none of the four bilinear taps with positive
    weight lands inside the source image.  Differentiable w.r.t. both inputs.
    """
    fl = flow.data if isinstance(flow, FlowField) else flow
    unbatched = src.dim() == 3
    if unbatched:
        src, fl = src.unsqueeze(0), fl.unsqueeze(0)
    n, c, h, w = src.shape
    if fl.shape != (n, 2, h, w):
        raise ShapeMismatch(f"flow {tuple(fl.shape)} does not match source {tuple(src.shape)}")
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=fl.dtype), torch.arange(w, dtype=fl.dtype), indexing="ij"
    )
    sx = xs + fl[:, 0]
    sy = ys + fl[:, 1]
    x0 = torch.floor(sx).detach()
    y0 = torch.floor(sy).detach()
    fx = sx - x0
    fy = sy - y0
    x0 = x0.long()
    y0 = y0.long()
    flat = src.reshape(n, c, h * w)
    out = torch.zeros_like(src)
    valid = torch.zeros((n, h, w), dtype=torch.bool)
    taps = ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy))
    for dx, dy, wt in taps:
        xi, yi = x0 + dx, y0 + dy
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape(n, 1, h * w).expand(n, c, h * w)
        vals = torch.gather(flat, 2, idx).reshape(n, c, h, w)
        wt = wt * inside.to(wt.dtype)
        out = out + wt.unsqueeze(1) * vals
        valid |= inside & (wt > 0)
    validity = valid.to(src.dtype).unsqueeze(1)
    if unbatched:
        return WarpResult(out[0], validity[0])
    return WarpResult(out, validity)


def endpoint_error(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor | None = None) -> float:
    """Mean Euclidean distance between flow vectors, optionally over a mask."""
    _check_same(pred, gt, "endpoint_error")
    d = torch.linalg.vector_norm(pred - gt, dim=-3)
    if mask is None:
        return float(d.mean())
    m = mask.to(d.dtype).reshape(d.shape)
    return float((d * m).sum() / m.sum().clamp_min(1))


def write_flow(path: str | Path, flow: FlowField | np.ndarray) -> None:
    arr = flow.numpy() if isinstance(flow, FlowField) else np.asarray(flow)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ShapeMismatch("write_flow expects a single (2, H, W) flow")
    _, h, w = arr.shape
    body = np.ascontiguousarray(arr.transpose(1, 2, 0), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FLO_HEADER.pack(FLO_MAGIC, w, h))
        fh.write(body.tobytes())


def read_flow(path: str | Path) -> FlowField:
    raw = Path(path).read_bytes()
    if len(raw) < _FLO_HEADER.size:
        raise CorruptFlowFile(f"{path}: truncated")
    magic, w, h = _FLO_HEADER.unpack_from(raw, 0)
    if magic != FLO_MAGIC:
        raise CorruptFlowFile(f"{path}: bad magic {magic!r}")
    body = raw[_FLO_HEADER.size:]
    if len(body) != w * h * 2 * 4:
        raise CorruptFlowFile(f"{path}: payload size mismatch")
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w, 2).transpose(2, 0, 1)
    return FlowField.from_numpy(arr)
