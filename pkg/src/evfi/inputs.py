"""Assemble the voxel-grid inputs both branches consume for one target time."""

from __future__ import annotations

from typing import Iterable

import numpy as np
import torch

from .events import EventStream, reverse, slice_stream, voxelize


def uniform_boundaries(start: float, end: float, steps: int) -> list[float]:
    b = [start + (end - start) * i / steps for i in range(steps + 1)]
    b[0], b[-1] = start, end
    return b


def sliced_voxels(stream: EventStream, steps: int, bins: int) -> np.ndarray:
    """``(steps, bins, H, W)`` voxel grids of ``steps`` equal-duration slices."""
    win = stream.window
    parts = slice_stream(stream, uniform_boundaries(win.t_start, win.t_end, steps))
    return np.stack([voxelize(p, bins).data for p in parts])


def event_inputs(events_0t: EventStream, events_t1: EventStream, bins: int = 5,
                 steps: Iterable[int] = (1, 2)) -> dict[str, torch.Tensor]:
    """Voxel tensors keyed by role.

    ``fwd{T}`` / ``bwd{T}``: ``T`` chronological slices of the events leading
    from frame 0 (resp. frame 1, time-reversed) to the target.  ``t0`` is the
    reversed target-to-frame-0 stream, ``t1`` the raw target-to-frame-1 stream.
    """
    e_1t = reverse(events_t1)
    out = {}
    for T in sorted(set(steps)):
        out[f"fwd{T}"] = sliced_voxels(events_0t, T, bins)
        out[f"bwd{T}"] = sliced_voxels(e_1t, T, bins)
    out["t0"] = voxelize(reverse(events_0t), bins).data
    out["t1"] = voxelize(events_t1, bins).data
    return {k: torch.from_numpy(v.astype(np.float32)) for k, v in out.items()}
