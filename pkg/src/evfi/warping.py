"""Event-guided recurrent warping: flow init, event update, refinement, warp fusion."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ShapeMismatch
from .events import EventStream, VoxelGrid
from .flow import FlowField, WarpResult, backward_warp, compose_residual, fuse_initial_flow
from .inputs import event_inputs
from .networks import HourglassConfig, build_hourglass

# flows enter/leave the networks in units of FLOW_SCALE pixels
FLOW_SCALE = 4.0


class FlowResidualNet(nn.Module):
    """Hourglass mapping ``[flows / FLOW_SCALE, context]`` to residual flows in pixels."""

    def __init__(self, n_flows: int, context_channels: int, base_width: int = 24, levels: int = 3,
                 seed: int = 0, zero_init: bool = True, n_out: int | None = None, norm: str = "none"):
        super().__init__()
        self.n_flows = n_flows
        n_out = n_flows if n_out is None else n_out
        self.body = build_hourglass(
            HourglassConfig(2 * n_flows + context_channels, 2 * n_out, levels, base_width, norm,
                            zero_init_head=zero_init), seed)

    def forward(self, flows: list[torch.Tensor], context: torch.Tensor | None) -> list[torch.Tensor]:
        parts = [f / FLOW_SCALE for f in flows]
        if context is not None:
            parts.append(context)
        out = self.body(torch.cat(parts, 1)) * FLOW_SCALE
        return list(out.split(2, dim=1))


class WarpFusion(nn.Module):
    """Validity- and time-weighted average of the two warps plus a learned correction."""

    def __init__(self, base_width: int = 32, levels: int = 3, seed: int = 0, norm: str = "none"):
        super().__init__()
        self.body = build_hourglass(HourglassConfig(12, 3, levels, base_width, norm, zero_init_head=True), seed)

    def forward(self, w0: WarpResult, w1: WarpResult, ft0: torch.Tensor, ft1: torch.Tensor, t) -> torch.Tensor:
        if isinstance(t, torch.Tensor) and t.dim() > 0:
            t = t.reshape(-1, 1, 1, 1).to(w0.image.dtype)
        a0 = (1 - t) * w0.validity
        a1 = t * w1.validity
        norm = a0 + a1
        mean = 0.5 * (w0.image + w1.image)
        base = torch.where(norm > 0, (a0 * w0.image + a1 * w1.image) / norm.clamp_min(1e-6), mean)
        x = torch.cat([w0.image, w1.image, w0.validity, w1.validity, ft0 / FLOW_SCALE, ft1 / FLOW_SCALE], 1)
        return (base + self.body(x)).clamp(0.0, 1.0)


class WarpingNets(nn.Module):
    """Trainable parts of the warping branch.

    ``event_update=False`` drops the event-guided update stage.  With
    ``flow_source="events"`` the initial flow comes from a trainable
    event-only network and the update stage looks at the frames instead of
    the events.
    """

    def __init__(self, bins: int = 5, base_width: int = 24, fusion_width: int = 32, levels: int = 3,
                 event_update: bool = True, flow_source: str = "rgb", seed: int = 0, norm: str = "none"):
        super().__init__()
        if flow_source not in ("rgb", "events"):
            raise ValueError(f"unknown flow source {flow_source!r}")
        self.bins = bins
        self.event_update = event_update
        self.flow_source = flow_source
        update_ctx = bins if flow_source == "rgb" else 6
        self.g1 = (FlowResidualNet(1, update_ctx, base_width, levels, seed + 21, norm=norm)
                   if event_update else None)
        self.g2 = FlowResidualNet(2, 6, base_width, levels, seed + 22, norm=norm)
        self.fusion = WarpFusion(fusion_width, levels, seed + 23, norm)
        self.event_flow = (
            FlowResidualNet(0, 2 * bins, base_width, levels, seed + 24, zero_init=False, n_out=2, norm=norm)
            if flow_source == "events" else None
        )


@dataclass
class WarpingOutput:
    Ft0_init: FlowField
    Ft1_init: FlowField
    Ft0_update: FlowField
    Ft1_update: FlowField
    Ft0_refine: FlowField
    Ft1_refine: FlowField
    warped_fwd: WarpResult
    warped_bwd: WarpResult
    fused: torch.Tensor
    delta_t0: FlowField | None = None
    delta_t1: FlowField | None = None


def _unbatched_call(net, flows, ctx):
    if flows[0].dim() == 3:
        out = net([f.unsqueeze(0) for f in flows], None if ctx is None else ctx.unsqueeze(0))
        return [o[0] for o in out]
    return net(flows, ctx)


def event_update(f_init: FlowField, events, g1: FlowResidualNet) -> tuple[FlowField, FlowField]:
    """Residual flow from the initial flow and direction-matched events."""
    ev = torch.from_numpy(events.data).float() if isinstance(events, VoxelGrid) else events
    if ev.shape[-2:] != f_init.data.shape[-2:]:
        raise ShapeMismatch("events and flow differ in spatial size")
    (delta,) = _unbatched_call(g1, [f_init.data], ev)
    d = FlowField(delta, f_init.src_time, f_init.dst_time)
    return d, compose_residual(f_init, d)


def refine(ft0: FlowField, ft1: FlowField, i0: torch.Tensor, i1: torch.Tensor,
           g2: FlowResidualNet) -> tuple[FlowField, FlowField]:
    if ft0.shape != ft1.shape or i0.shape != i1.shape or i0.shape[-2:] != ft0.data.shape[-2:]:
        raise ShapeMismatch("refine inputs disagree in shape")
    d0, d1 = _unbatched_call(g2, [ft0.data, ft1.data], torch.cat([i0, i1], -3))
    return (compose_residual(ft0, FlowField(d0, ft0.src_time, ft0.dst_time)),
            compose_residual(ft1, FlowField(d1, ft1.src_time, ft1.dst_time)))


def warp_fuse(w_fwd: WarpResult, w_bwd: WarpResult, ft0: FlowField, ft1: FlowField,
              net: WarpFusion, t=0.5) -> torch.Tensor:
    if w_fwd.image.shape != w_bwd.image.shape or ft0.shape != ft1.shape:
        raise ShapeMismatch("warp_fuse inputs disagree in shape")
    if w_fwd.image.dim() == 3:
        u = lambda r: WarpResult(r.image.unsqueeze(0), r.validity.unsqueeze(0))
        return net(u(w_fwd), u(w_bwd), ft0.data.unsqueeze(0), ft1.data.unsqueeze(0), t)[0]
    return net(w_fwd, w_bwd, ft0.data, ft1.data, t)


def warp_from_flows(i0, i1, t, f01: FlowField, f10: FlowField, vox_t0, vox_t1, nets: WarpingNets) -> WarpingOutput:
    """Batched warping branch given boundary flows and voxel grids."""
    if nets.flow_source == "events":
        ft0_d, ft1_d = nets.event_flow([], torch.cat([vox_t0, vox_t1], 1))
        ft0_i, ft1_i = FlowField(ft0_d, t, 0.0), FlowField(ft1_d, t, 1.0)
    else:
        ft0_i, ft1_i = fuse_initial_flow(f01, f10, t)
    d0 = d1 = None
    if nets.g1 is None:
        ft0_u, ft1_u = ft0_i, ft1_i
    elif nets.flow_source == "events":
        ctx = torch.cat([i0, i1], 1)
        d0, ft0_u = event_update(ft0_i, ctx, nets.g1)
        d1, ft1_u = event_update(ft1_i, ctx, nets.g1)
    else:
        d0, ft0_u = event_update(ft0_i, vox_t0, nets.g1)
        d1, ft1_u = event_update(ft1_i, vox_t1, nets.g1)
    ft0_r, ft1_r = refine(ft0_u, ft1_u, i0, i1, nets.g2)
    w0 = backward_warp(i0, ft0_r)
    w1 = backward_warp(i1, ft1_r)
    fused = warp_fuse(w0, w1, ft0_r, ft1_r, nets.fusion, t)
    return WarpingOutput(ft0_i, ft1_i, ft0_u, ft1_u, ft0_r, ft1_r, w0, w1, fused, d0, d1)


def warping_forward(i0: torch.Tensor, i1: torch.Tensor, events_0t: EventStream, events_t1: EventStream,
                    t: float, estimator, nets: WarpingNets, key=None) -> WarpingOutput:
    """Single-sample warping branch from raw streams and a flow estimator."""
    vox = event_inputs(events_0t, events_t1, nets.bins, steps=(1,))
    f01, f10 = estimator.estimate(i0.unsqueeze(0), i1.unsqueeze(0), None if key is None else [key])
    out = warp_from_flows(i0.unsqueeze(0), i1.unsqueeze(0), float(t), f01, f10,
                          vox["t0"].unsqueeze(0), vox["t1"].unsqueeze(0), nets)
    s = lambda f: None if f is None else FlowField(f.data[0], f.src_time, f.dst_time)
    w = lambda r: WarpResult(r.image[0], r.validity[0])
    return WarpingOutput(s(out.Ft0_init), s(out.Ft1_init), s(out.Ft0_update), s(out.Ft1_update),
                         s(out.Ft0_refine), s(out.Ft1_refine), w(out.warped_fwd), w(out.warped_bwd),
                         out.fused[0], s(out.delta_t0), s(out.delta_t1))
