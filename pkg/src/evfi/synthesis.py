"""Proxy-guided synthesis: direct and transitional branches plus their fusion.

All images here are channel-first torch tensors, ``(3, H, W)`` or
``(N, 3, H, W)``; voxel grids are ``(B, H, W)`` / ``(N, B, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn as nn

from .errors import EmptySliceList, ShapeMismatch
from .events import EventStream, VoxelGrid
from .inputs import event_inputs
from .networks import HourglassConfig, build_hourglass


class ResidualImageNet(nn.Module):
    """``clamp(image + hourglass([image, events]))``; the head starts at zero."""

    def __init__(self, bins: int, base_width: int = 32, levels: int = 3, seed: int = 0,
                 zero_init: bool = True, norm: str = "none"):
        super().__init__()
        self.body = build_hourglass(
            HourglassConfig(3 + bins, 3, levels, base_width, norm, zero_init_head=zero_init), seed)

    def forward(self, image: torch.Tensor, events: torch.Tensor) -> torch.Tensor:
        return (image + self.body(torch.cat([image, events], 1))).clamp(0.0, 1.0)


class CandidateFusion(nn.Module):
    """Fuse ``n`` candidate frames: their mean plus a learned correction."""

    def __init__(self, n_candidates: int, base_width: int = 32, levels: int = 3, seed: int = 0,
                 norm: str = "none"):
        super().__init__()
        self.n = n_candidates
        self.body = build_hourglass(
            HourglassConfig(3 * n_candidates, 3, levels, base_width, norm, zero_init_head=True), seed)

    def forward(self, cands: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(cands) != self.n:
            raise ShapeMismatch(f"fusion expects {self.n} candidates, got {len(cands)}")
        base = torch.stack(list(cands)).mean(0)
        return (base + self.body(torch.cat(list(cands), 1))).clamp(0.0, 1.0)


class SynthesisNets(nn.Module):
    """Networks of the synthesis branch.

    ``steps`` lists the temporal split counts of the branches; ``1`` is the
    direct branch (network ``f1``), every ``T > 1`` a transitional chain with
    its own shared-across-steps network (``f2`` for the first such ``T``).
    """

    def __init__(self, bins: int = 5, steps: Sequence[int] = (1, 2), base_width: int = 32,
                 levels: int = 3, seed: int = 0, norm: str = "none"):
        super().__init__()
        self.bins = bins
        self.steps = tuple(sorted(set(int(s) for s in steps)))
        if not self.steps or self.steps[0] < 1:
            raise ValueError("steps must be positive integers")
        self.f1 = ResidualImageNet(bins, base_width, levels, seed + 1, norm=norm) if 1 in self.steps else None
        self.chains = nn.ModuleDict({
            str(T): ResidualImageNet(bins, base_width, levels, seed + 1 + T, norm=norm)
            for T in self.steps if T > 1
        })
        self.fusion = CandidateFusion(2 * len(self.steps), base_width, levels, seed + 11, norm)

    @property
    def f2(self) -> nn.Module | None:
        for T in self.steps:
            if T > 1:
                return self.chains[str(T)]
        return None


def _grid_tensor(e) -> torch.Tensor:
    if isinstance(e, VoxelGrid):
        return torch.from_numpy(e.data).float()
    return e


def _batched(image: torch.Tensor, events: torch.Tensor):
    if image.dim() == 3:
        return image.unsqueeze(0), events.unsqueeze(0), True
    return image, events, False


def direct_synthesize(image: torch.Tensor, events, net: nn.Module) -> torch.Tensor:
    """One-shot synthesis of the target frame from a boundary frame and its events."""
    ev = _grid_tensor(events)
    img, ev, squeeze = _batched(image, ev)
    if img.shape[-2:] != ev.shape[-2:] or img.shape[0] != ev.shape[0]:
        raise ShapeMismatch(f"image {tuple(image.shape)} vs events {tuple(ev.shape)}")
    out = net(img, ev)
    return out[0] if squeeze else out


def transitional_synthesize(image: torch.Tensor, slices, net: nn.Module):
    """Chain ``P_1 = net(image, E_1)``, ``P_i = net(P_{i-1}, E_i)``.

    Returns ``(proxies, final)`` with ``final = proxies[-1]``.
    """
    slices = list(slices)
    if not slices:
        raise EmptySliceList("transitional synthesis needs at least one event slice")
    proxies = []
    current = image
    for s in slices:
        current = direct_synthesize(current, s, net)
        proxies.append(current)
    return proxies, proxies[-1]


def synthesis_fuse(cands: Sequence[torch.Tensor], net: CandidateFusion) -> torch.Tensor:
    shape = cands[0].shape
    if any(c.shape != shape for c in cands):
        raise ShapeMismatch("fusion candidates differ in shape")
    if len(shape) == 3:
        return net([c.unsqueeze(0) for c in cands])[0]
    return net(list(cands))


@dataclass
class SynthesisOutput:
    candidates: dict  # e.g. "T1_fwd", "T2_bwd" -> final image of that branch
    proxies: dict  # "T2_fwd" -> list of all chain outputs
    fused: torch.Tensor
    steps: tuple = field(default=(1, 2))

    def _main(self) -> int:
        return next(T for T in self.steps if T > 1)

    @property
    def direct_fwd(self):
        return self.candidates.get("T1_fwd")

    @property
    def direct_bwd(self):
        return self.candidates.get("T1_bwd")

    @property
    def proxies_fwd(self):
        return self.proxies[f"T{self._main()}_fwd"]

    @property
    def proxies_bwd(self):
        return self.proxies[f"T{self._main()}_bwd"]

    @property
    def proxy_fwd_final(self):
        return self.candidates[f"T{self._main()}_fwd"]

    @property
    def proxy_bwd_final(self):
        return self.candidates[f"T{self._main()}_bwd"]

    def supervised(self) -> dict:
        """Every output the reconstruction loss supervises, by readable name."""
        out = {"fused": self.fused}
        for key, img in self.candidates.items():
            T, side = key[1:].split("_")
            out[("direct_" if T == "1" else f"proxy{T}_") + side] = img
        return out


def synthesize_from_voxels(i0: torch.Tensor, i1: torch.Tensor, vox: dict, nets: SynthesisNets) -> SynthesisOutput:
    """Batched synthesis branch on precomputed voxel inputs (see :func:`evfi.inputs.event_inputs`)."""
    cands, proxies = {}, {}
    for T in nets.steps:
        net = nets.f1 if T == 1 else nets.chains[str(T)]
        for side, img in (("fwd", i0), ("bwd", i1)):
            v = vox[f"{side}{T}"]  # (N, T, B, H, W)
            chain, final = transitional_synthesize(img, [v[:, i] for i in range(T)], net)
            cands[f"T{T}_{side}"] = final
            proxies[f"T{T}_{side}"] = chain
    fused = synthesis_fuse(list(cands.values()), nets.fusion)
    return SynthesisOutput(cands, proxies, fused, nets.steps)


def synthesis_forward(i0: torch.Tensor, i1: torch.Tensor, events_0t: EventStream, events_t1: EventStream,
                      t: float, nets: SynthesisNets) -> SynthesisOutput:
    """Single-sample synthesis branch from raw event streams.

    ``t`` is implied by the stream windows; it is accepted for interface
    symmetry with the warping branch.
    """
    vox = event_inputs(events_0t, events_t1, nets.bins, nets.steps)
    vox = {k: v.unsqueeze(0) for k, v in vox.items()}
    out = synthesize_from_voxels(i0.unsqueeze(0), i1.unsqueeze(0), vox, nets)
    strip = lambda x: x[0]
    return SynthesisOutput(
        {k: strip(v) for k, v in out.candidates.items()},
        {k: [strip(p) for p in v] for k, v in out.proxies.items()},
        strip(out.fused), out.steps,
    )
