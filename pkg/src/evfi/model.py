"""The full interpolator: synthesis branch, warping branch and attention blend."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .blend import BlendNet, attention_blend
from .flow import FlowField
from .networks import GTFlowEstimator, TinyFlowNet, load_checkpoint, load_modules, save_checkpoint
from .synthesis import SynthesisNets, SynthesisOutput, synthesize_from_voxels
from .warping import WarpingNets, WarpingOutput, warp_from_flows

BRANCHES = ("synthesis", "warping", "averaging")


@dataclass
class ModelConfig:
    bins: int = 5
    steps: tuple = (1, 2)
    levels: int = 3
    synthesis_width: int = 32
    flow_width: int = 24
    fusion_width: int = 32
    blend_width: int = 32
    norm: str = "instance"  # normalisation inside the synthesis and warping nets
    blend_norm: str = "instance"
    event_update: bool = True
    flow_source: str = "rgb"  # rgb | events
    estimator: str = "gt"  # gt | tiny
    estimator_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.steps = tuple(int(s) for s in self.steps)


class Interpolator(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.synthesis = SynthesisNets(cfg.bins, cfg.steps, cfg.synthesis_width, cfg.levels, cfg.seed, cfg.norm)
        self.warping = WarpingNets(cfg.bins, cfg.flow_width, cfg.fusion_width, cfg.levels,
                                   cfg.event_update, cfg.flow_source, cfg.seed, cfg.norm)
        self.blend = BlendNet(cfg.blend_width, cfg.levels, cfg.seed + 31, cfg.blend_norm)
        self.flow_net = TinyFlowNet(seed=cfg.seed + 41) if cfg.estimator == "tiny" else None
        self.gt_estimator = GTFlowEstimator(sigma=cfg.estimator_sigma, seed=cfg.seed)
        self.completed: list[str] = []

    @property
    def estimator(self):
        return self.flow_net if self.flow_net is not None else self.gt_estimator

    def branch(self, name: str) -> nn.Module:
        if name == "averaging":
            return self.blend
        mod = getattr(self, name)
        if name == "warping" and self.flow_net is not None:
            return nn.ModuleList([mod, self.flow_net])
        return mod

    # -- forward passes on collated batches --------------------------------

    def synthesize(self, batch: dict) -> SynthesisOutput:
        vox = {k[4:]: v for k, v in batch.items() if k.startswith("vox_")}
        return synthesize_from_voxels(batch["i0"], batch["i1"], vox, self.synthesis)

    def warp(self, batch: dict) -> WarpingOutput:
        f01, f10 = self.boundary_flows(batch)
        return warp_from_flows(batch["i0"], batch["i1"], batch["t"], f01, f10,
                               batch["vox_t0"], batch["vox_t1"], self.warping)

    def boundary_flows(self, batch: dict) -> tuple[FlowField, FlowField]:
        if self.warping.flow_source == "events":
            n, _, h, w = batch["i0"].shape
            z = torch.zeros(n, 2, h, w)
            return FlowField(z), FlowField(z)
        return self.estimator.estimate(batch["i0"], batch["i1"], batch["key"])

    def forward(self, batch: dict) -> dict:
        syn = self.synthesize(batch)
        warp = self.warp(batch)
        blended = attention_blend(syn.fused, warp.fused, self.blend)
        return {"synthesis": syn, "warping": warp, "blend": blended}

    # -- persistence --------------------------------------------------------

    def modules_for_checkpoint(self) -> dict[str, nn.Module]:
        mods = {"synthesis": self.synthesis, "warping": self.warping, "blend": self.blend}
        if self.flow_net is not None:
            mods["flow_net"] = self.flow_net
        return mods

    def save(self, path, extra_config: dict | None = None) -> None:
        cfg = {"model": asdict(self.cfg), "completed": list(self.completed), **(extra_config or {})}
        save_checkpoint(path, self.modules_for_checkpoint(), cfg)

    @classmethod
    def load(cls, path) -> "Interpolator":
        meta, arrays = load_checkpoint(path)
        model = cls(ModelConfig(**meta["config"]["model"]))
        load_modules(arrays, model.modules_for_checkpoint())
        model.completed = list(meta["config"].get("completed", []))
        return model
