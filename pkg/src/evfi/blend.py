"""Attention-based averaging of the synthesis and warping candidates."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from .errors import ShapeMismatch
from .networks import HourglassConfig, build_hourglass


class BlendNet(nn.Module):
    """Predicts per-pixel blending logits from the two candidates; starts at 0.5/0.5.

    Instance normalisation keeps the logits from drifting into sigmoid
    saturation before the net has learned to tell the candidates apart.
    """

    def __init__(self, base_width: int = 32, levels: int = 3, seed: int = 0, norm: str = "instance"):
        super().__init__()
        self.body = build_hourglass(HourglassConfig(6, 1, levels, base_width, norm, zero_init_head=True), seed)

    def forward(self, i_syn: torch.Tensor, i_warp: torch.Tensor) -> torch.Tensor:
        return self.body(torch.cat([i_syn, i_warp], 1))


@dataclass
class BlendOutput:
    final: torch.Tensor
    weights: torch.Tensor  # weight of the synthesis candidate, (N, 1, H, W) or (1, H, W)


def attention_blend(i_syn: torch.Tensor, i_warp: torch.Tensor, net: nn.Module) -> BlendOutput:
    """``final = w * I_syn + (1 - w) * I_warp`` with ``w = sigmoid(net(...))``."""
    if i_syn.shape != i_warp.shape:
        raise ShapeMismatch(f"{tuple(i_syn.shape)} vs {tuple(i_warp.shape)}")
    squeeze = i_syn.dim() == 3
    a, b = (i_syn.unsqueeze(0), i_warp.unsqueeze(0)) if squeeze else (i_syn, i_warp)
    w = torch.sigmoid(net(a, b))
    final = b + w * (a - b)
    if squeeze:
        return BlendOutput(final[0], w[0])
    return BlendOutput(final, w)


def save_weight_map(path: str | Path, weights: torch.Tensor) -> None:
    """Write a weight map as an 8-bit grayscale PNG (255 = synthesis)."""
    w = weights.detach().cpu().numpy().reshape(weights.shape[-2:])
    Image.fromarray(np.round(np.clip(w, 0, 1) * 255).astype(np.uint8), mode="L").save(path)
