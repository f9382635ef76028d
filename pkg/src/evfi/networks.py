"""Hourglass U-Nets, frozen flow estimators, the toy perceptual backbone and checkpoints."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidConfig, MissingCheckpoint, MissingGroundTruth, ShapeMismatch
from .flow import FlowField

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HourglassConfig:
    in_channels: int
    out_channels: int
    levels: int = 3
    base_width: int = 32
    norm: str = "none"  # none | instance
    final_activation: str = "none"  # none | sigmoid
    zero_init_head: bool = False

    def validate(self):
        if self.levels < 1:
            raise InvalidConfig("levels must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1 or self.base_width < 1:
            raise InvalidConfig("channel counts must be positive")
        if self.norm not in ("none", "instance"):
            raise InvalidConfig(f"unknown norm {self.norm!r}")
        if self.final_activation not in ("none", "sigmoid"):
            raise InvalidConfig(f"unknown final activation {self.final_activation!r}")


def _conv_block(cin: int, cout: int, norm: str) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, o in ((cin, cout), (cout, cout)):
        layers.append(nn.Conv2d(i, o, 3, padding=1))
        if norm == "instance":
            layers.append(nn.InstanceNorm2d(o, affine=True))
        layers.append(nn.LeakyReLU(0.1))
    return nn.Sequential(*layers)


class Hourglass(nn.Module):
    """Skip-connected encoder/decoder; output spatial size equals input size.

    Inputs whose sides are not multiples of ``2**levels`` are replicate-padded
    on the bottom/right and cropped back.
    """

    def __init__(self, cfg: HourglassConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w = cfg.base_width
        self.inc = _conv_block(cfg.in_channels, w, cfg.norm)
        self.down = nn.ModuleList()
        widths = [w]
        for _ in range(cfg.levels):
            self.down.append(_conv_block(widths[-1], widths[-1] * 2, cfg.norm))
            widths.append(widths[-1] * 2)
        self.up = nn.ModuleList()
        for lvl in range(cfg.levels, 0, -1):
            self.up.append(_conv_block(widths[lvl] + widths[lvl - 1], widths[lvl - 1], cfg.norm))
        self.head = nn.Conv2d(w, cfg.out_channels, 3, padding=1)
        if cfg.zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"expected {self.cfg.in_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        m = 2**self.cfg.levels
        ph, pw = (-h) % m, (-w) % m
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        feat = self.inc(x)
        skips = [feat]
        for block in self.down:
            feat = block(F.avg_pool2d(feat, 2))
            skips.append(feat)
        skips.pop()
        for block in self.up:
            skip = skips.pop()
            feat = F.interpolate(feat, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            feat = block(torch.cat([feat, skip], 1))
        out = self.head(feat)
        if self.cfg.final_activation == "sigmoid":
            out = torch.sigmoid(out)
        return out[..., :h, :w]


def build_hourglass(cfg: HourglassConfig, seed: int = 0) -> Hourglass:
    """Construct an :class:`Hourglass` with initialisation fixed by ``seed``."""
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Hourglass(cfg)


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def param_hash(module: nn.Module) -> str:
    """CRC of every parameter's raw bytes; changes iff any bit changes."""
    crc = 0
    for name, t in sorted(module.state_dict().items()):
        crc = zlib.crc32(name.encode(), crc)
        crc = zlib.crc32(t.detach().cpu().contiguous().numpy().tobytes(), crc)
    return f"{crc:08x}"


# -- flow estimators ---------------------------------------------------------


class GTFlowEstimator:
    """Frozen estimator returning analytic scene flows, optionally corrupted.

    ``flows`` maps a sample key to ``(F01, F10)`` arrays of shape ``(2, H, W)``.
    The Gaussian corruption of std ``sigma`` pixels is fixed per key, so
    repeated calls see the same noisy flow.
    """

    trainable = False

    def __init__(self, flows: Mapping[str, tuple[np.ndarray, np.ndarray]] | None = None,
                 sigma: float = 0.0, seed: int = 0):
        self.flows = dict(flows or {})
        self.sigma = float(sigma)
        self.seed = int(seed)

    def add(self, key: str, f01: np.ndarray, f10: np.ndarray):
        self.flows[key] = (np.asarray(f01, np.float32), np.asarray(f10, np.float32))

    def _lookup(self, key: str) -> tuple[np.ndarray, np.ndarray]:
        if key not in self.flows:
            raise MissingGroundTruth(f"no ground-truth flow for sample {key!r}")
        f01, f10 = self.flows[key]
        if self.sigma > 0:
            rng = np.random.default_rng([self.seed, zlib.crc32(key.encode())])
            f01 = f01 + rng.normal(0.0, self.sigma, f01.shape).astype(np.float32)
            f10 = f10 + rng.normal(0.0, self.sigma, f10.shape).astype(np.float32)
        return f01, f10

    def estimate(self, i0: torch.Tensor, i1: torch.Tensor, keys=None) -> tuple[FlowField, FlowField]:
        if keys is None:
            raise MissingGroundTruth("ground-truth estimator needs sample keys")
        batched = i0.dim() == 4
        ks = list(keys) if batched else [keys]
        pairs = [self._lookup(k) for k in ks]
        f01 = torch.from_numpy(np.stack([p[0] for p in pairs]))
        f10 = torch.from_numpy(np.stack([p[1] for p in pairs]))
        if f01.shape[-2:] != i0.shape[-2:]:
            raise ShapeMismatch("ground-truth flow does not match frame size")
        if not batched:
            f01, f10 = f01[0], f10[0]
        return FlowField(f01, 0.0, 1.0), FlowField(f10, 1.0, 0.0)


def gt_flow_estimator(scene_flows, sigma: float = 0.0, seed: int = 0) -> GTFlowEstimator:
    return GTFlowEstimator(scene_flows, sigma=sigma, seed=seed)


class TinyFlowNet(nn.Module):
    """Trainable RGB flow estimator behind the estimator contract."""

    trainable = True

    def __init__(self, base_width: int = 16, levels: int = 3, seed: int = 0):
        super().__init__()
        self.net = build_hourglass(HourglassConfig(6, 4, levels, base_width), seed)

    def estimate(self, i0, i1, keys=None):
        out = self.net(torch.cat([i0, i1], 1)) * 4.0
        return FlowField(out[:, :2], 0.0, 1.0), FlowField(out[:, 2:], 1.0, 0.0)


# -- perceptual backbone -----------------------------------------------------


class ToyFeatureExtractor(nn.Module):
    """Frozen random conv pyramid: features at 1/2, 1/4 and 1/8 resolution.

    Channels are 8, 16 and 32; GELU keeps the loss smooth for gradient checks.
    """

    widths = (8, 16, 32)

    def __init__(self, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            chans = (3,) + self.widths
            self.stages = nn.ModuleList(
                nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1) for i in range(3)
            )
        for p in self.parameters():
            p.requires_grad_(False)
        self.trainable = False

    def extract(self, image: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = image
        for conv in self.stages:
            h = F.gelu(conv(h))
            feats.append(h)
        return feats

    forward = extract


def toy_feature_extractor(seed: int = 0) -> ToyFeatureExtractor:
    return ToyFeatureExtractor(seed)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path: str | Path, modules: Mapping[str, nn.Module], config: dict,
                    extra: Mapping[str, np.ndarray] | None = None) -> None:
    """Single ``.npz`` archive: JSON metadata plus flat float32 arrays."""
    arrays: dict[str, np.ndarray] = {}
    shapes: dict[str, list[int]] = {}
    for mname, mod in modules.items():
        for pname, t in mod.state_dict().items():
            key = f"{mname}/{pname}"
            a = t.detach().cpu().numpy()
            shapes[key] = list(a.shape)
            arrays[key] = a.astype(np.float32).ravel()
    for key, a in (extra or {}).items():
        a = np.asarray(a)
        shapes[key] = list(a.shape)
        arrays[key] = a.ravel()
    meta = {"version": CHECKPOINT_VERSION, "config": config, "shapes": shapes}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(str(path))
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise MissingCheckpoint(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k].reshape(meta["shapes"][k]) for k in z.files if k != "__meta__"}
    return meta, arrays


def load_modules(arrays: Mapping[str, np.ndarray], modules: Mapping[str, nn.Module]) -> None:
    for mname, mod in modules.items():
        state = {}
        for pname, t in mod.state_dict().items():
            key = f"{mname}/{pname}"
            if key not in arrays:
                raise MissingCheckpoint(f"checkpoint lacks {key}")
            state[pname] = torch.from_numpy(np.array(arrays[key])).to(t.dtype)
        mod.load_state_dict(state)


def config_dict(cfg) -> dict:
    return asdict(cfg)
