"""Training losses and evaluation metrics.

L1 terms are mean-reduced.  Metrics expect channel-first ``(C, H, W)``
images in [0, 1] (numpy arrays or tensors); grayscale ``(H, W)`` also works.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ShapeMismatch

PSNR_CAP = 100.0  # reported for identical images


@dataclass
class LossReport:
    total: torch.Tensor
    components: dict[str, torch.Tensor]
    weights: dict[str, float] = field(default_factory=dict)

    def recomposed(self) -> torch.Tensor:
        return sum(self.weights.get(k, 1.0) * v for k, v in self.components.items())

    def as_floats(self) -> dict[str, float]:
        out = {k: v.item() for k, v in self.components.items()}
        out["total"] = self.total.item()
        return out


def _check(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")


def l1(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check(pred, gt)
    return (pred - gt).abs().mean()


def _report(components: dict[str, torch.Tensor], weights: dict[str, float] | None = None) -> LossReport:
    weights = weights or {}
    total = sum(weights.get(k, 1.0) * v for k, v in components.items())
    return LossReport(total, components, dict(weights))


def reconstruction_loss(out, gt: torch.Tensor) -> LossReport:
    """Sum of L1 errors of the fused frame and every branch candidate."""
    return _report({name: l1(img, gt) for name, img in out.supervised().items()})


def perceptual_loss(pred: torch.Tensor, gt: torch.Tensor, fx) -> torch.Tensor:
    """Sum over pyramid levels of mean squared feature differences."""
    _check(pred, gt)
    if pred.dim() == 3:
        pred, gt = pred.unsqueeze(0), gt.unsqueeze(0)
    total = pred.new_zeros(())
    for fa, fb in zip(fx.extract(pred), fx.extract(gt)):
        total = total + ((fa - fb) ** 2).mean()
    return total


def synthesis_loss(out, gt: torch.Tensor, fx, lambda1: float = 1.0) -> LossReport:
    comps = dict(reconstruction_loss(out, gt).components)
    comps["perceptual"] = perceptual_loss(out.fused, gt, fx)
    return _report(comps, {"perceptual": lambda1})


def warping_loss(out, gt: torch.Tensor) -> LossReport:
    return _report({
        "fused": l1(out.fused, gt),
        "warped_fwd": l1(out.warped_fwd.image, gt),
        "warped_bwd": l1(out.warped_bwd.image, gt),
    })


def averaging_loss(final: torch.Tensor, gt: torch.Tensor, fx, lambda1: float = 1.0) -> LossReport:
    return _report({"final": l1(final, gt), "perceptual": perceptual_loss(final, gt, fx)},
                   {"perceptual": lambda1})


# -- metrics -----------------------------------------------------------------


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b) -> float:
    a, b = _np(a), _np(b)
    _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gauss_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    v = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(v, k, axis=1) @ g


def ssim(a, b, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM with a Gaussian window over the fully-covered region, channels averaged."""
    a, b = _np(a), _np(b)
    _check(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < win_size:
        raise ShapeMismatch(f"images smaller than the {win_size}px SSIM window")
    c1, c2 = 0.01**2, 0.03**2
    g = _gauss_window(win_size, sigma)
    vals = []
    for x, y in zip(a, b):
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))
