"""Evaluation harness and branch/variant ablations."""

from __future__ import annotations

import logging
from dataclasses import asdict, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .dataset import TrainingSet, collate
from .losses import psnr, ssim
from .model import Interpolator, ModelConfig
from .networks import param_hash
from .training import ProtocolConfig, attach_flows, train_stage

log = logging.getLogger(__name__)

OUTPUTS = ("final", "synthesis", "warping")


def predict(model: Interpolator, batch: dict) -> dict[str, torch.Tensor]:
    with torch.no_grad():
        out = model(batch)
    return {"final": out["blend"].final, "synthesis": out["synthesis"].fused,
            "warping": out["warping"].fused, "weights": out["blend"].weights}


def oracle_predictor(batch: dict) -> dict[str, torch.Tensor]:
    """Returns the targets themselves; used to sanity-check the metric path."""
    return {k: batch["gt"] for k in OUTPUTS}


def evaluate(predictor: Callable[[dict], dict], data: TrainingSet, batch_size: int = 8) -> list[dict]:
    """Per-sample PSNR/SSIM of the final frame and of both branch candidates."""
    records = []
    for s in range(0, len(data), batch_size):
        batch = collate(data.items[s:s + batch_size])
        pred = predictor(batch)
        for j, sid in enumerate(batch["id"]):
            gt = batch["gt"][j]
            rec = {"sample_id": sid, "t": float(batch["t"][j])}
            for name in OUTPUTS:
                suffix = "" if name == "final" else f"_{name}"
                rec["psnr" + suffix] = psnr(pred[name][j], gt)
                rec["ssim" + suffix] = ssim(pred[name][j], gt)
            records.append(rec)
    return records


def model_predictor(model: Interpolator, data: TrainingSet) -> Callable[[dict], dict]:
    attach_flows(model, data)
    model.eval()
    return lambda batch: predict(model, batch)


def aggregate(records: Sequence[dict]) -> dict[str, float]:
    keys = [k for k in records[0] if k.startswith(("psnr", "ssim"))]
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


# -- ablations ---------------------------------------------------------------

# each variant: (group, label, model overrides, stages to retrain)
VARIANTS = {
    "proxies": [
        ("proxies", "T=1", {"steps": (1,)}, ("synthesis", "averaging")),
        ("proxies", "T=2", {"steps": (2,)}, ("synthesis", "averaging")),
        ("proxies", "T=4", {"steps": (4,)}, ("synthesis", "averaging")),
    ],
    "fusion": [
        ("fusion", "1", {"steps": (1,)}, ("synthesis", "averaging")),
        ("fusion", "1&2", {}, ()),
        ("fusion", "1&2&4", {"steps": (1, 2, 4)}, ("synthesis", "averaging")),
    ],
    "event_update": [
        ("event_update", "w/o event", {"event_update": False}, ("warping", "averaging")),
        ("event_update", "w/ event", {}, ()),
    ],
    "flow_source": [
        ("flow_source", "event-guided flow", {"flow_source": "events"}, ("warping", "averaging")),
        ("flow_source", "RGB-guided flow", {}, ()),
    ],
}
GROUPS = ("branches", *VARIANTS)


def _derive(base: Interpolator, overrides: dict, retrain: Sequence[str]) -> Interpolator:
    cfg = replace(base.cfg, **overrides)
    model = Interpolator(cfg)
    for name in ("synthesis", "warping", "averaging"):
        if name in retrain:
            continue
        model.branch(name).load_state_dict(base.branch(name).state_dict())
        model.completed.append(name)
    return model


def run_ablation(train: TrainingSet, test: TrainingSet, groups: Sequence[str] = GROUPS,
                 model_cfg: ModelConfig | None = None, protocol: ProtocolConfig | None = None,
                 base: Interpolator | None = None) -> tuple[list[dict], Interpolator]:
    """Train the base model (unless given) and every requested variant; one row per variant.

    Variants reuse the base model's untouched branches and retrain only what
    their change affects, followed by a fresh blend.
    """
    protocol = protocol or ProtocolConfig()
    if base is None:
        base = Interpolator(model_cfg)
        for name in ("synthesis", "warping", "averaging"):
            train_stage(protocol.stage(name), train, base)
    cache: dict[tuple, dict] = {}

    def score(model: Interpolator) -> dict:
        key = (param_hash(model), tuple(sorted(asdict(model.cfg).items())))
        if key not in cache:
            cache[key] = aggregate(evaluate(model_predictor(model, test), test))
        return cache[key]

    rows = []
    for group in groups:
        if group == "branches":
            m = score(base)
            for label, suffix in (("Warping", "_warping"), ("Synthesis", "_synthesis"), ("Averaging", "")):
                rows.append({"group": group, "variant": label,
                             "psnr": m["psnr" + suffix], "ssim": m["ssim" + suffix]})
            continue
        for _, label, overrides, retrain in VARIANTS[group]:
            model = base
            if retrain:
                model = _derive(base, overrides, retrain)
                for name in retrain:
                    train_stage(protocol.stage(name), train, model)
            m = score(model)
            log.info("%s %s: final %.2f dB", group, label, m["psnr"])
            rows.append({"group": group, "variant": label, **m})
    return rows, base
