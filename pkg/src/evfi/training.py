"""Staged training: synthesis, then warping, then the blend with both branches frozen."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .blend import attention_blend
from .dataset import TrainingSet, collate
from .errors import InvalidConfig, MissingCheckpoint, NonFiniteLoss, EvfiError
from .losses import averaging_loss, synthesis_loss, warping_loss
from .model import BRANCHES, Interpolator, ModelConfig
from .networks import load_checkpoint, load_modules, param_hash, save_checkpoint, toy_feature_extractor

log = logging.getLogger(__name__)

DESK_EPOCHS = (8, 8, 4)
DESK_LR = 1e-3  # tiny desk runs need a larger step than the 1e-4 used at full scale
FULL_SCALE_LR = 1e-4
FULL_SCALE_EPOCHS = (40, 40, 10)


def cosine_lr(step: int, total_steps: int, lr_init: float) -> float:
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class StageConfig:
    stage: str
    epochs: int
    batch_size: int = 2
    lr_init: float = DESK_LR
    betas: tuple = (0.9, 0.99)
    seed: int = 0
    freeze: list = field(default_factory=list)
    grad_clip: float = 1.0
    lambda1: float = 1.0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.freeze = list(self.freeze)
        if self.stage == "averaging" and not self.freeze:
            self.freeze = ["synthesis", "warping"]
        self.validate()

    def validate(self):
        if self.stage not in BRANCHES:
            raise InvalidConfig(f"unknown stage {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_init <= 0:
            raise InvalidConfig("epochs, batch_size and lr_init must be positive")
        unknown = set(self.freeze) - set(BRANCHES)
        if unknown:
            raise InvalidConfig(f"unknown frozen modules {sorted(unknown)}")
        if self.stage in self.freeze:
            raise InvalidConfig(f"stage {self.stage!r} cannot freeze itself")
        if self.stage == "averaging" and not {"synthesis", "warping"} <= set(self.freeze):
            raise InvalidConfig("the averaging stage must freeze synthesis and warping")


@dataclass
class TrainState:
    stage: str
    step: int = 0
    epoch: int = 0
    total_steps: int = 0
    losses: list = field(default_factory=list)
    checkpoint: str | None = None
    seed: int = 0

    @property
    def done(self) -> bool:
        return self.step >= self.total_steps


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Sample order of an epoch; a pure function of (seed, epoch) so resumes line up."""
    return np.random.default_rng([seed, epoch]).permutation(n)


# -- stage-specific forward + loss -------------------------------------------


class _Stage:
    def __init__(self, cfg: StageConfig, data: TrainingSet, model: Interpolator):
        self.cfg, self.data, self.model = cfg, data, model
        self.fx = toy_feature_extractor(0)
        self.cache: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        if cfg.stage == "averaging":
            self._cache_branches()

    def _cache_branches(self):
        # frozen branches are deterministic, so their outputs are computed once
        with torch.no_grad():
            for s in range(0, len(self.data), 8):
                batch = collate(self.data.items[s:s + 8])
                syn = self.model.synthesize(batch).fused
                warp = self.model.warp(batch).fused
                for j, sid in enumerate(batch["id"]):
                    self.cache[sid] = (syn[j], warp[j])

    def loss(self, batch: dict):
        cfg, m = self.cfg, self.model
        if cfg.stage == "synthesis":
            return synthesis_loss(m.synthesize(batch), batch["gt"], self.fx, cfg.lambda1)
        if cfg.stage == "warping":
            return warping_loss(m.warp(batch), batch["gt"])
        syn = torch.stack([self.cache[i][0] for i in batch["id"]])
        warp = torch.stack([self.cache[i][1] for i in batch["id"]])
        final = attention_blend(syn, warp, m.blend).final
        return averaging_loss(final, batch["gt"], self.fx, cfg.lambda1)


# -- resumable state ---------------------------------------------------------


def _optimizer_arrays(opt: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out = {}
    for i, st in opt.state_dict()["state"].items():
        for k, v in st.items():
            out[f"optim/{i}/{k}"] = torch.as_tensor(v).detach().cpu().numpy()
    return out


def _restore_optimizer(opt: torch.optim.Optimizer, arrays: dict[str, np.ndarray]) -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    for key, a in arrays.items():
        if not key.startswith("optim/"):
            continue
        _, i, k = key.split("/")
        state.setdefault(int(i), {})[k] = torch.from_numpy(np.array(a))
    sd["state"] = state
    opt.load_state_dict(sd)


def save_train_state(path: str | Path, model: Interpolator, opt: torch.optim.Optimizer,
                     state: TrainState, cfg: StageConfig) -> None:
    config = {"model": asdict(model.cfg), "completed": list(model.completed),
              "stage_config": asdict(cfg), "train_state": asdict(state)}
    save_checkpoint(path, model.modules_for_checkpoint(), config, _optimizer_arrays(opt))


def _branch_hashes(model: Interpolator, names: Sequence[str]) -> dict[str, str]:
    return {n: param_hash(model.branch(n)) for n in names}


def attach_flows(model: Interpolator, data: TrainingSet) -> None:
    for key, (f01, f10) in data.boundary_flows.items():
        model.gt_estimator.add(key, f01, f10)


def train_stage(cfg: StageConfig, data: TrainingSet, model: Interpolator, *,
                resume_from: str | Path | None = None, max_steps: int | None = None,
                state_path: str | Path | None = None, diag_dir: str | Path | None = None) -> TrainState:
    """Train one stage; returns the state after ``max_steps`` updates or at the end.

    ``state_path`` receives a resumable checkpoint (parameters, optimizer
    moments, step counter, loss history) whenever the loop stops.
    """
    if len(data) == 0:
        raise InvalidConfig("empty training set")
    if cfg.stage == "averaging":
        missing = [s for s in ("synthesis", "warping") if s not in model.completed]
        if missing:
            raise MissingCheckpoint(f"averaging stage needs trained {', '.join(missing)} checkpoints")
    attach_flows(model, data)

    trained = model.branch(cfg.stage)
    for p in model.parameters():
        p.requires_grad_(False)
    for p in trained.parameters():
        p.requires_grad_(True)
    params = [p for p in trained.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.lr_init, betas=cfg.betas)

    per_epoch = math.ceil(len(data) / cfg.batch_size)
    state = TrainState(cfg.stage, total_steps=cfg.epochs * per_epoch, seed=cfg.seed)
    if resume_from is not None:
        meta, arrays = load_checkpoint(resume_from)
        load_modules(arrays, model.modules_for_checkpoint())
        _restore_optimizer(opt, arrays)
        state = TrainState(**meta["config"]["train_state"])
        model.completed = list(meta["config"].get("completed", []))
        if state.stage != cfg.stage or state.total_steps != cfg.epochs * per_epoch:
            raise InvalidConfig("resume checkpoint belongs to a different stage schedule")

    frozen_before = _branch_hashes(model, cfg.freeze)
    stage = _Stage(cfg, data, model)
    model.train()
    stop_at = state.total_steps if max_steps is None else min(state.total_steps, state.step + max_steps)
    while state.step < stop_at:
        state.epoch = state.step // per_epoch
        order = epoch_order(len(data), cfg.seed, state.epoch)
        offset = (state.step % per_epoch) * cfg.batch_size
        batch = collate([data.items[i] for i in order[offset:offset + cfg.batch_size]])
        for g in opt.param_groups:
            g["lr"] = cosine_lr(state.step, state.total_steps, cfg.lr_init)
        report = stage.loss(batch)
        loss = report.total
        if not torch.isfinite(loss):
            _dump_diagnostics(diag_dir, state, batch, report)
            raise NonFiniteLoss(f"{cfg.stage} loss is {loss.item()} at step {state.step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        state.losses.append(loss.item())
        state.step += 1
    state.epoch = min(state.step // per_epoch, cfg.epochs)
    model.eval()

    if _branch_hashes(model, cfg.freeze) != frozen_before:
        raise EvfiError("frozen parameters changed during training")
    if state.done and cfg.stage not in model.completed:
        model.completed.append(cfg.stage)
    if state_path is not None:
        save_train_state(state_path, model, opt, state, cfg)
        state.checkpoint = str(state_path)
    return state


def _dump_diagnostics(diag_dir, state: TrainState, batch: dict, report) -> None:
    if diag_dir is None:
        return
    path = Path(diag_dir) / f"nonfinite_{state.stage}_{state.step}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({
        "stage": state.stage, "step": state.step, "epoch": state.epoch,
        "sample_ids": list(batch["id"]),
        "components": report.as_floats(),
        "recent_losses": state.losses[-20:],
    }, indent=2))


# -- full protocol -----------------------------------------------------------


@dataclass
class ProtocolConfig:
    epochs: tuple = DESK_EPOCHS
    batch_size: int = 2
    lr_init: float = DESK_LR
    betas: tuple = (0.9, 0.99)
    grad_clip: float = 1.0
    lambda1: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.epochs = tuple(int(e) for e in self.epochs)
        if len(self.epochs) != 3:
            raise InvalidConfig("epochs must list synthesis, warping and averaging counts")

    def stage(self, name: str) -> StageConfig:
        i = BRANCHES.index(name)
        return StageConfig(name, self.epochs[i], self.batch_size, self.lr_init, self.betas,
                           self.seed + i, grad_clip=self.grad_clip, lambda1=self.lambda1)


def run_protocol(data: TrainingSet, out_dir: str | Path, model_cfg: ModelConfig | None = None,
                 cfg: ProtocolConfig | None = None, model: Interpolator | None = None) -> tuple[Interpolator, dict]:
    """Train all three stages, writing one checkpoint per stage and ``protocol.json``."""
    cfg = cfg or ProtocolConfig()
    model = model or Interpolator(model_cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"model": asdict(model.cfg), "protocol": asdict(cfg), "n_train": len(data), "stages": {}}
    for name in BRANCHES:
        scfg = cfg.stage(name)
        tic = time.perf_counter()
        state = train_stage(scfg, data, model)
        ckpt = out / f"{name}.npz"
        model.save(ckpt)
        wall = time.perf_counter() - tic
        report["stages"][name] = {
            "epochs": scfg.epochs, "steps": state.step, "final_loss": state.losses[-1],
            "wall_time_s": wall, "checkpoint_path": ckpt.name, "losses": state.losses,
        }
        log.info("%s: %d steps, final loss %.4f, %.1fs", name, state.step, state.losses[-1], wall)
    (out / "protocol.json").write_text(json.dumps(report, indent=2))
    return model, report


def decile_trend(losses: Sequence[float]) -> tuple[float, float]:
    """Medians of the first and last 10% of a loss history."""
    k = max(1, len(losses) // 10)
    return float(np.median(losses[:k])), float(np.median(losses[-k:]))
