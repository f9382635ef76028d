"""Command line entry points: simulate, train, interpolate, evaluate, ablate.

Every command takes ``--config PATH --out DIR --seed N --set key=value``,
writes its effective config to ``DIR/config.json`` and prints a short
summary.  Machine-readable results go to files in ``DIR``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .blend import save_weight_map
from .config import build, resolve
from .dataset import DatasetConfig, TrainingSet, collate, generate_dataset, write_png
from .errors import EvfiError, MissingCheckpoint, MissingDataset
from .evaluation import aggregate, evaluate, model_predictor, oracle_predictor, run_ablation
from .flow import FlowField, write_flow
from .model import Interpolator, ModelConfig
from .plotting import plot_ablation, plot_loss_curves, plot_metric_hist, plot_weight_maps
from .training import ProtocolConfig, attach_flows, decile_trend, run_protocol

log = logging.getLogger("evfi")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: Sequence[dict]) -> None:
    fields = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def _markdown(rows: Sequence[dict], cols: Sequence[str]) -> str:
    fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(fmt(r[c]) for c in cols) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _check_finite(values) -> None:
    bad = [v for v in values if isinstance(v, float) and not math.isfinite(v)]
    if bad:
        raise EvfiError(f"{len(bad)} non-finite values in the outputs")


def _dataset(path, limit=None, bins=5, steps=(1, 2)) -> TrainingSet:
    if path is None:
        raise MissingDataset("config key 'data' is not set")
    if not (Path(path) / "index.jsonl").exists():
        raise MissingDataset(f"no dataset at {path}")
    return TrainingSet(path, bins=bins, steps=steps, limit=limit)


def _load_model(path) -> Interpolator:
    if path is None:
        raise MissingCheckpoint("config key 'checkpoint' is not set")
    return Interpolator.load(path)


# -- commands ------------------------------------------------------------------


def cmd_simulate(cfg: dict, out: Path) -> dict:
    summary = generate_dataset(out, build(DatasetConfig, cfg["dataset"], cfg["seed"]))
    print(f"simulated {summary['n_scenes']} scenes: {summary['n_samples']} samples, "
          f"{summary['n_events']} events -> {out}")
    return summary


def cmd_train(cfg: dict, out: Path) -> dict:
    mcfg = build(ModelConfig, cfg["model"], cfg["seed"])
    pcfg = build(ProtocolConfig, cfg["protocol"], cfg["seed"])
    data = _dataset(cfg["data"], cfg["limit"], mcfg.bins, mcfg.steps)
    model, report = run_protocol(data, out / "checkpoints", mcfg, pcfg)
    stages = report["stages"]
    plot_loss_curves({k: v["losses"] for k, v in stages.items()}, out / "loss_curves.png")
    rows = [{"stage": k, "step": i, "loss": l} for k, v in stages.items() for i, l in enumerate(v["losses"])]
    _write_csv(out / "losses.csv", rows)
    summary = {"n_samples": len(data), "checkpoints": {k: f"checkpoints/{v['checkpoint_path']}" for k, v in stages.items()}}
    for k, v in stages.items():
        first, last = decile_trend(v["losses"])
        summary[k] = {"final_loss": v["final_loss"], "first_decile_median": first, "last_decile_median": last}
        print(f"{k:>9}: {v['steps']} steps, loss {first:.4f} -> {last:.4f}")
        _check_finite([v["final_loss"]])
    return summary


def cmd_interpolate(cfg: dict, out: Path) -> dict:
    model = _load_model(cfg["checkpoint"])
    data = _dataset(cfg["data"], cfg["limit"], model.cfg.bins, model.cfg.steps)
    attach_flows(model, data)
    model.eval()
    (out / "frames").mkdir(exist_ok=True)
    if cfg["save_weights"]:
        (out / "weights").mkdir(exist_ok=True)
    if cfg["save_flows"]:
        (out / "flows").mkdir(exist_ok=True)
    written, preview = [], []
    for s in range(0, len(data), 8):
        batch = collate(data.items[s:s + 8])
        with torch.no_grad():
            res = model(batch)
        for j, key in enumerate(batch["key"]):
            name = f"{key}_{float(batch['t'][j]):.3f}"
            img = res["blend"].final[j].numpy().transpose(1, 2, 0)
            if not np.isfinite(img).all():
                raise EvfiError(f"non-finite prediction for {name}")
            write_png(out / "frames" / f"{name}.png", img)
            if cfg["save_weights"]:
                save_weight_map(out / "weights" / f"{name}.png", res["blend"].weights[j])
                if len(preview) < 8:
                    preview.append((img, res["blend"].weights[j, 0].numpy(), name))
            if cfg["save_flows"]:
                w = res["warping"]
                write_flow(out / "flows" / f"{name}_t0.flo", FlowField(w.Ft0_refine.data[j]))
                write_flow(out / "flows" / f"{name}_t1.flo", FlowField(w.Ft1_refine.data[j]))
            written.append(f"frames/{name}.png")
    if preview:
        plot_weight_maps(*zip(*preview), out / "weight_maps.png")
    print(f"wrote {len(written)} frames to {out / 'frames'}")
    return {"n_samples": len(written), "frames": written}


def cmd_evaluate(cfg: dict, out: Path) -> dict:
    if cfg["predictor"] == "oracle":
        data = _dataset(cfg["data"], cfg["limit"])
        predictor = oracle_predictor
    elif cfg["predictor"] == "model":
        model = _load_model(cfg["checkpoint"])
        data = _dataset(cfg["data"], cfg["limit"], model.cfg.bins, model.cfg.steps)
        predictor = model_predictor(model, data)
    else:
        raise EvfiError(f"unknown predictor {cfg['predictor']!r}")
    records = evaluate(predictor, data)
    agg = aggregate(records)
    _check_finite([v for r in records for v in r.values()])
    _write_json(out / "metrics.json", {"records": records, "aggregate": agg})
    _write_csv(out / "metrics.csv", records)
    cols = ["sample_id", "psnr", "ssim", "psnr_synthesis", "psnr_warping"]
    table = _markdown(records + [{"sample_id": "**mean**", **agg}], cols)
    (out / "metrics.md").write_text(table)
    plot_metric_hist(records, out / "psnr_hist.png")
    print(table, end="")
    return {"n_samples": len(records), **agg}


def cmd_ablate(cfg: dict, out: Path) -> dict:
    mcfg = build(ModelConfig, cfg["model"], cfg["seed"])
    pcfg = build(ProtocolConfig, cfg["protocol"], cfg["seed"])
    # the widest step set covers every variant's voxel inputs
    steps = tuple(sorted({1, 2, 4, *mcfg.steps}))
    train = _dataset(cfg["data"], cfg["limit"], mcfg.bins, steps)
    test = _dataset(cfg["eval_data"] or cfg["data"], cfg["eval_limit"], mcfg.bins, steps)
    rows, base = run_ablation(train, test, cfg["groups"], mcfg, pcfg)
    base.save(out / "base.npz")
    _check_finite([v for r in rows for v in r.values()])
    _write_json(out / "ablation.json", rows)
    _write_csv(out / "ablation.csv", [{k: r.get(k, "") for k in ("group", "variant", "psnr", "ssim")} for r in rows])
    table = _markdown(rows, ["group", "variant", "psnr", "ssim"])
    (out / "ablation.md").write_text(table)
    plot_ablation(rows, out / "ablation.png")
    print(table, end="")
    return {"n_samples": len(train), "n_eval": len(test), "n_variants": len(rows)}


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "interpolate": cmd_interpolate,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evfi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key override, value parsed as JSON (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args.config, args.overrides, args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", cfg)
        tic = time.perf_counter()
        summary = COMMANDS[args.command](cfg, out)
        summary["wall_time_s"] = time.perf_counter() - tic
        _write_json(out / "summary.json", summary)
    except (EvfiError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
