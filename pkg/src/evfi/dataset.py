"""On-disk synthetic datasets: layout, manifests, sample assembly and loading.

Layout under a dataset root::

    index.jsonl        one SampleManifest per line
    frames/*.png       8-bit RGB frames
    events/*.evt       EVT1 event files, one per sample window
    flows/*.flo        FLO2 ground-truth flows (boundary and per-target)

All paths stored in the index are relative to the root.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

from .errors import InvalidConfig, InvalidScene, MissingDataset, MissingFile, TooFewFrames, TooFewTargets
from .events import EventStream, TimeWindow, read_events, restrict, write_events
from .flow import read_flow, write_flow
from .inputs import event_inputs
from .simulator import (
    FrameSequence,
    Scene,
    SceneConfig,
    SimulatorConfig,
    dense_sequence,
    random_scene_config,
    simulate,
)


@dataclass
class SampleManifest:
    sample_id: str
    frames: list[str]  # k + 2 frame paths, boundary frames first and last
    timestamps: list[float]
    events: str
    target_indices: list[int]
    skip: int
    sensor_size: tuple[int, int]
    flows: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sensor_size = (int(self.sensor_size[0]), int(self.sensor_size[1]))
        t0, t1 = self.timestamps[0], self.timestamps[-1]
        for i in self.target_indices:
            if not t0 < self.timestamps[i] < t1:
                raise InvalidConfig(f"{self.sample_id}: target {i} not strictly inside the window")

    @property
    def window(self) -> TimeWindow:
        return TimeWindow(self.timestamps[0], self.timestamps[-1])

    def target_time(self, i: int) -> float:
        """Normalised time of frame ``i`` within the boundary interval."""
        t0, t1 = self.timestamps[0], self.timestamps[-1]
        return (self.timestamps[i] - t0) / (t1 - t0)

    def to_json(self) -> str:
        d = asdict(self)
        d["sensor_size"] = list(self.sensor_size)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SampleManifest":
        return cls(**json.loads(line))


def frame_name(prefix: str, index: int) -> str:
    return f"frames/{prefix}_f{index:04d}.png"


def build_samples(seq: FrameSequence, events: EventStream, skip: int, prefix: str = "s") -> list[SampleManifest]:
    """Sliding windows whose boundary frames are ``skip + 1`` apart.

    Every frame strictly between the boundaries is a target; one manifest
    per window.
    """
    if skip < 1:
        raise TooFewTargets("skip must be >= 1 to leave a target frame inside each window")
    n = len(seq.frames)
    if n < skip + 2:
        raise TooFewFrames(f"{n} frames cannot hold a window of {skip + 2}")
    h, w = seq.shape
    out = []
    for start in range(n - skip - 1):
        idx = list(range(start, start + skip + 2))
        sid = f"{prefix}_w{start:04d}"
        out.append(SampleManifest(
            sample_id=sid,
            frames=[frame_name(prefix, i) for i in idx],
            timestamps=[float(seq.timestamps[i]) for i in idx],
            events=f"events/{sid}.evt",
            target_indices=list(range(1, skip + 1)),
            skip=skip,
            sensor_size=(w, h),
        ))
    return out


def expand_targets(manifests: Sequence[SampleManifest]) -> list[tuple[SampleManifest, int]]:
    return [(m, i) for m in manifests for i in m.target_indices]


def window_events(events: EventStream, manifest: SampleManifest) -> EventStream:
    return restrict(events, manifest.window, closed_end=True)


# -- writing -----------------------------------------------------------------


def _atomic_write(path: Path, writer) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: Path, img: np.ndarray) -> None:
    _atomic_write(Path(path), lambda p: Image.fromarray(to_uint8(img)).save(p, format="PNG"))


def read_png(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


@dataclass
class DatasetConfig:
    n_scenes: int = 4
    n_frames: int = 3
    canvas: tuple = (64, 64)
    frame_rate: float = 30.0
    subframes: int = 8
    skip: int = 1
    motion: str = "linear"  # linear | nonlinear | static | mixed
    n_objects: tuple = (1, 2)
    speed: tuple = (1.0, 3.0)
    object_size: tuple = (14, 24)
    simulator: dict = field(default_factory=dict)
    scenes: list = field(default_factory=list)  # explicit SceneConfig dicts override random scenes
    seed: int = 0


MAX_SCENE_DRAWS = 50


def _scene_configs(cfg: DatasetConfig) -> list[SceneConfig]:
    if cfg.scenes:
        return [SceneConfig.from_dict(s) for s in cfg.scenes]
    out = []
    for i in range(cfg.n_scenes):
        rng = np.random.default_rng([cfg.seed, i])
        motion = cfg.motion
        if motion == "mixed":
            motion = ("linear", "nonlinear")[i % 2]
        for _ in range(MAX_SCENE_DRAWS):
            scfg = random_scene_config(rng, tuple(cfg.canvas), cfg.n_frames, cfg.frame_rate, motion,
                                       tuple(cfg.n_objects), tuple(cfg.speed), tuple(cfg.object_size))
            try:
                Scene(scfg)
            except InvalidScene:
                continue  # an object left the canvas; draw again from the same stream
            out.append(scfg)
            break
        else:
            raise InvalidScene(f"no valid scene after {MAX_SCENE_DRAWS} draws; reduce speed or n_frames")
    return out


def generate_dataset(root: str | Path, cfg: DatasetConfig) -> dict:
    """Render scenes, simulate events and write a dataset; returns a summary."""
    from .errors import EmptyScene

    root = Path(root)
    scenes = _scene_configs(cfg)
    if not scenes:
        raise EmptyScene("dataset config yields no scenes")
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "events").mkdir(exist_ok=True)
    (root / "flows").mkdir(exist_ok=True)
    manifests: list[SampleManifest] = []
    n_events = 0
    for si, scfg in enumerate(scenes):
        scene = Scene(scfg)
        prefix = f"sc{si:03d}"
        keys = [scene.render(float(k)) for k in range(scfg.n_frames)]
        stamps = [k / scfg.frame_rate for k in range(scfg.n_frames)]
        seq = FrameSequence(keys, stamps)
        sim_cfg = SimulatorConfig(**{**cfg.simulator, "seed": int(cfg.simulator.get("seed", cfg.seed)) * 1000 + si})
        stream = simulate(dense_sequence(scene, scfg.frame_rate, cfg.subframes), sim_cfg)
        for k, img in enumerate(keys):
            write_png(root / frame_name(prefix, k), img)
        for m in build_samples(seq, stream, cfg.skip, prefix):
            ev = window_events(stream, m)
            n_events += len(ev)
            _atomic_write(root / m.events, lambda p, ev=ev: write_events(p, ev))
            i0 = int(m.frames[0].split("_f")[-1][:4])
            i1 = i0 + m.skip + 1
            flows = {"01": f"flows/{m.sample_id}_01.flo", "10": f"flows/{m.sample_id}_10.flo", "targets": []}
            _atomic_write(root / flows["01"], lambda p: write_flow(p, scene.flow(i0, i1)))
            _atomic_write(root / flows["10"], lambda p: write_flow(p, scene.flow(i1, i0)))
            for j in m.target_indices:
                pair = [f"flows/{m.sample_id}_t{j}_0.flo", f"flows/{m.sample_id}_t{j}_1.flo"]
                _atomic_write(root / pair[0], lambda p: write_flow(p, scene.flow(i0 + j, i0)))
                _atomic_write(root / pair[1], lambda p: write_flow(p, scene.flow(i0 + j, i1)))
                flows["targets"].append(pair)
            m.flows = flows
            manifests.append(m)
    write_index(root, manifests)
    return {"n_scenes": len(scenes), "n_samples": len(expand_targets(manifests)),
            "n_windows": len(manifests), "n_events": n_events}


def write_index(root: Path, manifests: Sequence[SampleManifest]) -> None:
    ids = [m.sample_id for m in manifests]
    if len(set(ids)) != len(ids):
        raise InvalidConfig("duplicate sample ids")
    text = "".join(m.to_json() + "\n" for m in sorted(manifests, key=lambda m: m.sample_id))
    _atomic_write(Path(root) / "index.jsonl", lambda p: Path(p).write_text(text))


def read_index(root: str | Path) -> list[SampleManifest]:
    path = Path(root) / "index.jsonl"
    if not path.exists():
        raise MissingDataset(f"no index.jsonl under {root}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    return sorted((SampleManifest.from_json(ln) for ln in lines), key=lambda m: m.sample_id)


# -- loading -----------------------------------------------------------------


@dataclass
class LoadedSample:
    manifest: SampleManifest
    i0: np.ndarray  # (H, W, 3)
    i1: np.ndarray
    targets: list  # [(t_normalised, image)]
    slices: list  # [(events_0t, events_t1)] per target


def load_sample(root: str | Path, manifest: SampleManifest) -> LoadedSample:
    root = Path(root)
    ev_path = root / manifest.events
    if not ev_path.exists():
        raise MissingFile(str(ev_path))
    stream = read_events(ev_path)
    frames = {i: read_png(root / manifest.frames[i]) for i in [0, len(manifest.frames) - 1, *manifest.target_indices]}
    t0, t1 = manifest.timestamps[0], manifest.timestamps[-1]
    targets, slices = [], []
    for i in manifest.target_indices:
        tt = manifest.timestamps[i]
        targets.append((manifest.target_time(i), frames[i]))
        slices.append((restrict(stream, TimeWindow(t0, tt)),
                       restrict(stream, TimeWindow(tt, t1), closed_end=True)))
    return LoadedSample(manifest, frames[0], frames[len(manifest.frames) - 1], targets, slices)


def chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32))


class TrainingSet:
    """In-memory (window, target) items with precomputed voxel inputs."""

    def __init__(self, root: str | Path, bins: int = 5, steps: Sequence[int] = (1, 2),
                 limit: int | None = None):
        self.root = Path(root)
        self.manifests = read_index(self.root)
        self.items: list[dict] = []
        self.boundary_flows: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for m in self.manifests:
            s = load_sample(self.root, m)
            if m.flows:
                self.boundary_flows[m.sample_id] = (read_flow(self.root / m.flows["01"]).numpy(),
                                                    read_flow(self.root / m.flows["10"]).numpy())
            for j, ((t, gt), (e0t, et1)) in enumerate(zip(s.targets, s.slices)):
                item = {
                    "id": f"{m.sample_id}@{m.target_indices[j]}",
                    "key": m.sample_id,
                    "i0": chw(s.i0), "i1": chw(s.i1), "gt": chw(gt),
                    "t": torch.tensor(t, dtype=torch.float32),
                    "n_events_0t": len(e0t), "n_events_t1": len(et1),
                }
                item.update({f"vox_{k}": v for k, v in event_inputs(e0t, et1, bins, steps).items()})
                if m.flows:
                    ft0, ft1 = m.flows["targets"][j]
                    item["flow_t0"] = read_flow(self.root / ft0).data
                    item["flow_t1"] = read_flow(self.root / ft1).data
                self.items.append(item)
                if limit is not None and len(self.items) >= limit:
                    return

    def __len__(self) -> int:
        return len(self.items)

    def batches(self, order: Sequence[int], batch_size: int) -> Iterator[dict]:
        for s in range(0, len(order), batch_size):
            yield collate([self.items[i] for i in order[s:s + batch_size]])


def collate(items: Sequence[dict]) -> dict:
    out: dict = {}
    for k in items[0]:
        vals = [it[k] for it in items]
        out[k] = torch.stack(vals) if isinstance(vals[0], torch.Tensor) else vals
    return out
