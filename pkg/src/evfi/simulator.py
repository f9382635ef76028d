"""Video-to-event simulation and procedural moving-texture scenes.

The event model follows the usual DVS idealisation: per pixel, log luminance
is linearly interpolated between consecutive frames and an event fires every
time the signal reaches the next contrast level above or below the pixel's
reference level.  The reference then jumps to the crossed level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTimestamps, EmptyScene, InvalidScene, ShapeMismatch
from .events import EventStream, TimeWindow, quantize_time

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
# absorbs round-off when a ramp lands exactly on a contrast level
_LEVEL_TOL = 1e-9


@dataclass(frozen=True)
class SimulatorConfig:
    c_pos: float = 0.15
    c_neg: float = 0.15
    log_eps: float = 1e-3
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.c_pos > 0 and self.c_neg > 0):
            raise ValueError("contrast thresholds must be positive")
        if not self.log_eps > 0:
            raise ValueError("log_eps must be positive")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be >= 0")


@dataclass
class FrameSequence:
    frames: list[np.ndarray]  # each (H, W, 3) in [0, 1]
    timestamps: list[float]

    def __post_init__(self):
        if len(self.frames) != len(self.timestamps) or len(self.frames) < 2:
            raise DegenerateTimestamps("need >= 2 frames with one timestamp each")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames) or len(shape) != 3 or shape[2] != 3:
            raise ShapeMismatch("frames must share one (H, W, 3) shape")
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if not np.all(np.isfinite(ts)) or not np.all(np.diff(ts) > 0):
            raise DegenerateTimestamps("timestamps must be finite and strictly increasing")

    @property
    def shape(self) -> tuple[int, int]:
        h, w, _ = self.frames[0].shape
        return h, w


def luma(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) @ LUMA_WEIGHTS


def log_luma(img: np.ndarray, log_eps: float) -> np.ndarray:
    return np.log(luma(img) + log_eps)


def simulate(seq: FrameSequence, cfg: SimulatorConfig) -> EventStream:
    """Convert a frame sequence into an event stream.

    The stream window is ``[t_first, t_last)``; a crossing that lands exactly
    on the last frame time is still emitted (stored at ``t_last``).
    """
    h, w = seq.shape
    ts = np.asarray(seq.timestamps, dtype=np.float64)
    levels = log_luma(seq.frames[0], cfg.log_eps).ravel()
    ref = levels.copy()
    xs, ys, tt, ps = [], [], [], []
    pix_x = np.tile(np.arange(w), h)
    pix_y = np.repeat(np.arange(h), w)
    for k in range(1, len(seq.frames)):
        la = levels
        lb = log_luma(seq.frames[k], cfg.log_eps).ravel()
        t0, t1 = ts[k - 1], ts[k]
        slope = lb - la
        for sign, c in ((1, cfg.c_pos), (-1, cfg.c_neg)):
            n = np.floor(sign * (lb - ref) / c + _LEVEL_TOL)
            n = np.where(sign * slope > 0, np.maximum(n, 0), 0).astype(np.int64)
            if n.any():
                idx = np.repeat(np.arange(h * w), n)
                # crossing index j = 1..n within each pixel
                starts = np.cumsum(n) - n
                j = np.arange(idx.size) - np.repeat(starts, n) + 1
                target = ref[idx] + sign * j * c
                frac = (target - la[idx]) / slope[idx]
                frac = np.clip(frac, 0.0, 1.0)
                xs.append(pix_x[idx])
                ys.append(pix_y[idx])
                tt.append(t0 + frac * (t1 - t0))
                ps.append(np.full(idx.size, sign, dtype=np.int64))
                ref = ref + sign * n * c
        levels = lb
    if cfg.noise_rate > 0:
        rng = np.random.default_rng(cfg.seed)
        counts = rng.poisson(cfg.noise_rate * (ts[-1] - ts[0]), size=h * w)
        idx = np.repeat(np.arange(h * w), counts)
        xs.append(pix_x[idx])
        ys.append(pix_y[idx])
        tt.append(rng.uniform(ts[0], ts[-1], size=idx.size))
        ps.append(np.where(rng.random(idx.size) < 0.5, 1, -1))
    window = TimeWindow(float(ts[0]), float(ts[-1])).quantized()
    if not xs:
        return EventStream.empty(window, (w, h))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = quantize_time(np.concatenate(tt))
    p = np.concatenate(ps)
    order = np.lexsort((p, x, y, t))
    return EventStream(x[order], y[order], t[order], p[order], window, (w, h))


def reconstruct_log(frame0: np.ndarray, stream: EventStream, cfg: SimulatorConfig) -> np.ndarray:
    """Integrate events on top of the first frame's log luminance."""
    out = log_luma(frame0, cfg.log_eps)
    w = out.shape[1]
    steps = np.where(stream.p > 0, cfg.c_pos, -cfg.c_neg)
    flat = out.ravel()
    np.add.at(flat, stream.y * w + stream.x, steps)
    return flat.reshape(out.shape)


# -- procedural scenes -------------------------------------------------------


@dataclass
class TextureSpec:
    kind: str = "noise"  # noise | checker | stripes | gradient | flat
    scale: float = 4.0
    colors: list = field(default_factory=lambda: [[0.9, 0.3, 0.2], [0.2, 0.4, 0.9]])
    seed: int = 0


@dataclass
class Trajectory:
    """Top-left position in pixels as a function of time in frame units.

    ``linear``: p0 + v*s; ``quadratic``: p0 + v*s + a*s^2;
    ``sinusoidal``: p0 + v*s + amp*sin(omega*s + phase).
    """

    kind: str = "linear"
    p0: tuple = (0.0, 0.0)
    v: tuple = (0.0, 0.0)
    a: tuple = (0.0, 0.0)
    amp: tuple = (0.0, 0.0)
    omega: float = 0.0
    phase: float = 0.0

    def position(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)[..., None]
        p = np.asarray(self.p0, dtype=np.float64) + np.asarray(self.v, dtype=np.float64) * s
        if self.kind == "linear":
            return p
        if self.kind == "quadratic":
            return p + np.asarray(self.a, dtype=np.float64) * s**2
        if self.kind == "sinusoidal":
            return p + np.asarray(self.amp, dtype=np.float64) * np.sin(self.omega * s + self.phase)
        raise InvalidScene(f"unknown trajectory kind {self.kind!r}")


@dataclass
class SceneObject:
    texture: TextureSpec
    size: tuple  # (w, h) in pixels
    trajectory: Trajectory


@dataclass
class SceneConfig:
    canvas: tuple = (64, 64)  # (W, H)
    objects: list = field(default_factory=list)
    n_frames: int = 3
    frame_rate: float = 30.0
    seed: int = 0
    background: TextureSpec = field(default_factory=lambda: TextureSpec(kind="noise", scale=8.0,
                                                                        colors=[[0.35, 0.35, 0.3], [0.7, 0.65, 0.6]]))

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        objs = []
        for o in d.pop("objects", []):
            objs.append(SceneObject(
                texture=TextureSpec(**o.get("texture", {})),
                size=tuple(o["size"]),
                trajectory=Trajectory(**{k: (tuple(v) if isinstance(v, list) else v)
                                         for k, v in o["trajectory"].items()}),
            ))
        bg = d.pop("background", None)
        cfg = cls(objects=objs, **{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})
        if bg is not None:
            cfg.background = TextureSpec(**bg)
        return cfg


def make_texture(spec: TextureSpec, w: int, h: int) -> np.ndarray:
    """Deterministic ``(h, w, 3)`` texture patch in [0, 1]."""
    c0, c1 = (np.asarray(c, dtype=np.float64) for c in spec.colors[:2])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.kind == "flat":
        m = np.zeros((h, w))
    elif spec.kind == "checker":
        m = ((np.floor(xx / spec.scale) + np.floor(yy / spec.scale)) % 2).astype(np.float64)
    elif spec.kind == "stripes":
        m = 0.5 + 0.5 * np.sin(2 * np.pi * (xx + 0.5 * yy) / max(spec.scale, 1e-6))
    elif spec.kind == "gradient":
        m = (xx + yy) / max(w + h - 2, 1)
    elif spec.kind == "noise":
        # smooth value noise: bilinear upsampling of a coarse random lattice
        rng = np.random.default_rng(spec.seed)
        gw = int(math.ceil(w / spec.scale)) + 2
        gh = int(math.ceil(h / spec.scale)) + 2
        lattice = rng.random((gh, gw))
        gx, gy = xx / spec.scale, yy / spec.scale
        x0, y0 = np.floor(gx).astype(int), np.floor(gy).astype(int)
        fx, fy = gx - x0, gy - y0
        fx = fx * fx * (3 - 2 * fx)
        fy = fy * fy * (3 - 2 * fy)
        m = (lattice[y0, x0] * (1 - fx) * (1 - fy) + lattice[y0, x0 + 1] * fx * (1 - fy)
             + lattice[y0 + 1, x0] * (1 - fx) * fy + lattice[y0 + 1, x0 + 1] * fx * fy)
    else:
        raise InvalidScene(f"unknown texture kind {spec.kind!r}")
    return c0 * (1 - m[..., None]) + c1 * m[..., None]


def _bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``img`` (h, w, C) at float coords, zero outside."""
    h, w = img.shape[:2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    out = np.zeros(sx.shape + img.shape[2:], dtype=np.float64)
    for dx, dy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros_like(out)
        vals[ok] = img[yi[ok], xi[ok]]
        out += wt * vals
    return out


class Scene:
    """Renderer for a :class:`SceneConfig`; times ``s`` are in frame units."""

    def __init__(self, cfg: SceneConfig):
        if not cfg.objects:
            raise EmptyScene("scene has no objects")
        self.cfg = cfg
        self.width, self.height = int(cfg.canvas[0]), int(cfg.canvas[1])
        self.background = make_texture(cfg.background, self.width, self.height)
        self._patches = []
        for obj in cfg.objects:
            ow, oh = int(obj.size[0]), int(obj.size[1])
            tex = make_texture(obj.texture, ow, oh)
            # one-pixel transparent border gives anti-aliased edges under bilinear placement
            rgba = np.zeros((oh + 2, ow + 2, 4))
            rgba[1:-1, 1:-1, :3] = tex
            rgba[1:-1, 1:-1, 3] = 1.0
            self._patches.append(rgba)
        self._check_visible()

    def _check_visible(self):
        s = np.linspace(0, self.cfg.n_frames - 1, 4 * self.cfg.n_frames)
        for obj in self.cfg.objects:
            pos = obj.trajectory.position(s)
            ow, oh = obj.size
            inside = ((pos[:, 0] + ow > 0) & (pos[:, 0] < self.width)
                      & (pos[:, 1] + oh > 0) & (pos[:, 1] < self.height))
            if not inside.all():
                raise InvalidScene("an object leaves the canvas entirely")

    def _layers(self, s: float):
        yy, xx = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        for obj, rgba in zip(self.cfg.objects, self._patches):
            px, py = obj.trajectory.position(s)
            # patch pixel (1, 1) is object-local (0, 0)
            yield obj, _bilinear_sample(rgba, xx - px + 1, yy - py + 1)

    def render(self, s: float) -> np.ndarray:
        out = self.background.copy()
        for _, layer in self._layers(s):
            alpha = layer[..., 3:4]
            out = out * (1 - alpha) + layer[..., :3] * alpha
        return np.clip(out, 0.0, 1.0)

    def coverage(self, s: float) -> np.ndarray:
        """Index of the topmost object with alpha > 0.5 per pixel (-1 for background)."""
        owner = np.full((self.height, self.width), -1, dtype=np.int64)
        for i, (_, layer) in enumerate(self._layers(s)):
            owner[layer[..., 3] > 0.5] = i
        return owner

    def flow(self, s_src: float, s_dst: float) -> np.ndarray:
        """Analytic ``(2, H, W)`` flow from time ``s_src`` to ``s_dst``, defined on ``s_src`` pixels."""
        owner = self.coverage(s_src)
        out = np.zeros((2, self.height, self.width))
        for i, obj in enumerate(self.cfg.objects):
            d = obj.trajectory.position(s_dst) - obj.trajectory.position(s_src)
            m = owner == i
            out[0][m] = d[0]
            out[1][m] = d[1]
        return out


def generate_scene(cfg: SceneConfig):
    """Render ``cfg.n_frames`` frames and consecutive ground-truth flows.

    Returns ``(FrameSequence, flows)`` where ``flows[k]`` is the
    :class:`~evfi.flow.FlowField` from frame ``k`` to frame ``k + 1``.
    """
    from .flow import FlowField

    scene = Scene(cfg)
    frames = [scene.render(float(k)) for k in range(cfg.n_frames)]
    stamps = [k / cfg.frame_rate for k in range(cfg.n_frames)]
    n = cfg.n_frames - 1
    flows = [FlowField.from_numpy(scene.flow(k, k + 1), k / n, (k + 1) / n) for k in range(n)]
    return FrameSequence(frames, stamps), flows


def random_scene_config(rng: np.random.Generator, canvas=(64, 64), n_frames=3, frame_rate=30.0,
                        motion: str = "linear", n_objects=(1, 2), speed=(1.0, 3.0),
                        size=(14, 24)) -> SceneConfig:
    """Draw a random scene of textured rectangles.

    ``motion`` is ``linear``, ``nonlinear`` (quadratic or sinusoidal with
    random sign/phase) or ``static``.
    """
    w, h = canvas
    kinds = ["noise", "checker", "stripes"]
    objs = []
    for _ in range(int(rng.integers(n_objects[0], n_objects[1] + 1))):
        ow, oh = (int(v) for v in rng.integers(size[0], size[1] + 1, size=2))
        tex = TextureSpec(kind=kinds[int(rng.integers(len(kinds)))],
                          scale=float(rng.uniform(3, 6)),
                          colors=rng.uniform(0.05, 0.95, size=(2, 3)).round(3).tolist(),
                          seed=int(rng.integers(2**31)))
        ang = rng.uniform(0, 2 * np.pi)
        spd = rng.uniform(*speed)
        v = (spd * np.cos(ang), spd * np.sin(ang))
        span = n_frames - 1
        cx = w / 2 - ow / 2 - v[0] * span / 2 + rng.uniform(-w / 8, w / 8)
        cy = h / 2 - oh / 2 - v[1] * span / 2 + rng.uniform(-h / 8, h / 8)
        if motion == "static":
            traj = Trajectory("linear", (cx, cy), (0.0, 0.0))
        elif motion == "linear":
            traj = Trajectory("linear", (cx, cy), v)
        elif motion == "nonlinear":
            if rng.random() < 0.5:
                acc = rng.uniform(-1, 1, size=2) * spd
                traj = Trajectory("quadratic", (cx, cy), v, a=tuple(acc))
            else:
                amp = rng.uniform(-1, 1, size=2) * spd
                traj = Trajectory("sinusoidal", (cx, cy), v, amp=tuple(amp),
                                  omega=float(rng.uniform(2.0, 3.5)), phase=float(rng.uniform(0, 2 * np.pi)))
        else:
            raise InvalidScene(f"unknown motion family {motion!r}")
        objs.append(SceneObject(tex, (ow, oh), traj))
    bg = TextureSpec(kind="noise", scale=float(rng.uniform(6, 12)),
                     colors=rng.uniform(0.1, 0.9, size=(2, 3)).round(3).tolist(),
                     seed=int(rng.integers(2**31)))
    return SceneConfig(canvas=(w, h), objects=objs, n_frames=n_frames, frame_rate=frame_rate,
                       seed=int(rng.integers(2**31)), background=bg)


def dense_sequence(scene: Scene, frame_rate: float, subframes: int) -> FrameSequence:
    """Render ``subframes`` steps per frame interval for event simulation."""
    n = scene.cfg.n_frames
    s = np.arange((n - 1) * subframes + 1) / subframes
    return FrameSequence([scene.render(float(v)) for v in s], list(s / frame_rate))
