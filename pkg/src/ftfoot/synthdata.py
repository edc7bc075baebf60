"""Procedural RGB-D scenes with analytic ground truth, and the dataset format.

A scene is a heightfield with a smooth drivable corridor, rougher terrain
off the corridor, and cylindrical obstacles. Rays are marched against the
heightfield and intersected analytically with the obstacles.

Dataset layout (one directory per sample under ``root``)::

    manifest.json               {"splits": {"train": [...], "val": [...]}}
    NNNNNN/rgb.png              8-bit RGB
    NNNNNN/depth.png            16-bit depth in millimeters, 0 = invalid
    NNNNNN/intrinsics.json      {"fx", "fy", "cx", "cy"}
    NNNNNN/pose.json            {"rotation": 9 row-major, "translation": 3, "frame_id", "timestamp"}
    NNNNNN/footprint.png        binary (0/255)
    NNNNNN/gt_normals.png       optional, (n + 1) / 2 * 255 per channel, black = invalid
    NNNNNN/gt_traversable.png   optional, binary (0/255)
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    FootprintMask,
    Intrinsics,
    Pose,
    RgbdFrame,
    SurfaceNormalImage,
    Trajectory,
    look_at_rotation,
    pixel_grid,
    project_footprint,
    yaw_rotation,
)

log = logging.getLogger(__name__)

MAX_RANGE = 40.0
SPLITS = ("train", "val", "test")

# class id -> (mean rgb, per-pixel noise sigma)
TEXTURES = {
    "corridor": ((0.56, 0.47, 0.36), 0.10),
    "terrain": ((0.44, 0.48, 0.31), 0.10),
    "obstacle": ((0.47, 0.45, 0.43), 0.08),
    "sky": ((0.62, 0.74, 0.92), 0.03),
}


@dataclass
class SceneSpec:
    seed: int = 0
    slope_deg: float = 0.0
    bump_amplitude: float = 0.0
    bump_frequency: float = 1.0
    corridor_roughness: float = 0.15  # bump scale inside the corridor relative to outside
    corridor: np.ndarray = field(default_factory=lambda: np.array([[-5.0, 0.0], [60.0, 0.0]]))
    corridor_width: float = 3.0
    obstacles: list = field(default_factory=list)  # (x, y, radius, height)
    textures: dict = field(default_factory=lambda: dict(TEXTURES))
    footprint_fraction: float = 0.25  # robot width / corridor width
    footprint_offset: float = 0.0  # lateral offset (m) of the driven line from the centerline, left positive

    def __post_init__(self):
        self.corridor = np.asarray(self.corridor, dtype=np.float64).reshape(-1, 2)
        if len(self.corridor) < 2:
            raise ValueError("corridor polyline needs at least two points")
        if np.any(np.diff(self.corridor[:, 0]) <= 0):
            raise ValueError("corridor polyline must be strictly increasing in x")
        if self.corridor_width <= 0:
            raise ValueError("corridor width must be positive")
        slack = self.corridor_width * (1.0 - self.footprint_fraction) / 2.0
        if abs(self.footprint_offset) > slack:
            raise ValueError(f"footprint offset {self.footprint_offset} m leaves the corridor (max {slack:.3f} m)")
        for ob in self.obstacles:
            if ob[2] <= 0:
                raise ValueError(f"obstacle radius must be positive: {ob}")


@dataclass
class CameraSpec:
    width: int = 64
    height: int = 64
    focal: float = 48.0
    mount_height: float = 1.5  # meters above the terrain at the origin
    pitch_deg: float = 15.0  # downward
    yaw_offset_deg: float = 0.0  # relative to the corridor heading at the origin

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.centered(self.width, self.height, self.focal)


@dataclass
class SyntheticScene:
    frame: RgbdFrame
    gt_normals: SurfaceNormalImage
    gt_traversable: np.ndarray  # (1, h, w) bool
    trajectory: Trajectory
    footprint: FootprintMask
    labels: np.ndarray  # (h, w) texture class index, order of TEXTURES keys


@dataclass
class Sample:
    frame: RgbdFrame
    footprint: FootprintMask
    gt_normals: SurfaceNormalImage | None = None
    gt_traversable: np.ndarray | None = None
    name: str = ""


def _bump_components(spec: SceneSpec, n: int = 4):
    rng = np.random.default_rng([spec.seed, 1])
    angles = rng.uniform(0, np.pi, n)
    freqs = spec.bump_frequency * rng.uniform(0.6, 1.4, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    return np.cos(angles) * freqs, np.sin(angles) * freqs, phases


def polyline_distance(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from points to a polyline (m, 2)."""
    best = np.full(np.shape(px), np.inf)
    for a, b in zip(poly[:-1], poly[1:]):
        d = b - a
        t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / (d @ d), 0.0, 1.0)
        dist = np.hypot(px - a[0] - t * d[0], py - a[1] - t * d[1])
        best = np.minimum(best, dist)
    return best


class Terrain:
    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.kx, self.ky, self.phase = _bump_components(spec)
        self.grade = np.tan(np.radians(spec.slope_deg))
        poly = spec.corridor
        self._slope = np.diff(poly[:, 1]) / np.diff(poly[:, 0])

    def corridor_offset(self, x, y):
        """Perpendicular distance to the (x-monotone) corridor centerline."""
        poly = self.spec.corridor
        yc = np.interp(x, poly[:, 0], poly[:, 1])
        seg = np.clip(np.searchsorted(poly[:, 0], x) - 1, 0, len(self._slope) - 1)
        return np.abs(y - yc) / np.sqrt(1.0 + self._slope[seg] ** 2)

    def _roughness(self, x, y):
        s = self.spec
        d = self.corridor_offset(x, y)
        edge = s.corridor_width / 2.0
        t = np.clip((d - edge) / 1.0, 0.0, 1.0)
        blend = t * t * (3 - 2 * t)
        return s.corridor_roughness + (1 - s.corridor_roughness) * blend

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = self.grade * x
        if self.spec.bump_amplitude:
            waves = np.zeros_like(x)
            for kx, ky, ph in zip(self.kx, self.ky, self.phase):
                waves = waves + np.sin(kx * x + ky * y + ph)
            z = z + self.spec.bump_amplitude / 2.0 * self._roughness(x, y) * waves
        return z

    def normal(self, x, y, eps=1e-5):
        """Upward unit normal from the height gradient (central differences)."""
        gx = (self.height(x + eps, y) - self.height(x - eps, y)) / (2 * eps)
        gy = (self.height(x, y + eps) - self.height(x, y - eps)) / (2 * eps)
        n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def in_corridor(self, x, y):
        return self.corridor_offset(x, y) <= self.spec.corridor_width / 2.0


def _corridor_heading(poly: np.ndarray, x: float = 0.0) -> float:
    for a, b in zip(poly[:-1], poly[1:]):
        if a[0] <= x <= b[0]:
            return float(np.arctan2(b[1] - a[1], b[0] - a[0]))
    d = poly[1] - poly[0]
    return float(np.arctan2(d[1], d[0]))


def camera_pose(spec: SceneSpec, camera: CameraSpec, terrain: Terrain | None = None) -> Pose:
    terrain = terrain or Terrain(spec)
    yaw = _corridor_heading(spec.corridor) + np.radians(camera.yaw_offset_deg)
    pitch = np.radians(camera.pitch_deg)
    forward = np.array([np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), -np.sin(pitch)])
    origin = np.array([0.0, 0.0, float(terrain.height(0.0, 0.0)) + camera.mount_height])
    return Pose(look_at_rotation(forward), origin)


def _march_terrain(terrain: Terrain, origin, dirs, max_depth):
    """First crossing below the heightfield along o + t * d, t in depth units."""
    n = len(dirs)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    t_prev = np.zeros(n)
    t = 0.05
    active = np.ones(n, dtype=bool)
    while t <= max_depth and active.any():
        p = origin + t * dirs[active]
        below = p[:, 2] <= terrain.height(p[:, 0], p[:, 1])
        hit = np.nonzero(active)[0][below]
        lo[hit], hi[hit] = t_prev[hit], t
        active[hit] = False
        t_prev[active] = t
        t += 0.04 + 0.01 * t
    # refine every bracket at once
    hit = np.nonzero(np.isfinite(hi))[0]
    a, b = lo[hit], hi[hit]
    for _ in range(40):
        mid = 0.5 * (a + b)
        q = origin + mid[:, None] * dirs[hit]
        under = q[:, 2] <= terrain.height(q[:, 0], q[:, 1])
        b = np.where(under, mid, b)
        a = np.where(under, a, mid)
    hi[hit] = b
    return hi


def _intersect_cylinders(terrain: Terrain, origin, dirs, obstacles):
    n = len(dirs)
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    for ox, oy, r, height in obstacles:
        base = float(terrain.height(ox, oy))
        z_top, z_bot = base + height, base - 1.0
        dx, dy = dirs[:, 0], dirs[:, 1]
        fx, fy = origin[0] - ox, origin[1] - oy
        a = dx * dx + dy * dy
        b = 2 * (fx * dx + fy * dy)
        c = fx * fx + fy * fy - r * r
        disc = b * b - 4 * a * c
        ok = (disc >= 0) & (a > 1e-12)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t_side = np.where(ok, (-b - sq) / (2 * a), np.inf)
        z_side = origin[2] + t_side * dirs[:, 2]
        side = ok & (t_side > 0) & (z_side >= z_bot) & (z_side <= z_top)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = np.where(np.abs(dirs[:, 2]) > 1e-12, (z_top - origin[2]) / dirs[:, 2], np.inf)
        cap_xy = origin[:2] + t_cap[:, None] * dirs[:, :2]
        cap = (t_cap > 0) & (np.hypot(cap_xy[:, 0] - ox, cap_xy[:, 1] - oy) <= r)
        for mask, t, kind in ((side, t_side, "side"), (cap, t_cap, "cap")):
            better = mask & (t < t_best)
            if not better.any():
                continue
            t_best[better] = t[better]
            if kind == "cap":
                normal[better] = (0.0, 0.0, 1.0)
            else:
                p = origin + t[better, None] * dirs[better]
                radial = np.stack([p[:, 0] - ox, p[:, 1] - oy, np.zeros(better.sum())], axis=-1)
                normal[better] = radial / r
    return t_best, normal


def generate_scene(spec: SceneSpec, camera: CameraSpec | None = None, frame_id: int = 0) -> SyntheticScene:
    """Render one RGB-D frame with ground-truth normals, corridor mask and trajectory."""
    camera = camera or CameraSpec()
    terrain = Terrain(spec)
    pose = camera_pose(spec, camera, terrain)
    if pose.translation[2] <= terrain.height(0.0, 0.0):
        raise ValueError("camera must be above the terrain")
    K = camera.intrinsics
    h, w = camera.height, camera.width
    u, v = pixel_grid(h, w)
    rays_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs = rays_cam @ pose.rotation.T
    origin = pose.translation

    t_ground = _march_terrain(terrain, origin, dirs, MAX_RANGE)
    t_obst, n_obst = _intersect_cylinders(terrain, origin, dirs, spec.obstacles)
    hit_obstacle = t_obst < t_ground
    depth = np.minimum(t_ground, t_obst)
    valid = np.isfinite(depth) & (depth <= MAX_RANGE)
    depth = np.where(valid, depth, 0.0)

    points = origin + depth[:, None] * dirs
    n_world = np.zeros((h * w, 3))
    ground = valid & ~hit_obstacle
    n_world[ground] = terrain.normal(points[ground, 0], points[ground, 1])
    n_world[valid & hit_obstacle] = n_obst[valid & hit_obstacle]
    n_cam = n_world @ pose.rotation

    corridor = np.zeros(h * w, dtype=bool)
    corridor[ground] = terrain.in_corridor(points[ground, 0], points[ground, 1])
    names = list(TEXTURES)
    labels = np.full(h * w, names.index("sky"))
    labels[ground] = names.index("terrain")
    labels[corridor] = names.index("corridor")
    labels[valid & hit_obstacle] = names.index("obstacle")

    rgb = _shade(spec, labels, n_world, valid, names).reshape(h, w, 3).transpose(2, 0, 1)
    frame = RgbdFrame(rgb, depth.reshape(1, h, w), K, pose, frame_id=frame_id, timestamp=0.0)
    normals = SurfaceNormalImage(n_cam.reshape(h, w, 3).transpose(2, 0, 1), valid.reshape(1, h, w))
    traj = corridor_trajectory(spec, terrain)
    footprint = project_footprint(traj, frame, occlusion_tolerance=0.25)
    return SyntheticScene(frame, normals, corridor.reshape(1, h, w), traj, footprint, labels.reshape(h, w))


def _shade(spec: SceneSpec, labels, n_world, valid, names):
    rng = np.random.default_rng([spec.seed, 2])
    light = rng.uniform(0.85, 1.1)
    sun = np.array([0.3, -0.4, 0.87])
    sun = sun / np.linalg.norm(sun)
    lambert = np.where(valid, 0.75 + 0.25 * np.clip(n_world @ sun, 0.0, 1.0), 1.0)
    rgb = np.zeros((len(labels), 3))
    for idx, name in enumerate(names):
        sel = labels == idx
        mean, sigma = spec.textures[name]
        tint = np.asarray(mean) + rng.normal(0.0, 0.03, 3)
        base = tint * (light if name != "sky" else 1.0)
        rgb[sel] = base * lambert[sel, None] + rng.normal(0.0, sigma, (sel.sum(), 3))
    return np.clip(rgb, 0.0, 1.0)


def corridor_trajectory(spec: SceneSpec, terrain: Terrain | None = None, spacing: float = 0.5, speed: float = 1.0) -> Trajectory:
    """Poses along the corridor, offset laterally by ``spec.footprint_offset``, from the origin onward."""
    terrain = terrain or Terrain(spec)
    poly = spec.corridor
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s_knots = np.concatenate([[0.0], np.cumsum(seg)])
    # arclength of the point of the centerline nearest the origin
    best, s0 = np.inf, 0.0
    for i, (a, b) in enumerate(zip(poly[:-1], poly[1:])):
        d = b - a
        t = np.clip((-a) @ d / (d @ d), 0.0, 1.0)
        dist = np.linalg.norm(a + t * d)
        if dist < best:
            best, s0 = dist, s_knots[i] + t * seg[i]
    s = np.arange(s0, s_knots[-1], spacing)
    xy = np.stack([np.interp(s, s_knots, poly[:, 0]), np.interp(s, s_knots, poly[:, 1])], axis=-1)
    heading = np.arctan2(np.gradient(xy[:, 1]), np.gradient(xy[:, 0]))
    xy = xy + spec.footprint_offset * np.stack([-np.sin(heading), np.cos(heading)], axis=-1)
    z = terrain.height(xy[:, 0], xy[:, 1])
    poses = [Pose(yaw_rotation(yaw), (x, y, zz)) for (x, y), yaw, zz in zip(xy, heading, z)]
    return Trajectory((s - s0) / speed, poses, robot_width=spec.footprint_fraction * spec.corridor_width)


def random_scene_spec(seed: int) -> SceneSpec:
    """Random terrain, curving corridor and off-corridor obstacles."""
    rng = np.random.default_rng([seed, 0])
    width = rng.uniform(2.0, 3.2)
    amp = rng.uniform(0.5, 4.0)
    k = rng.uniform(0.04, 0.1)
    phase = rng.uniform(0, 2 * np.pi)
    xs = np.arange(-6.0, 62.0, 1.0)
    ys = amp * (np.sin(k * xs + phase) - np.sin(phase))
    corridor = np.stack([xs, ys], axis=-1)
    obstacles = []
    for _ in range(int(rng.integers(2, 7))):
        for _attempt in range(20):
            ox = rng.uniform(4.0, 30.0)
            side = rng.choice([-1.0, 1.0])
            oy = amp * (np.sin(k * ox + phase) - np.sin(phase)) + side * rng.uniform(width / 2 + 1.5, width / 2 + 8.0)
            r = rng.uniform(0.3, 1.0)
            if polyline_distance(np.array(ox), np.array(oy), corridor) > width / 2 + r + 1.0:
                obstacles.append((float(ox), float(oy), float(r), float(rng.uniform(0.5, 2.0))))
                break
    # the robot drives anywhere inside the corridor, not only on its centerline
    slack = width * (1.0 - 0.25) / 2.0 - 0.15
    offset = rng.uniform(-slack, slack)
    return SceneSpec(
        seed=seed,
        footprint_offset=float(offset),
        slope_deg=float(rng.uniform(-4.0, 4.0)),
        bump_amplitude=float(rng.uniform(0.15, 0.4)),
        bump_frequency=float(rng.uniform(0.8, 1.6)),
        corridor=corridor,
        corridor_width=float(width),
        obstacles=obstacles,
    )


def random_camera(seed: int, width: int = 64, height: int = 64) -> CameraSpec:
    rng = np.random.default_rng([seed, 3])
    return CameraSpec(
        width=width,
        height=height,
        focal=0.75 * width,
        mount_height=float(rng.uniform(1.4, 2.0)),
        pitch_deg=float(rng.uniform(8.0, 15.0)),
        yaw_offset_deg=float(rng.uniform(-12.0, 12.0)),
    )


def scene_to_sample(scene: SyntheticScene, name: str = "") -> Sample:
    return Sample(scene.frame, scene.footprint, scene.gt_normals, scene.gt_traversable, name)


def generate_corpus(count: int, seed: int = 0, width: int = 64, height: int = 64) -> list[Sample]:
    out = []
    for i in range(count):
        s = seed * 100003 + i
        scene = generate_scene(random_scene_spec(s), random_camera(s, width, height), frame_id=i)
        out.append(scene_to_sample(scene, f"{i:06d}"))
    return out


# ---------------------------------------------------------------- dataset io


def _write_png(path: Path, arr: np.ndarray):
    Image.fromarray(arr).save(path)


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I"):
            return np.array(im, dtype=np.int64)
        return np.array(im)


def encode_normals(normals: SurfaceNormalImage) -> np.ndarray:
    q = np.rint((normals.normals.transpose(1, 2, 0) + 1.0) / 2.0 * 255.0)
    q = np.clip(q, 0, 255).astype(np.uint8)
    valid = normals.validity[0]
    q[~valid] = 0
    q[valid & (q.max(axis=-1) == 0)] = 1  # keep black reserved for invalid pixels
    return q


def decode_normals(q: np.ndarray) -> SurfaceNormalImage:
    valid = q.max(axis=-1) > 0
    n = q.astype(np.float64) / 255.0 * 2.0 - 1.0
    n[~valid] = 0.0
    return SurfaceNormalImage(n.transpose(2, 0, 1), valid[None])


class DatasetWriter:
    """Writes samples and keeps ``manifest.json`` up to date."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = {"splits": {}}
        mpath = self.root / "manifest.json"
        if mpath.exists():
            self.manifest = read_manifest(self.root)

    def write(self, sample: Sample, split: str = "train", name: str | None = None) -> Path:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        name = name or sample.name or f"{sum(len(v) for v in self.manifest['splits'].values()):06d}"
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        f = sample.frame
        _write_png(d / "rgb.png", np.rint(f.rgb.transpose(1, 2, 0) * 255).astype(np.uint8))
        mm = np.rint(f.depth[0] * 1000.0)
        if mm.max(initial=0) > 65535:
            log.warning("sample %s: depth beyond 65.535 m stored as invalid", name)
            mm[mm > 65535] = 0
        _write_png(d / "depth.png", mm.astype(np.uint16))
        (d / "intrinsics.json").write_text(json.dumps(f.intrinsics.as_dict(), indent=2))
        pose = {
            "rotation": f.pose.rotation.reshape(-1).tolist(),
            "translation": f.pose.translation.tolist(),
            "frame_id": int(f.frame_id),
            "timestamp": float(f.timestamp),
        }
        (d / "pose.json").write_text(json.dumps(pose, indent=2))
        _write_png(d / "footprint.png", (sample.footprint.mask[0] * 255).astype(np.uint8))
        if sample.gt_normals is not None:
            _write_png(d / "gt_normals.png", encode_normals(sample.gt_normals))
        if sample.gt_traversable is not None:
            _write_png(d / "gt_traversable.png", (np.asarray(sample.gt_traversable).reshape(f.shape) * 255).astype(np.uint8))
        names = self.manifest["splits"].setdefault(split, [])
        if name not in names:
            names.append(name)
        (self.root / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        return d


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
        splits = manifest["splits"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(splits, dict):
        raise ValueError(f"malformed manifest {path}: 'splits' must be an object")
    for split, names in splits.items():
        if split not in SPLITS:
            raise ValueError(f"manifest {path} names unknown split {split!r}; expected one of {SPLITS}")
        if not isinstance(names, list):
            raise ValueError(f"malformed manifest {path}: split {split!r} must list sample names")
    return manifest


def read_sample(d: Path) -> Sample:
    d = Path(d)
    rgb = _read_png(d / "rgb.png").astype(np.float64) / 255.0
    depth = _read_png(d / "depth.png").astype(np.float64) / 1000.0
    intr = json.loads((d / "intrinsics.json").read_text())
    pose = json.loads((d / "pose.json").read_text())
    frame = RgbdFrame(
        rgb.transpose(2, 0, 1)[:3],
        depth[None],
        Intrinsics(**{k: float(intr[k]) for k in ("fx", "fy", "cx", "cy")}),
        Pose(np.array(pose["rotation"]).reshape(3, 3), pose["translation"]),
        frame_id=int(pose.get("frame_id", 0)),
        timestamp=float(pose.get("timestamp", 0.0)),
    )
    fp = _read_png(d / "footprint.png") > 127
    footprint = FootprintMask(fp[None], np.ones_like(fp)[None])
    normals = decode_normals(_read_png(d / "gt_normals.png")) if (d / "gt_normals.png").exists() else None
    trav = (_read_png(d / "gt_traversable.png") > 127)[None] if (d / "gt_traversable.png").exists() else None
    return Sample(frame, footprint, normals, trav, d.name)


class SampleDataset:
    """Reads samples of one or more splits; broken samples are skipped."""

    def __init__(self, root, splits=None):
        self.root = Path(root)
        if (self.root / "manifest.json").exists():
            manifest = read_manifest(self.root)
            wanted = splits or list(manifest["splits"])
            if isinstance(wanted, str):
                wanted = [wanted]
            for s in wanted:
                if s not in SPLITS:
                    raise ValueError(f"unknown split {s!r}; expected one of {SPLITS}")
            self.names = [n for s in wanted for n in manifest["splits"].get(s, [])]
        else:
            self.names = []

    def __iter__(self):
        for name in self.names:
            try:
                yield read_sample(self.root / name)
            except (OSError, ValueError, KeyError, TypeError) as exc:
                log.warning("skipping sample %s: %s", name, exc)

    def load(self) -> list[Sample]:
        return list(self)

    def __len__(self):
        return len(self.names)
