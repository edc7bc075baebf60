"""Pinhole camera geometry, surface normals from depth, footprint masks.

Conventions: camera frame is x right, y down, z forward; world and robot
frames are z up (robot x forward, y left). Pixel (i, j) has its center at
image coordinates (u=j, v=i).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

FOOTPRINT_HORIZON = 10.0  # meters of trajectory projected ahead of the frame
NEAR_PLANE = 0.05


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def centered(cls, width: int, height: int, focal: float) -> "Intrinsics":
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0)

    def as_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass
class Pose:
    """Rigid transform mapping local coordinates into the world frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9 or np.linalg.det(self.rotation) < 0:
            raise ValueError(f"rotation is not a proper orthonormal matrix (|RtR - I| = {err:.2e})")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Local -> world for points of shape (..., 3)."""
        return points @ self.rotation.T + self.translation

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        """World -> local for points of shape (..., 3)."""
        return (points - self.translation) @ self.rotation


@dataclass
class RgbdFrame:
    rgb: np.ndarray  # (3, h, w) in [0, 1]
    depth: np.ndarray  # (1, h, w) meters, 0 = invalid
    intrinsics: Intrinsics
    pose: Pose  # world-from-camera
    frame_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim == 2:
            self.depth = self.depth[None]
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise ValueError(f"rgb must be (3, h, w), got {self.rgb.shape}")
        if self.depth.shape != (1,) + self.rgb.shape[1:]:
            raise ValueError(f"depth shape {self.depth.shape} does not match rgb shape {self.rgb.shape}")
        if (self.depth < 0).any() or not np.isfinite(self.depth).all():
            raise ValueError("depth must be finite and non-negative")
        if self.rgb.min() < 0 or self.rgb.max() > 1:
            raise ValueError("rgb values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[1], self.rgb.shape[2]


@dataclass
class SurfaceNormalImage:
    normals: np.ndarray  # (3, h, w) unit vectors, camera frame
    validity: np.ndarray  # (1, h, w) bool

    def __post_init__(self):
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.validity.ndim == 2:
            self.validity = self.validity[None]


@dataclass
class FootprintMask:
    mask: np.ndarray  # (1, h, w) bool
    valid: np.ndarray  # (1, h, w) bool

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.mask.ndim == 2:
            self.mask = self.mask[None]
        if self.valid.ndim == 2:
            self.valid = self.valid[None]
        if (self.mask & ~self.valid).any():
            raise ValueError("footprint pixels must be marked valid")


@dataclass
class Trajectory:
    timestamps: np.ndarray
    poses: list  # world-from-robot Pose per timestamp
    robot_width: float = 1.0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("one timestamp per pose required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if self.robot_width <= 0:
            raise ValueError("robot_width must be positive")


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return u, v


def unproject(depth: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """Camera-frame points (3, h, w); invalid depth maps to the origin."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3:
        d = d[0]
    u, v = pixel_grid(*d.shape)
    x = (u - intrinsics.cx) / intrinsics.fx * d
    y = (v - intrinsics.cy) / intrinsics.fy * d
    return np.stack([x, y, d])


def project(points: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """Camera-frame points (..., 3) -> pixel coordinates (..., 2) as (u, v)."""
    z = points[..., 2]
    u = intrinsics.fx * points[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * points[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def normals_from_depth(depth: np.ndarray, intrinsics: Intrinsics, max_relative_jump: float | None = None) -> SurfaceNormalImage:
    """Normals from central-difference tangents of the unprojected depth.

    Normals face the camera. Border pixels and pixels with an invalid
    4-neighbour are marked invalid; ``max_relative_jump`` additionally
    rejects pixels straddling a depth discontinuity.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3:
        d = d[0]
    h, w = d.shape
    pts = unproject(d, intrinsics)
    du = np.zeros_like(pts)
    dv = np.zeros_like(pts)
    du[:, :, 1:-1] = pts[:, :, 2:] - pts[:, :, :-2]
    dv[:, 1:-1, :] = pts[:, 2:, :] - pts[:, :-2, :]
    n = np.cross(du, dv, axis=0)
    facing = (n * pts).sum(axis=0) > 0
    n[:, facing] *= -1
    norm = np.linalg.norm(n, axis=0)

    ok = d > 0
    valid = np.zeros((h, w), dtype=bool)
    valid[1:-1, 1:-1] = (
        ok[1:-1, 1:-1] & ok[:-2, 1:-1] & ok[2:, 1:-1] & ok[1:-1, :-2] & ok[1:-1, 2:]
    )
    if max_relative_jump is not None:
        c = d[1:-1, 1:-1]
        jump = np.zeros_like(c)
        for nb in (d[:-2, 1:-1], d[2:, 1:-1], d[1:-1, :-2], d[1:-1, 2:]):
            jump = np.maximum(jump, np.abs(nb - c))
        valid[1:-1, 1:-1] &= jump <= max_relative_jump * np.maximum(c, 1e-12)
    valid &= norm > 0
    normals = np.zeros_like(n)
    normals[:, valid] = n[:, valid] / norm[valid]
    return SurfaceNormalImage(normals, valid[None])


def _clip_near(poly: np.ndarray, near: float = NEAR_PLANE) -> np.ndarray:
    """Clip a camera-frame polygon (m, 3) to z >= near."""
    out = []
    m = len(poly)
    for a in range(m):
        p, q = poly[a], poly[(a + 1) % m]
        p_in, q_in = p[2] >= near, q[2] >= near
        if p_in:
            out.append(p)
        if p_in != q_in:
            t = (near - p[2]) / (q[2] - p[2])
            out.append(p + t * (q - p))
    return np.array(out).reshape(-1, 3)


def points_in_polygon(u: np.ndarray, v: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule test of points (u, v) against polygon vertices (m, 2)."""
    inside = np.zeros(u.shape, dtype=bool)
    m = len(poly)
    for a in range(m):
        x1, y1 = poly[a]
        x2, y2 = poly[(a + 1) % m]
        if y1 == y2:
            continue
        crosses = (y1 > v) != (y2 > v)
        x_cross = x1 + (v - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (u < x_cross)
    return inside


def _future_segments(traj: Trajectory, t0: float, horizon: float):
    idx = np.nonzero(traj.timestamps >= t0)[0]
    travelled = 0.0
    for a, b in zip(idx[:-1], idx[1:]):
        pa, pb = traj.poses[a], traj.poses[b]
        length = float(np.linalg.norm(pb.translation - pa.translation))
        if length == 0.0:
            continue
        if travelled >= horizon:
            break
        if travelled + length > horizon:
            frac = (horizon - travelled) / length
            tb = pa.translation + frac * (pb.translation - pa.translation)
            pb = Pose(pb.rotation, tb)
        travelled += length
        yield pa, pb


def project_footprint(
    traj: Trajectory,
    frame: RgbdFrame,
    horizon: float = FOOTPRINT_HORIZON,
    occlusion_tolerance: float | None = None,
) -> FootprintMask:
    """Rasterize the ground strip swept by the robot into the frame's image.

    Each consecutive pose pair ahead of ``frame.timestamp`` (up to
    ``horizon`` meters of travel) spans a quad of width ``robot_width``.
    Quads are clipped to the near plane, projected, and filled at pixel
    centers. With ``occlusion_tolerance`` set, pixels whose observed depth
    lies in front of the strip by more than the tolerance (or is invalid)
    are dropped.
    """
    h, w = frame.shape
    K = frame.intrinsics
    u, v = pixel_grid(h, w)
    mask = np.zeros((h, w), dtype=bool)
    half = traj.robot_width / 2.0
    n_segments = 0
    depth = frame.depth[0]
    for pa, pb in _future_segments(traj, frame.timestamp, horizon):
        n_segments += 1
        la, lb = pa.rotation[:, 1], pb.rotation[:, 1]
        quad_w = np.array([
            pa.translation + half * la,
            pb.translation + half * lb,
            pb.translation - half * lb,
            pa.translation - half * la,
        ])
        quad_c = frame.pose.inverse_apply(quad_w)
        clipped = _clip_near(quad_c)
        if len(clipped) < 3:
            continue
        inside = points_in_polygon(u, v, project(clipped, K))
        if occlusion_tolerance is not None and inside.any():
            normal = np.cross(quad_c[1] - quad_c[0], quad_c[3] - quad_c[0])
            offset = normal @ quad_c[0]
            rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
            denom = rays @ normal
            with np.errstate(divide="ignore", invalid="ignore"):
                z_strip = np.where(np.abs(denom) > 1e-12, offset / denom, np.inf)
            visible = (depth > 0) & (depth >= z_strip - occlusion_tolerance)
            inside &= visible
        mask |= inside
    if n_segments == 0:
        warnings.warn(f"frame {frame.frame_id}: no future poses in trajectory, footprint is empty", RuntimeWarning)
    return FootprintMask(mask[None], np.ones((1, h, w), dtype=bool))


def look_at_rotation(forward_world: np.ndarray, up_world=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation for a camera looking along ``forward_world``."""
    z = np.asarray(forward_world, dtype=np.float64)
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up_world, dtype=np.float64))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def angular_error_deg(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> float:
    """Mean angle (degrees) between normal images (3, h, w) over valid pixels."""
    valid = np.asarray(valid, dtype=bool).reshape(pred.shape[1:])
    if not valid.any():
        return float("nan")
    cos = np.clip((pred * gt).sum(axis=0)[valid], -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).mean())
