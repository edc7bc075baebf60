import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftfoot.geometry import (
    FootprintMask,
    Intrinsics,
    Pose,
    RgbdFrame,
    Trajectory,
    angular_error_deg,
    look_at_rotation,
    normals_from_depth,
    project,
    project_footprint,
    unproject,
    yaw_rotation,
)

K = Intrinsics(50.0, 45.0, 31.5, 23.5)


def level_camera(height=1.5, width=64, rows=48, focal=40.0, pitch_deg=0.0):
    """Camera at (0, 0, height) looking along world +x, optionally pitched down."""
    p = np.radians(pitch_deg)
    fwd = np.array([np.cos(p), 0.0, -np.sin(p)])
    R = look_at_rotation(fwd)
    intr = Intrinsics.centered(width, rows, focal)
    return Pose(R, np.array([0.0, 0.0, height])), intr


def ground_depth(pose, intr, h, w):
    """Analytic depth of the z=0 plane."""
    v, u = np.mgrid[0:h, 0:w].astype(float)
    rays = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], -1)
    dirs = rays @ pose.rotation.T
    with np.errstate(divide="ignore"):
        t = -pose.translation[2] / dirs[..., 2]
    return np.where((dirs[..., 2] < 0) & (t < 200), t, 0.0)


def make_frame(pose, intr, h, w, depth=None, t=0.0):
    depth = ground_depth(pose, intr, h, w) if depth is None else depth
    return RgbdFrame(np.full((3, h, w), 0.5), depth[None], intr, pose, timestamp=t)


# --------------------------------------------------------------- types


def test_pose_validation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    p = Pose(yaw_rotation(0.3), [1.0, 2.0, 3.0])
    pts = np.random.default_rng(0).standard_normal((5, 3))
    assert np.allclose(p.inverse_apply(p.apply(pts)), pts, atol=1e-12)


def test_frame_validation():
    with pytest.raises(ValueError):
        RgbdFrame(np.full((3, 2, 2), 1.5), np.ones((1, 2, 2)), K, Pose.identity())
    with pytest.raises(ValueError):
        RgbdFrame(np.full((3, 2, 2), 0.5), -np.ones((1, 2, 2)), K, Pose.identity())
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)


def test_trajectory_requires_increasing_time():
    poses = [Pose.identity()] * 3
    with pytest.raises(ValueError):
        Trajectory([0.0, 1.0, 1.0], poses)


def test_footprint_mask_invariant():
    with pytest.raises(ValueError):
        FootprintMask(np.ones((1, 2, 2), bool), np.zeros((1, 2, 2), bool))


# --------------------------------------------------------------- unproject / project


def test_unproject_principal_point_and_invalid():
    depth = np.zeros((1, 48, 64))
    depth[0, 23, 31] = 0.0
    pts = unproject(depth, Intrinsics.centered(64, 48, 40.0))
    assert np.all(pts[:, 23, 31] == 0)
    intr = Intrinsics(40.0, 40.0, 10.0, 7.0)
    d = np.full((1, 15, 21), 3.0)
    assert np.array_equal(unproject(d, intr)[:, 7, 10], [0.0, 0.0, 3.0])


def test_unproject_closed_form():
    rng = np.random.default_rng(1)
    d = rng.uniform(0.5, 9.0, (1, 48, 64))
    pts = unproject(d, K)
    for _ in range(20):
        i, j = rng.integers(0, 48), rng.integers(0, 64)
        z = d[0, i, j]
        assert np.array_equal(pts[:, i, j], [(j - K.cx) / K.fx * z, (i - K.cy) / K.fy * z, z])


def test_project_unproject_round_trip():
    rng = np.random.default_rng(2)
    d = rng.uniform(0.5, 9.0, (1, 48, 64))
    pts = unproject(d, K).reshape(3, -1).T
    uv = project(pts, K)
    v, u = np.mgrid[0:48, 0:64]
    assert np.abs(uv[:, 0] - u.ravel()).max() <= 1e-6
    assert np.abs(uv[:, 1] - v.ravel()).max() <= 1e-6


# --------------------------------------------------------------- normals


def test_normals_fronto_parallel_plane():
    sn = normals_from_depth(np.full((1, 20, 30), 4.0), K)
    v = sn.validity[0]
    assert v[1:-1, 1:-1].all() and not v[0].any()
    assert np.allclose(sn.normals[:, v].T, [0.0, 0.0, -1.0], atol=1e-12)


def test_normals_ground_plane_level_camera():
    pose, intr = level_camera()
    h, w = 48, 64
    depth = ground_depth(pose, intr, h, w)
    sn = normals_from_depth(depth, intr)
    v = sn.validity[0]
    assert v.sum() > 100
    n = sn.normals[:, v].T
    assert np.all(-n[:, 1] > 0)
    assert np.abs(n - n[0]).max() < 1e-6
    assert np.allclose(n[0], [0.0, -1.0, 0.0], atol=1e-6)


def test_normals_45_degree_ramp():
    # plane z = x + 5 seen by a camera at the origin looking along +z
    intr = Intrinsics.centered(40, 40, 40.0)
    v, u = np.mgrid[0:40, 0:40].astype(float)
    a = (u - intr.cx) / intr.fx
    depth = 5.0 / (1.0 - a)
    sn = normals_from_depth(depth[None], intr)
    analytic = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)
    ok = sn.validity[0]
    cos = np.clip(sn.normals[:, ok].T @ analytic, -1, 1)
    assert np.degrees(np.arccos(cos)).max() < 2.0


def test_normals_invalid_neighbours():
    d = np.full((1, 10, 10), 3.0)
    d[0, 5, 5] = 0.0
    sn = normals_from_depth(d, K)
    v = sn.validity[0]
    for i, j in [(5, 5), (4, 5), (6, 5), (5, 4), (5, 6)]:
        assert not v[i, j]
    assert v[2, 2]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_normals_unit_norm(seed):
    d = np.random.default_rng(seed).uniform(1.0, 5.0, (1, 12, 12))
    sn = normals_from_depth(d, K)
    v = sn.validity[0]
    assert np.abs(np.linalg.norm(sn.normals[:, v], axis=0) - 1).max() <= 1e-6


# --------------------------------------------------------------- footprint


def straight_trajectory(length=12.0, step=0.5, width=1.0, y=0.0, start=0.0):
    xs = np.arange(start, start + length, step)
    poses = [Pose(np.eye(3), [x, y, 0.0]) for x in xs]
    return Trajectory(np.arange(len(xs), dtype=float), poses, width)


def test_footprint_symmetric_for_centered_camera():
    pose, intr = level_camera(pitch_deg=15.0, width=64, rows=48)
    frame = make_frame(pose, intr, 48, 64)
    fp = project_footprint(straight_trajectory(), frame).mask[0]
    assert fp.sum() > 0
    left = fp[:, :32].sum()
    right = fp[:, 32:].sum()
    assert abs(int(left) - int(right)) <= 1
    assert np.array_equal(fp, fp[:, ::-1])


def test_footprint_behind_camera_is_empty():
    pose, intr = level_camera(pitch_deg=15.0)
    frame = make_frame(pose, intr, 48, 64)
    traj = straight_trajectory(length=5.0, start=-8.0)
    fp = project_footprint(traj, frame)
    assert not fp.mask.any() and fp.valid.all()


def test_footprint_without_future_poses_warns():
    pose, intr = level_camera(pitch_deg=15.0)
    frame = make_frame(pose, intr, 48, 64, t=100.0)
    with pytest.warns(RuntimeWarning, match="no future poses"):
        fp = project_footprint(straight_trajectory(), frame)
    assert not fp.mask.any()


def test_footprint_matches_point_projection_oracle():
    # single segment from 2 m to 3 m ahead, 1 m wide
    pose, intr = level_camera(pitch_deg=20.0, width=64, rows=48, focal=40.0)
    frame = make_frame(pose, intr, 48, 64)
    traj = Trajectory([0.0, 1.0], [Pose(np.eye(3), [2.0, 0.0, 0.0]), Pose(np.eye(3), [3.0, 0.0, 0.0])], 1.0)
    fp = project_footprint(traj, frame).mask[0]
    # dense sampling of the strip projected point by point
    xs, ys = np.meshgrid(np.linspace(2.0, 3.0, 400), np.linspace(-0.5, 0.5, 400))
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], -1)
    uv = project(pose.inverse_apply(pts), intr)
    rows, cols = np.nonzero(fp)
    assert abs(rows.min() - uv[:, 1].min()) <= 1 and abs(rows.max() - uv[:, 1].max()) <= 1
    assert abs(cols.min() - uv[:, 0].min()) <= 1 and abs(cols.max() - uv[:, 0].max()) <= 1


def test_footprint_monotone_in_width():
    pose, intr = level_camera(pitch_deg=15.0)
    frame = make_frame(pose, intr, 48, 64)
    prev = None
    for width in (0.3, 0.8, 1.5, 3.0):
        m = project_footprint(straight_trajectory(width=width), frame).mask
        if prev is not None:
            assert not (prev & ~m).any()
        prev = m


def test_footprint_horizon():
    pose, intr = level_camera(pitch_deg=2.0)
    frame = make_frame(pose, intr, 48, 64)
    traj = straight_trajectory(length=40.0)
    short = project_footprint(traj, frame, horizon=5.0).mask
    long = project_footprint(traj, frame, horizon=30.0).mask
    assert short.sum() < long.sum() and not (short & ~long).any()


def test_angular_error():
    a = np.zeros((3, 2, 2))
    a[2] = 1
    b = np.zeros((3, 2, 2))
    b[1] = 1
    assert abs(angular_error_deg(a, b, np.ones((1, 2, 2), bool)) - 90.0) < 1e-9
    assert angular_error_deg(a, a, np.ones((1, 2, 2), bool)) == 0.0
