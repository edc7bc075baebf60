import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftfoot.costmap import UNKNOWN_COST, GlobalCostMap, freespace_mask, integrate_frame
from ftfoot.geometry import Intrinsics, Pose, RgbdFrame, look_at_rotation, yaw_rotation


def ground_frame(x=0.0, y=0.0, yaw=0.0, h=24, w=32, height=2.0, pitch_deg=35.0, t=0.0):
    p = np.radians(pitch_deg)
    fwd = yaw_rotation(yaw) @ np.array([np.cos(p), 0.0, -np.sin(p)])
    pose = Pose(look_at_rotation(fwd), [x, y, height])
    intr = Intrinsics.centered(w, h, 24.0)
    v, u = np.mgrid[0:h, 0:w].astype(float)
    rays = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], -1)
    dirs = rays @ pose.rotation.T
    with np.errstate(divide="ignore"):
        depth = np.where(dirs[..., 2] < 0, -height / dirs[..., 2], 0.0)
    return RgbdFrame(np.full((3, h, w), 0.5), depth[None], intr, pose, timestamp=t)


def test_single_pixel_deposit():
    intr = Intrinsics(10.0, 10.0, 0.0, 0.0)
    depth = np.full((1, 1, 1), 3.0)
    # camera looking straight down from 3 m above (1.1, 2.3)
    R = look_at_rotation([0.0, 0.0, -1.0], up_world=(0.0, 1.0, 0.0))
    frame = RgbdFrame(np.zeros((3, 1, 1)), depth, intr, Pose(R, [1.1, 2.3, 3.0]))
    m = GlobalCostMap.empty(4.0, 4.0)
    integrate_frame(m, np.ones((1, 1)), frame)
    r, c = m.cell_of(1.1, 2.3)
    assert m.cost[r, c] == 0.0 and m.hits[r, c] == 1
    assert m.hits.sum() == 1
    others = np.ones(m.shape, bool)
    others[r, c] = False
    assert np.all(m.cost[others] == UNKNOWN_COST)


def test_two_sample_mean():
    m = GlobalCostMap.empty(2.0, 2.0)
    m.deposit([0.5], [0.5], [0.2])
    m.deposit([0.5], [0.5], [0.4])
    r, c = m.cell_of(0.5, 0.5)
    assert abs(m.cost[r, c] - 0.3) < 1e-12 and m.hits[r, c] == 2


def test_max_fusion():
    m = GlobalCostMap.empty(2.0, 2.0, fusion="max")
    m.deposit([0.5, 0.5], [0.5, 0.5], [0.2, 0.7])
    m.deposit([0.5], [0.5], [0.4])
    r, c = m.cell_of(0.5, 0.5)
    assert m.cost[r, c] == 0.7 and m.hits[r, c] == 3


def test_occupied_cells_match_unprojection_oracle():
    frame = ground_frame(x=1.0, y=-0.5, yaw=0.4)
    rng = np.random.default_rng(0)
    p = rng.uniform(0, 1, frame.shape)
    m = GlobalCostMap.empty(10.0, 10.0, origin=(-5.0, -5.0))
    integrate_frame(m, p, frame, max_range=20.0)

    # brute force, one pixel at a time
    intr, pose = frame.intrinsics, frame.pose
    sums, counts = {}, {}
    for i in range(frame.shape[0]):
        for j in range(frame.shape[1]):
            d = frame.depth[0, i, j]
            if d <= 0 or d > 20.0:
                continue
            cam = np.array([(j - intr.cx) / intr.fx * d, (i - intr.cy) / intr.fy * d, d])
            wx, wy, _ = pose.rotation @ cam + pose.translation
            key = (math.floor((wx - m.origin[0]) / m.resolution), math.floor((wy - m.origin[1]) / m.resolution))
            sums[key] = sums.get(key, 0.0) + 1.0 - p[i, j]
            counts[key] = counts.get(key, 0) + 1
    rows, cols = np.nonzero(m.hits)
    assert set(zip(cols.tolist(), rows.tolist())) == set(counts)
    for (c, r), n in counts.items():
        assert m.hits[r, c] == n
        assert abs(m.cost[r, c] - sums[(c, r)] / n) < 1e-12


def test_max_range_drops_far_pixels():
    frame = ground_frame(pitch_deg=10.0)
    near = integrate_frame(GlobalCostMap.empty(4.0, 4.0), np.ones(frame.shape), frame, max_range=5.0)
    far = integrate_frame(GlobalCostMap.empty(4.0, 4.0), np.ones(frame.shape), frame, max_range=50.0)
    d = frame.depth[0]
    assert near.hits.sum() == ((d > 0) & (d <= 5.0)).sum()
    assert far.hits.sum() > near.hits.sum()


def test_mismatched_prediction_shape():
    frame = ground_frame()
    with pytest.raises(ValueError, match="does not match"):
        integrate_frame(GlobalCostMap.empty(2.0, 2.0), np.ones((3, 3)), frame)


def test_integration_order_independent():
    frames = [ground_frame(x=0.3 * k, yaw=0.2 * k, t=k) for k in range(5)]
    rng = np.random.default_rng(1)
    preds = [rng.uniform(0, 1, f.shape) for f in frames]

    def build(order):
        m = GlobalCostMap.empty(30.0, 30.0, origin=(-15.0, -15.0))
        for k in order:
            integrate_frame(m, preds[k], frames[k])
        return m

    ref = build(range(5))
    for perm in [(4, 3, 2, 1, 0), (2, 0, 4, 1, 3), (1, 3, 0, 2, 4)]:
        other = build(perm)
        assert other.origin == ref.origin
        assert np.array_equal(other.hits, ref.hits)
        assert np.abs(other.cost - ref.cost).max() <= 1e-12


def test_growth_preserves_world_values():
    m = GlobalCostMap.empty(1.0, 1.0)
    m.deposit([0.1, 0.7], [0.1, 0.3], [0.25, 0.75])
    before = {(0.1, 0.1): 0.25, (0.7, 0.3): 0.75}
    m.deposit([-3.3, 5.1], [4.2, -2.0], [0.0, 1.0])
    assert m.shape[0] > 5 and m.shape[1] > 5
    for (x, y), c in before.items():
        assert m.cost_at(np.array([x]), np.array([y]))[0] == c
    assert m.cost_at(np.array([-3.3]), np.array([4.2]))[0] == 0.0
    assert m.cost_at(np.array([5.1]), np.array([-2.0]))[0] == 1.0
    assert m.hits.sum() == 4
    assert np.all(m.cost[m.hits == 0] == UNKNOWN_COST)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(0, 1)), min_size=1, max_size=40))
def test_cost_stays_in_unit_interval(samples):
    m = GlobalCostMap.empty(1.0, 1.0)
    x, y, c = map(np.array, zip(*samples))
    m.deposit(x, y, c)
    assert m.cost.min() >= 0.0 and m.cost.max() <= 1.0
    assert np.all(m.cost[m.hits == 0] == UNKNOWN_COST)
    assert m.hits.sum() == len(samples)


def test_save_load_round_trip(tmp_path):
    m = GlobalCostMap.empty(3.0, 2.0, origin=(-1.0, 4.0), resolution=0.25)
    m.deposit([0.0, 0.3, 1.2], [4.5, 4.5, 5.7], [0.125, 0.5, 1.0])
    path = tmp_path / "m.costmap"
    m.save(path)
    back = GlobalCostMap.load(path)
    assert back.origin == m.origin and back.resolution == m.resolution
    assert np.array_equal(back.hits, m.hits)
    assert np.array_equal(back.cost, m.cost.astype(np.float32))
    path2 = tmp_path / "m2.costmap"
    back.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "x.costmap"
    bad.write_bytes(b"hello")
    with pytest.raises(ValueError, match="not a cost map"):
        GlobalCostMap.load(bad)
    m = GlobalCostMap.empty(1.0, 1.0)
    m.save(bad)
    bad.write_bytes(bad.read_bytes()[:-3])
    with pytest.raises(ValueError, match="expected"):
        GlobalCostMap.load(bad)


# --------------------------------------------------------------- freespace


def test_freespace_examples():
    assert freespace_mask(np.zeros((3, 3))).all()
    assert freespace_mask(np.array([0.5]))[0] == 0
    got = freespace_mask(np.array([[0.1, 0.5], [0.49, 0.9]]))
    assert np.array_equal(got, [[1, 0], [1, 0]])


def test_freespace_unknown_cells_excluded():
    m = GlobalCostMap.empty(1.0, 1.0)
    assert not freespace_mask(m.cost).any()


def test_freespace_threshold_exhaustive():
    # element-wise oracle over a sweep including the float neighbours of 0.5
    vals = np.array([0.0, 0.25, np.nextafter(0.5, 0), 0.5, np.nextafter(0.5, 1), 0.75, 1.0])
    for a, b in itertools.product(vals, repeat=2):
        got = freespace_mask(np.array([a, b]))
        assert got.tolist() == [int(a < 0.5), int(b < 0.5)]
