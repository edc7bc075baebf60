"""RRT* planning on a cost map, pure-pursuit rollouts and evaluation metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .costmap import GlobalCostMap

OBSTACLE_COST = 0.8


class NoPathError(RuntimeError):
    """RRT* found no collision-free path within its iteration budget."""


@dataclass
class Path:
    waypoints: np.ndarray  # (m, 2) world meters

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)
        if len(self.waypoints) < 2:
            raise ValueError("a path needs at least two waypoints")
        if np.any(np.all(np.diff(self.waypoints, axis=0) == 0, axis=1)):
            raise ValueError("consecutive waypoints must be distinct")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())

    def to_json(self) -> str:
        return json.dumps(self.waypoints.tolist())

    @classmethod
    def from_json(cls, text: str) -> "Path":
        return cls(np.array(json.loads(text), dtype=np.float64))


@dataclass
class PlannerParams:
    step: float = 1.0
    goal_bias: float = 0.1
    max_iters: int = 2000
    rewire_radius: float = 3.0
    cost_weight: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")


class EdgeEvaluator:
    """Feasibility and cost of straight edges on a cost map."""

    def __init__(self, costmap: GlobalCostMap, cost_weight: float, obstacle: float = OBSTACLE_COST):
        self.map = costmap
        self.weight = cost_weight
        self.obstacle = obstacle
        self.spacing = costmap.resolution / 2.0

    def edges(self, a: np.ndarray, b: np.ndarray):
        """Costs of edges a[i] -> b[i] (inf when infeasible)."""
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        a, b = np.broadcast_arrays(a, b)
        length = np.linalg.norm(b - a, axis=1)
        # each edge sampled at spacing <= resolution / 2, endpoints included
        counts = np.maximum(2, np.ceil(length / self.spacing).astype(np.int64) + 1)
        edge_id = np.repeat(np.arange(len(a)), counts)
        first = np.cumsum(counts) - counts
        t = (np.arange(edge_id.size) - first[edge_id]) / (counts[edge_id] - 1)
        pts = a[edge_id] + t[:, None] * (b - a)[edge_id]
        c = self.map.cost_at(pts[:, 0], pts[:, 1])
        blocked = np.zeros(len(a), dtype=bool)
        blocked[edge_id[c > self.obstacle]] = True
        c = np.where(np.isfinite(c), c, 0.0)
        means = np.bincount(edge_id, weights=c, minlength=len(a)) / counts
        cost = length * (1.0 + self.weight * means)
        cost[blocked] = np.inf
        return cost

    def edge(self, a, b) -> float:
        return float(self.edges(np.asarray(a)[None], np.asarray(b)[None])[0])


def rrt_star_plan(costmap: GlobalCostMap, start, goal, params: PlannerParams | None = None) -> Path:
    """Lowest-cost RRT* path from ``start`` to ``goal``; raises NoPathError."""
    params = params or PlannerParams()
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    for name, p in (("start", start), ("goal", goal)):
        if not costmap.contains(p[0], p[1]):
            raise ValueError(f"{name} {tuple(p)} lies outside the map bounds {costmap.bounds}")
    ev = EdgeEvaluator(costmap, params.cost_weight)
    if costmap.cost_at(start[0], start[1]) > OBSTACLE_COST:
        raise NoPathError("start lies in an obstacle cell")
    xmin, xmax, ymin, ymax = costmap.bounds
    rng = np.random.default_rng(params.seed)

    cap = params.max_iters + 1
    nodes = np.empty((cap, 2))
    parent = np.full(cap, -1, dtype=np.int64)
    cost = np.empty(cap)
    children: list[list[int]] = [[] for _ in range(cap)]
    nodes[0], cost[0], n = start, 0.0, 1

    for _ in range(params.max_iters):
        if rng.random() < params.goal_bias:
            sample = goal
        else:
            sample = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        d = np.linalg.norm(nodes[:n] - sample, axis=1)
        nearest = int(np.argmin(d))
        if d[nearest] == 0.0:
            continue
        new = nodes[nearest] + (sample - nodes[nearest]) * min(1.0, params.step / d[nearest])
        if not costmap.contains(new[0], new[1]):
            continue
        dn = np.linalg.norm(nodes[:n] - new, axis=1)
        near = np.nonzero(dn <= params.rewire_radius)[0]
        if nearest not in near:
            near = np.append(near, nearest)
        near = near[dn[near] > 0]
        if len(near) == 0:
            continue
        edge_in = ev.edges(nodes[near], new[None])
        total = cost[near] + edge_in
        best = int(np.argmin(total))
        if not np.isfinite(total[best]):
            continue
        k = n
        nodes[k], parent[k], cost[k] = new, near[best], total[best]
        children[near[best]].append(k)
        n += 1
        # rewire through the new node
        edge_out = ev.edges(new[None], nodes[near])
        improved = cost[k] + edge_out < cost[near] - 1e-12
        for j, c_new in zip(near[improved], (cost[k] + edge_out)[improved]):
            children[parent[j]].remove(j)
            parent[j] = k
            children[k].append(j)
            delta = cost[j] - c_new
            stack = [j]
            while stack:
                q = stack.pop()
                cost[q] -= delta
                stack.extend(children[q])

    d_goal = np.linalg.norm(nodes[:n] - goal, axis=1)
    cand = np.nonzero(d_goal <= params.step)[0]
    if len(cand) == 0:
        raise NoPathError(f"no path found within {params.max_iters} iterations")
    final = np.where(d_goal[cand] > 0, ev.edges(nodes[cand], goal[None]), 0.0)
    total = cost[cand] + final
    best = int(np.argmin(total))
    if not np.isfinite(total[best]):
        raise NoPathError(f"no path found within {params.max_iters} iterations")
    k = int(cand[best])
    chain = []
    while k >= 0:
        chain.append(nodes[k])
        k = int(parent[k])
    pts = np.array(chain[::-1])
    if np.linalg.norm(pts[-1] - goal) > 0:
        pts = np.vstack([pts, goal])
    return Path(pts)


def path_cost(costmap: GlobalCostMap, path: Path, cost_weight: float = 5.0) -> float:
    ev = EdgeEvaluator(costmap, cost_weight)
    return float(ev.edges(path.waypoints[:-1], path.waypoints[1:]).sum())


def resample(points: np.ndarray, spacing: float) -> np.ndarray:
    """Points along a polyline every ``spacing`` meters, endpoints included."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 1:
        return pts
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return pts[:1]
    q = np.append(np.arange(0.0, s[-1], spacing), s[-1])
    return np.stack([np.interp(q, s, pts[:, 0]), np.interp(q, s, pts[:, 1])], axis=-1)


# ------------------------------------------------------------------ rollout


@dataclass
class RolloutParams:
    speed: float = 1.0  # m/s
    lookahead: float = 1.0  # m
    dt: float = 0.1  # s
    max_curvature: float = 2.0  # 1/m
    heading_noise: float = 0.0  # rad per step, std
    goal_tolerance: float = 0.3  # m
    time_factor: float = 2.0  # budget = factor * length / speed + 10 s
    seed: int = 0


@dataclass
class Rollout:
    trace: np.ndarray  # (t, 3) x, y, heading
    success: bool
    reason: str = ""


def _project_on_path(p, pts, seg_start_s, seg_len):
    a, b = pts[:-1], pts[1:]
    d = b - a
    L2 = np.maximum((d * d).sum(1), 1e-300)
    t = np.clip(((p - a) * d).sum(1) / L2, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist = np.linalg.norm(proj - p, axis=1)
    i = int(np.argmin(dist))
    return seg_start_s[i] + t[i] * seg_len[i], dist[i]


def rollout(path: Path, costmap: GlobalCostMap, params: RolloutParams | None = None) -> Rollout:
    """Unicycle tracking the path with pure pursuit; fails on cost > 0.8 or leaving the map."""
    params = params or RolloutParams()
    rng = np.random.default_rng(params.seed)
    pts = path.waypoints
    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    seg_s = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = seg_s[-1]
    d0 = pts[1] - pts[0]
    x, y, th = pts[0, 0], pts[0, 1], float(np.arctan2(d0[1], d0[0]))
    trace = [(x, y, th)]
    budget = params.time_factor * total / params.speed + 10.0
    steps = int(np.ceil(budget / params.dt))
    goal = pts[-1]
    progress = 0.0

    def check(px, py):
        if not costmap.contains(px, py):
            return "left map"
        if costmap.cost_at(px, py) > OBSTACLE_COST:
            return "entered obstacle"
        return ""

    reason = check(x, y)
    if reason:
        return Rollout(np.array(trace), False, reason)
    for _ in range(steps):
        if np.hypot(goal[0] - x, goal[1] - y) <= params.goal_tolerance:
            return Rollout(np.array(trace), True, "reached goal")
        s_here, _ = _project_on_path(np.array([x, y]), pts, seg_s[:-1], seg_len)
        progress = max(progress, s_here)
        s_look = min(progress + params.lookahead, total)
        target = np.array([np.interp(s_look, seg_s, pts[:, 0]), np.interp(s_look, seg_s, pts[:, 1])])
        dx, dy = target[0] - x, target[1] - y
        alpha = np.arctan2(dy, dx) - th
        dist = max(np.hypot(dx, dy), 1e-9)
        kappa = np.clip(2.0 * np.sin(alpha) / dist, -params.max_curvature, params.max_curvature)
        th = th + params.speed * kappa * params.dt
        if params.heading_noise:
            th += rng.normal(0.0, params.heading_noise)
        x += params.speed * np.cos(th) * params.dt
        y += params.speed * np.sin(th) * params.dt
        trace.append((x, y, th))
        reason = check(x, y)
        if reason:
            return Rollout(np.array(trace), False, reason)
    ok = np.hypot(goal[0] - x, goal[1] - y) <= params.goal_tolerance
    return Rollout(np.array(trace), bool(ok), "reached goal" if ok else "time budget exhausted")


def point_polyline_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    a, b = poly[:-1], poly[1:]
    d = b - a
    L2 = (d * d).sum(1)
    L2 = np.where(L2 > 0, L2, 1.0)
    t = np.clip(((p[:, None, :] - a[None]) * d[None]).sum(-1) / L2[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * d[None]
    return np.linalg.norm(p[:, None, :] - proj, axis=-1).min(axis=1)


def cross_track_error(trace: np.ndarray, path: Path) -> float:
    """Mean distance from trace positions to the path polyline."""
    trace = np.asarray(trace, dtype=np.float64)
    if len(trace) == 0:
        raise ValueError("empty trace")
    return float(point_polyline_distance(trace[:, :2], path.waypoints).mean())


def hausdorff(a: Path, b: Path, spacing: float = 0.2) -> float:
    """Symmetric Hausdorff distance between polylines resampled at ``spacing``."""
    pa = resample(a.waypoints, spacing)
    pb = resample(b.waypoints, spacing)
    return float(max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0]))


def success_rate(path: Path, costmap: GlobalCostMap, trials: int = 30, params: RolloutParams | None = None) -> float:
    """Fraction of successful rollouts with seeds ``params.seed + i``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = params or RolloutParams()
    wins = 0
    for i in range(trials):
        p = RolloutParams(**{**params.__dict__, "seed": params.seed + i})
        wins += rollout(path, costmap, p).success
    return wins / trials


# ------------------------------------------------------------------ metrics


@dataclass
class FreespaceMetrics:
    accuracy: float
    precision: float
    recall: float
    f_score: float
    iou: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    undefined: tuple = field(default_factory=tuple)  # metrics whose denominator was zero

    def as_dict(self):
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f_score": self.f_score, "iou": self.iou}


def freespace_metrics(pred, gt) -> FreespaceMetrics:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth shape {gt.shape}")
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt).sum())
    fn = int((~pred & gt).sum())
    tn = int((~pred & ~gt).sum())
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    accuracy = ratio(tp + tn, tp + fp + fn + tn, "accuracy")
    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f_score = ratio(2 * precision * recall, precision + recall, "f_score")
    iou = ratio(tp, tp + fp + fn, "iou")
    return FreespaceMetrics(accuracy, precision, recall, f_score, iou, tp, fp, fn, tn, tuple(undefined))


# ------------------------------------------------------------------ plotting


def render_svg(costmap: GlobalCostMap, paths=(), traces=(), start=None, goal=None, px: int = 4) -> str:
    """SVG overlay of the cost map (gray, dark = costly) with paths and rollout traces."""
    h, w = costmap.shape
    ox, oy = costmap.origin
    res = costmap.resolution

    def to_px(x, y):
        # world y up, image rows down
        return (x - ox) / res * px, (h - (y - oy) / res) * px

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * px}" height="{h * px}" '
        f'viewBox="0 0 {w * px} {h * px}">'
    ]
    for r in range(h):
        for c in range(w):
            g = int(round(255 * (1.0 - float(np.clip(costmap.cost[r, c], 0.0, 1.0)))))
            if costmap.hits[r, c] == 0:
                fill = "#c8c8e6"
            else:
                fill = f"#{g:02x}{g:02x}{g:02x}"
            out.append(f'<rect x="{c * px}" y="{(h - 1 - r) * px}" width="{px}" height="{px}" fill="{fill}"/>')
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"]
    for i, path in enumerate(paths):
        pts = " ".join("%.2f,%.2f" % to_px(x, y) for x, y in path.waypoints)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colors[i % len(colors)]}" stroke-width="2"/>')
    for tr in traces:
        pts = " ".join("%.2f,%.2f" % to_px(x, y) for x, y in np.asarray(tr)[:, :2])
        out.append(f'<polyline points="{pts}" fill="none" stroke="#ff7f0e" stroke-width="1" stroke-dasharray="3,2"/>')
    for p, col in ((start, "#2ca02c"), (goal, "#d62728")):
        if p is not None:
            cx, cy = to_px(*p)
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{px * 1.5}" fill="{col}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
