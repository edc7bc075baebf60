"""Global ground-plane cost map accumulated from per-frame traversability."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RgbdFrame, unproject

UNKNOWN_COST = 0.5
DEFAULT_RESOLUTION = 0.2
MAX_RANGE = 20.0
FREESPACE_THRESHOLD = 0.5
MAGIC = b"FTFOOT-COSTMAP\n"


@dataclass
class GlobalCostMap:
    """Cost grid indexed ``[row, col]`` = ``[y, x]``; cell (0, 0) starts at ``origin``."""

    resolution: float = DEFAULT_RESOLUTION
    origin: tuple = (0.0, 0.0)
    cost: np.ndarray = field(default_factory=lambda: np.full((1, 1), UNKNOWN_COST))
    hits: np.ndarray = field(default_factory=lambda: np.zeros((1, 1), dtype=np.uint32))
    fusion: str = "mean"  # or "max"

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=np.float64)
        self.hits = np.asarray(self.hits, dtype=np.uint32)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        if self.cost.shape != self.hits.shape:
            raise ValueError(f"cost shape {self.cost.shape} differs from hits shape {self.hits.shape}")
        if self.fusion not in ("mean", "max"):
            raise ValueError(f"fusion must be 'mean' or 'max', got {self.fusion!r}")
        self.cost[self.hits == 0] = UNKNOWN_COST
        self._sum = self.cost * self.hits

    @classmethod
    def empty(cls, width_m: float, height_m: float, origin=(0.0, 0.0), resolution: float = DEFAULT_RESOLUTION, fusion="mean"):
        shape = (max(1, int(np.ceil(height_m / resolution))), max(1, int(np.ceil(width_m / resolution))))
        return cls(resolution, origin, np.full(shape, UNKNOWN_COST), np.zeros(shape, dtype=np.uint32), fusion)

    @classmethod
    def from_cost(cls, cost, resolution: float = DEFAULT_RESOLUTION, origin=(0.0, 0.0)):
        """A fully observed map (one hit per cell) with the given costs."""
        cost = np.asarray(cost, dtype=np.float64)
        return cls(resolution, origin, cost.copy(), np.ones(cost.shape, dtype=np.uint32))

    @property
    def shape(self):
        return self.cost.shape

    @property
    def bounds(self):
        """(xmin, xmax, ymin, ymax) in world meters."""
        ox, oy = self.origin
        return ox, ox + self.shape[1] * self.resolution, oy, oy + self.shape[0] * self.resolution

    def cell_of(self, x, y):
        col = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(np.int64)
        row = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(np.int64)
        return row, col

    def contains(self, x, y):
        row, col = self.cell_of(x, y)
        return (row >= 0) & (row < self.shape[0]) & (col >= 0) & (col < self.shape[1])

    def cost_at(self, x, y, outside: float = np.inf):
        row, col = self.cell_of(x, y)
        inside = (row >= 0) & (row < self.shape[0]) & (col >= 0) & (col < self.shape[1])
        out = np.full(np.shape(row), outside, dtype=np.float64)
        out[inside] = self.cost[row[inside], col[inside]]
        return out

    def cell_center(self, row, col):
        return (self.origin[0] + (np.asarray(col) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(row) + 0.5) * self.resolution)

    def _grow(self, rows: np.ndarray, cols: np.ndarray):
        """Double the grid toward any out-of-range cells; stored cells keep their world position."""
        while True:
            h, w = self.shape
            pad = [[0, 0], [0, 0]]
            if rows.min(initial=0) < 0:
                pad[0][0] = h
            elif rows.max(initial=0) >= h:
                pad[0][1] = h
            if cols.min(initial=0) < 0:
                pad[1][0] = w
            elif cols.max(initial=0) >= w:
                pad[1][1] = w
            if pad == [[0, 0], [0, 0]]:
                return rows, cols
            self.cost = np.pad(self.cost, pad, constant_values=UNKNOWN_COST)
            self.hits = np.pad(self.hits, pad, constant_values=0)
            self._sum = np.pad(self._sum, pad, constant_values=0.0)
            self.origin = (self.origin[0] - pad[1][0] * self.resolution, self.origin[1] - pad[0][0] * self.resolution)
            rows = rows + pad[0][0]
            cols = cols + pad[1][0]

    def deposit(self, x, y, sample_cost):
        """Add cost samples at world (x, y)."""
        x, y, c = (np.asarray(a, dtype=np.float64).ravel() for a in (x, y, sample_cost))
        if x.size == 0:
            return self
        rows, cols = self.cell_of(x, y)
        rows, cols = self._grow(rows, cols)
        np.add.at(self.hits, (rows, cols), 1)
        if self.fusion == "max":
            seen = self.hits > 0
            running = np.where(seen, self.cost, -np.inf)
            np.maximum.at(running, (rows, cols), c)
            self.cost = np.where(seen, running, UNKNOWN_COST)
            self._sum = self.cost * self.hits
        else:
            np.add.at(self._sum, (rows, cols), c)
            seen = self.hits > 0
            self.cost = np.where(seen, self._sum / np.maximum(self.hits, 1), UNKNOWN_COST)
        return self

    # ------------------------------------------------------------------ io

    def save(self, path):
        header = {
            "resolution": self.resolution,
            "origin": list(self.origin),
            "rows": int(self.shape[0]),
            "cols": int(self.shape[1]),
            "fusion": self.fusion,
            "cost_dtype": "<f4",
            "hits_dtype": "<u4",
        }
        head = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(len(head).to_bytes(4, "little"))
            f.write(head)
            f.write(np.ascontiguousarray(self.cost, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(self.hits, dtype="<u4").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if not raw.startswith(MAGIC):
            raise ValueError(f"{path}: not a cost map file")
        pos = len(MAGIC)
        n = int.from_bytes(raw[pos : pos + 4], "little")
        pos += 4
        header = json.loads(raw[pos : pos + n])
        pos += n
        rows, cols = header["rows"], header["cols"]
        size = rows * cols * 4
        if len(raw) != pos + 2 * size:
            raise ValueError(f"{path}: expected {pos + 2 * size} bytes, found {len(raw)}")
        cost = np.frombuffer(raw[pos : pos + size], dtype="<f4").reshape(rows, cols).astype(np.float64)
        hits = np.frombuffer(raw[pos + size :], dtype="<u4").reshape(rows, cols).copy()
        return cls(header["resolution"], tuple(header["origin"]), cost, hits, header.get("fusion", "mean"))


def frame_world_points(frame: RgbdFrame, max_range: float = MAX_RANGE):
    """World points (m, 3) and flat pixel indices of valid pixels within range."""
    pts = unproject(frame.depth, frame.intrinsics).reshape(3, -1).T
    d = frame.depth.reshape(-1)
    keep = (d > 0) & (d <= max_range)
    idx = np.nonzero(keep)[0]
    return frame.pose.apply(pts[idx]), idx


def integrate_frame(costmap: GlobalCostMap, p_trav: np.ndarray, frame: RgbdFrame, max_range: float = MAX_RANGE) -> GlobalCostMap:
    """Deposit cost 1 - p_trav of every valid pixel into the cell under it."""
    p = np.asarray(p_trav, dtype=np.float64).reshape(-1)
    if p.size != frame.shape[0] * frame.shape[1]:
        raise ValueError(f"traversability map of {p.size} pixels does not match frame {frame.shape}")
    world, idx = frame_world_points(frame, max_range)
    return costmap.deposit(world[:, 0], world[:, 1], 1.0 - p[idx])


def freespace_mask(cost) -> np.ndarray:
    """1 where cost < 0.5 (strict), else 0; unknown cells (0.5) are not freespace."""
    return (np.asarray(cost) < FREESPACE_THRESHOLD).astype(np.uint8)
