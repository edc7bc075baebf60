"""Footprint supervision: random-walk propagation, classifier head and losses."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffcore import ShapeError, Tensor, conv2d, softmax
from .gfn import Conv, GfnConfig, GuideFilterNetwork, surface_normal_loss

AFFINITY_CAP = 4096
PROB_CLAMP = 1e-7
POSITIVE_WEIGHT = 1.0
NEGATIVE_WEIGHT = 0.1


@dataclass
class FsmConfig:
    grid: tuple = (32, 32)  # downsampled affinity resolution
    affinity_cap: int = AFFINITY_CAP
    alpha_init: float = 0.5
    rw_at_inference: bool = True
    normalize_features: bool = True
    ss_after_rw: bool = True
    freeze_alpha: bool = False

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        if self.grid[0] * self.grid[1] > self.affinity_cap:
            raise ValueError(f"affinity grid {self.grid} exceeds the cap of {self.affinity_cap} positions")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossWeights:
    ce: float = 1.0
    ss: float = 0.1
    sn: float = 1.0


def affinity_matrix(features: Tensor, cap: int = AFFINITY_CAP) -> Tensor:
    """Row-stochastic affinity softmax(F^T F) for features (c, n) or (b, c, n)."""
    n = features.shape[-1]
    if n > cap:
        raise ValueError(f"affinity over {n} positions exceeds the cap of {cap}")
    gram = features.transpose(-1, -2) @ features
    return softmax(gram, axis=-1)


def random_walk(features: Tensor, affinity: Tensor, alpha) -> Tensor:
    """One propagation step alpha * A @ F + F for features (n, c)."""
    n = features.shape[-2]
    if affinity.shape[-2:] != (n, n):
        raise ShapeError(f"random_walk: affinity shape {tuple(affinity.shape)} vs features {tuple(features.shape)}")
    return alpha * (affinity @ features) + features


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "identity"  # identity | horizontal_flip | translate
    dx: int = 0
    dy: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "horizontal_flip", "translate"):
            raise ValueError(f"unknown transform kind {self.kind!r}")

    def check_bounds(self, h: int, w: int):
        if abs(self.dx) > 0.1 * w or abs(self.dy) > 0.1 * h:
            raise ValueError(f"translation ({self.dx}, {self.dy}) exceeds 10% of the {h}x{w} image")

    def scaled(self, sy: float, sx: float) -> "TransformSpec":
        if self.kind != "translate":
            return self
        return TransformSpec("translate", int(round(self.dx * sx)), int(round(self.dy * sy)))


def transform_apply(x: Tensor, tr: TransformSpec) -> tuple[Tensor, Tensor]:
    """Apply ``tr`` to the trailing (h, w) axes; returns (x', valid) with valid (..., 1, h, w)."""
    h, w = x.shape[-2:]
    valid = torch.ones(*x.shape[:-3], 1, h, w, dtype=torch.bool)
    if tr.kind == "identity":
        return x, valid
    if tr.kind == "horizontal_flip":
        return torch.flip(x, dims=(-1,)), valid
    dx, dy = tr.dx, tr.dy
    out = torch.zeros_like(x)
    valid = torch.zeros_like(valid)
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_y, dst_x] = x[..., src_y, src_x]
    valid[..., dst_y, dst_x] = True
    return out, valid


def weighted_bce_map(p: Tensor, y: Tensor) -> Tensor:
    """Per-pixel loss: -[1 * y log p + 0.1 * (1 - y) log(1 - p)]."""
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = y.to(p.dtype)
    return -(POSITIVE_WEIGHT * y * torch.log(p) + NEGATIVE_WEIGHT * (1 - y) * torch.log(1 - p))


def weighted_bce(p: Tensor, y: Tensor, valid: Tensor | None = None) -> Tensor:
    if p.shape != y.shape:
        raise ShapeError(f"weighted_bce: shapes {tuple(p.shape)} and {tuple(y.shape)} differ")
    per_pixel = weighted_bce_map(p, y)
    if valid is None:
        return per_pixel.mean()
    v = valid.to(p.dtype)
    count = v.sum()
    if count == 0:
        warnings.warn("weighted_bce: no valid pixels, loss defined as 0", RuntimeWarning)
        return p.sum() * 0.0
    return (per_pixel * v).sum() / count


class FootprintSupervision(nn.Module):
    """Pool -> affinity -> random walk -> upsample -> 1-channel head -> sigmoid."""

    def __init__(self, channels: int, config: FsmConfig | None = None):
        super().__init__()
        self.config = config or FsmConfig()
        self.alpha = nn.Parameter(torch.tensor(float(self.config.alpha_init)), requires_grad=not self.config.freeze_alpha)
        self.head = Conv(channels, 1, 3)

    def propagate(self, fx: Tensor, use_rw: bool = True) -> Tensor:
        """Random-walk step on the pooled features; returns (b, c, h_d, w_d)."""
        pooled = F.adaptive_avg_pool2d(fx, self.config.grid)
        if not use_rw:
            return pooled
        b, c, hd, wd = pooled.shape
        flat = pooled.reshape(b, c, hd * wd)
        keys = F.normalize(flat, dim=1, eps=1e-12) if self.config.normalize_features else flat
        A = affinity_matrix(keys, self.config.affinity_cap)
        out = random_walk(flat.transpose(1, 2), A, self.alpha)
        return out.transpose(1, 2).reshape(b, c, hd, wd)

    def classify(self, propagated: Tensor, size) -> Tensor:
        up = F.interpolate(propagated, size=size, mode="bilinear", align_corners=False)
        return torch.sigmoid(conv2d(up, self.head.params))

    def forward(self, fx: Tensor) -> tuple[Tensor, Tensor]:
        use_rw = self.training or self.config.rw_at_inference
        prop = self.propagate(fx, use_rw)
        return self.classify(prop, fx.shape[-2:]), prop


class TraversabilityNet(nn.Module):
    """Guide filter network followed by footprint supervision."""

    def __init__(self, gfn_config: GfnConfig | None = None, fsm_config: FsmConfig | None = None):
        super().__init__()
        self.gfn = GuideFilterNetwork(gfn_config or GfnConfig())
        self.fsm = FootprintSupervision(self.gfn.config.fusion_channels, fsm_config)

    def forward(self, x: Tensor) -> dict:
        normals, _, fx = self.gfn(x)
        p_trav, propagated = self.fsm(fx)
        return {"normals": normals, "features": fx, "propagated": propagated, "p_trav": p_trav}

    def consistency_features(self, x: Tensor) -> Tensor:
        out = self(x)
        if self.fsm.config.ss_after_rw:
            return out["propagated"]
        return F.adaptive_avg_pool2d(out["features"], self.fsm.config.grid)


def fsm_forward(fx: Tensor, module: FootprintSupervision) -> Tensor:
    """Traversability map (1, h, w) for a single feature map (c, h, w)."""
    if fx.dim() == 3:
        return module(fx[None])[0][0]
    return module(fx)[0]


def self_supervised_loss(model: TraversabilityNet, x: Tensor, tr: TransformSpec, f_x: Tensor | None = None) -> Tensor:
    """Mean squared difference of Tr(F(x)) and F(Tr(x)) over jointly valid cells.

    x is the (b, 4, h, w) network input. F is the propagated feature map on
    the affinity grid; translations are rescaled to that grid. ``f_x`` may
    carry an already computed F(x).
    """
    h, w = x.shape[-2:]
    tr.check_bounds(h, w)
    if tr.kind == "identity":
        return x.new_zeros(())
    if f_x is None:
        f_x = model.consistency_features(x)
    x_t, _ = transform_apply(x, tr)
    f_tx = model.consistency_features(x_t)
    hd, wd = f_x.shape[-2:]
    tr_d = tr.scaled(hd / h, wd / w)
    tf_x, valid = transform_apply(f_x, tr_d)
    v = valid.to(f_x.dtype)
    count = v.sum()
    if count == 0:
        warnings.warn("self_supervised_loss: empty valid region, loss defined as 0", RuntimeWarning)
        return f_x.sum() * 0.0
    sq = ((tf_x - f_tx) ** 2).sum(dim=1, keepdim=True)
    return (sq * v).sum() / count


def total_loss(model: TraversabilityNet, x: Tensor, footprint: Tensor, footprint_valid: Tensor, gt_normals: Tensor, normals_valid: Tensor, tr: TransformSpec, weights: LossWeights | None = None):
    """Weighted sum of footprint BCE, consistency loss and normal loss.

    Returns (total, components) where components holds the unweighted terms.
    """
    weights = weights or LossWeights()
    out = model(x)
    ce = weighted_bce(out["p_trav"], footprint, footprint_valid)
    sn = surface_normal_loss(out["normals"], gt_normals, normals_valid)
    if weights.ss != 0:
        f_x = out["propagated"] if model.fsm.config.ss_after_rw else None
        ss = self_supervised_loss(model, x, tr, f_x=f_x)
    else:
        ss = x.new_zeros(())
    total = weights.ce * ce + weights.ss * ss + weights.sn * sn
    return total, {"ce": ce, "ss": ss, "sn": sn}
