"""Guide filter network: RGB-D extraction network and guide-filter fusion."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffcore import (
    ConvParams,
    ShapeError,
    Tensor,
    conv2d,
    deconv2d,
    pointwise_dynamic_conv,
    softmax,
    spatially_variant_conv,
)
from .geometry import RgbdFrame, SurfaceNormalImage


@dataclass
class GfnConfig:
    num_stages: int = 4
    channels: tuple = (32, 64, 128, 256)
    strides: tuple = (1, 2, 2, 2)
    kernel_size: int = 3  # guide filter K' size
    fusion_channels: int = 16
    filter_logit_gap: float = 4.0  # center-tap logit advantage of K' at init

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.channels) != self.num_stages or len(self.strides) != self.num_stages:
            raise ValueError("channels and strides must have num_stages entries")
        if any(c <= 0 for c in self.channels) or self.fusion_channels <= 0:
            raise ValueError("channel counts must be positive")
        if self.strides[0] != 1 or any(s not in (1, 2) for s in self.strides):
            raise ValueError(f"strides must be 1 or 2 with a unit first stage, got {self.strides}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"guide filter kernel size must be odd, got {self.kernel_size}")

    @property
    def downsample(self) -> int:
        return int(np.prod(self.strides))

    def to_dict(self):
        return asdict(self)


def frame_to_input(frame: RgbdFrame) -> Tensor:
    """4-channel network input: rgb plus inverse depth clipped to [0, 1]."""
    d = frame.depth
    inv = np.zeros_like(d)
    np.divide(1.0, d, out=inv, where=d > 0)
    return torch.from_numpy(np.concatenate([frame.rgb, np.clip(inv, 0.0, 1.0)]))


def _conv_weight(c_out, c_in, k):
    bound = 1.0 / math.sqrt(c_in * k * k)
    w = torch.empty(c_out, c_in, k, k).uniform_(-bound, bound)
    b = torch.empty(c_out).uniform_(-bound, bound)
    return nn.Parameter(w), nn.Parameter(b)


class Conv(nn.Module):
    """Convolution whose weights are plain parameters fed to ``diffcore``."""

    def __init__(self, c_in, c_out, k=3, stride=1, padding=None, transposed=False):
        super().__init__()
        self.stride = stride
        self.transposed = transposed
        if transposed:
            # conv_transpose layout: (in, out, k, k) as the adjoint of a (in <- out) conv
            self.weight, _ = _conv_weight(c_in, c_out, k)
            self.bias = nn.Parameter(torch.empty(c_out).uniform_(-1 / math.sqrt(c_in * k * k), 1 / math.sqrt(c_in * k * k)))
            self.padding = (k - stride) // 2 if padding is None else padding
        else:
            self.weight, self.bias = _conv_weight(c_out, c_in, k)
            self.padding = k // 2 if padding is None else padding

    @property
    def params(self) -> ConvParams:
        return ConvParams(self.weight, self.bias, self.stride, self.padding)

    def forward(self, x):
        return deconv2d(x, self.params) if self.transposed else conv2d(x, self.params)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions plus an identity (or 1x1 projected) shortcut."""

    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.conv1 = Conv(c_in, c_out, 3, stride)
        self.conv2 = Conv(c_out, c_out, 3)
        self.shortcut = Conv(c_in, c_out, 1, stride) if (c_in != c_out or stride != 1) else None

    def forward(self, x):
        y = self.conv2(F.relu(self.conv1(x)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(y + skip)


class DeconvBlock(nn.Module):
    def __init__(self, c_in, c_out, stride):
        super().__init__()
        k = 4 if stride == 2 else 3
        self.up = Conv(c_in, c_out, k, stride, transposed=True)
        self.conv = Conv(c_out, c_out, 3)

    def forward(self, x):
        return F.relu(self.conv(F.relu(self.up(x))))


def surface_normal_loss(p_sn: Tensor, gt: Tensor, valid: Tensor) -> Tensor:
    """Mean squared normal difference over valid pixels.

    p_sn, gt: (3, h, w) or batched; valid: (1, h, w) or batched.
    """
    if p_sn.shape != gt.shape:
        raise ShapeError(f"surface_normal_loss: shapes {tuple(p_sn.shape)} and {tuple(gt.shape)} differ")
    valid = valid.to(p_sn.dtype)
    count = valid.sum()
    if count == 0:
        warnings.warn("surface_normal_loss: no valid pixels, loss defined as 0", RuntimeWarning)
        return p_sn.sum() * 0.0
    sq = ((p_sn - gt) ** 2).sum(dim=-3, keepdim=True)
    return (sq * valid).sum() / count


class ExtractionNet(nn.Module):
    """Residual encoder and deconvolution decoder predicting surface normals."""

    def __init__(self, config: GfnConfig, in_channels: int = 4):
        super().__init__()
        self.config = config
        ch, st = config.channels, config.strides
        n = config.num_stages
        self.encoder = nn.ModuleList()
        c_prev = in_channels
        for c, s in zip(ch, st):
            self.encoder.append(ResidualBlock(c_prev, c, s))
            c_prev = c
        self.decoder = nn.ModuleList([DeconvBlock(ch[-1], ch[-1], 1)])
        c_prev = ch[-1]
        for i in range(2, n + 1):
            skip = ch[n - i + 1]
            out = ch[n - i]
            self.decoder.append(DeconvBlock(skip + c_prev, out, st[n - i + 1]))
            c_prev = out
        self.head = Conv(c_prev, 3, 3)

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Return unit normals (n, 3, h, w) and decoder features, coarse to fine."""
        factor = self.config.downsample
        if x.shape[-1] % factor or x.shape[-2] % factor:
            raise ShapeError(
                f"input extents {tuple(x.shape[-2:])} must be divisible by {factor}"
            )
        enc = []
        h = x
        for block in self.encoder:
            h = block(h)
            enc.append(h)
        n = self.config.num_stages
        d = self.decoder[0](enc[-1])
        feats = [d]
        for i in range(2, n + 1):
            d = self.decoder[i - 1](torch.cat([enc[n - i + 1], d], dim=-3))
            feats.append(d)
        normals = F.normalize(self.head(d), dim=-3, eps=1e-12)
        return normals, feats


def confidence_gate(x_g: Tensor, x_c: Tensor, params: ConvParams):
    """Gate the guidance and convolve images by a 2-way per-pixel softmax.

    Returns (x_g', x_c', conf) with conf of shape (2, h, w) (or batched).
    """
    if x_g.shape != x_c.shape:
        raise ShapeError(f"confidence_gate: shapes {tuple(x_g.shape)} and {tuple(x_c.shape)} differ")
    logits = conv2d(torch.cat([x_g, x_c], dim=-3), params)
    conf = softmax(logits, axis=-3)
    return x_g * conf.narrow(-3, 0, 1), x_c * conf.narrow(-3, 1, 1), conf


def generate_filters(x_g: Tensor, x_c: Tensor, spatial: ConvParams, pointwise: ConvParams, k: int, c_out: int):
    """Per-pixel filters (K', K'') from the gated inputs.

    K' has shape (h, w, k, k) and sums to one over its taps; K'' has shape
    (h, w, c_out, c). Batched inputs give a leading batch dimension.
    """
    if x_g.shape != x_c.shape:
        raise ShapeError(f"generate_filters: shapes {tuple(x_g.shape)} and {tuple(x_c.shape)} differ")
    z = torch.cat([x_g, x_c], dim=-3)
    c = x_c.shape[-3]
    s_logits = conv2d(z, spatial)
    p_raw = conv2d(z, pointwise)
    if s_logits.shape[-3] != k * k or p_raw.shape[-3] != c_out * c:
        raise ShapeError(
            f"generate_filters: heads emit {s_logits.shape[-3]} and {p_raw.shape[-3]} channels, "
            f"expected {k * k} and {c_out * c}"
        )
    taps = softmax(s_logits, axis=-3)
    lead = taps.shape[:-3]
    h, w = taps.shape[-2:]
    k_spatial = taps.movedim(-3, -1).reshape(*lead, h, w, k, k)
    k_point = p_raw.movedim(-3, -1).reshape(*lead, h, w, c_out, c)
    return k_spatial, k_point


def guide_filter_layer(x_g: Tensor, x_c: Tensor, gate: ConvParams, spatial: ConvParams, pointwise: ConvParams, k: int, c_out: int) -> Tensor:
    """Gate, generate per-pixel filters, then filter the original ``x_c``."""
    xg_w, xc_w, _ = confidence_gate(x_g, x_c, gate)
    k_spatial, k_point = generate_filters(xg_w, xc_w, spatial, pointwise, k, c_out)
    return pointwise_dynamic_conv(spatially_variant_conv(x_c, k_spatial), k_point)


class GuideFilterLayer(nn.Module):
    def __init__(self, channels: int, out_channels: int | None = None, k: int = 3, logit_gap: float = 4.0):
        super().__init__()
        self.c = channels
        self.c_out = out_channels or channels
        self.k = k
        self.gate = Conv(2 * channels, 2, 3)
        self.spatial = Conv(2 * channels, k * k, 3)
        self.pointwise = Conv(2 * channels, self.c_out * channels, 3)
        self.init_identity(logit_gap)

    @torch.no_grad()
    def init_identity(self, logit_gap: float = 4.0):
        """Zero the filter heads; bias K' toward the center tap and K'' to identity.

        A very large ``logit_gap`` (e.g. 1e3) makes the layer an exact
        identity on ``x_c`` when ``c_out == c``.
        """
        self.spatial.weight.zero_()
        self.pointwise.weight.zero_()
        bias = torch.full((self.k * self.k,), -float(logit_gap), dtype=self.spatial.bias.dtype)
        bias[(self.k * self.k) // 2] = 0.0
        self.spatial.bias.copy_(bias)
        eye = torch.eye(self.c_out, self.c, dtype=self.pointwise.bias.dtype)
        self.pointwise.bias.copy_(eye.reshape(-1))

    def filters(self, x_g, x_c):
        xg_w, xc_w, conf = confidence_gate(x_g, x_c, self.gate.params)
        k_spatial, k_point = generate_filters(xg_w, xc_w, self.spatial.params, self.pointwise.params, self.k, self.c_out)
        return k_spatial, k_point, conf

    def forward(self, x_g, x_c):
        return guide_filter_layer(
            x_g, x_c, self.gate.params, self.spatial.params, self.pointwise.params, self.k, self.c_out
        )


class FusionNet(nn.Module):
    """Residual blocks over the normal image, each feeding a guide filter layer.

    Stage s works at the resolution of decoder feature s. Its guidance is a
    residual block over the normal image pooled to that resolution,
    concatenated with the upsampled previous fusion output; its convolve
    image is the decoder feature projected to ``fusion_channels`` by a 1x1
    convolution.
    """

    def __init__(self, config: GfnConfig):
        super().__init__()
        self.config = config
        fc = config.fusion_channels
        dec_channels = list(reversed(config.channels))
        self.guidance = nn.ModuleList(
            [ResidualBlock(3 if s == 0 else 3 + fc, fc) for s in range(config.num_stages)]
        )
        self.project = nn.ModuleList([Conv(c, fc, 1) for c in dec_channels])
        self.layers = nn.ModuleList(
            [GuideFilterLayer(fc, fc, config.kernel_size, config.filter_logit_gap) for _ in range(config.num_stages)]
        )

    def forward(self, p_sn: Tensor, visual_feats: list[Tensor]) -> Tensor:
        if len(visual_feats) != self.config.num_stages:
            raise ShapeError(f"expected {self.config.num_stages} visual features, got {len(visual_feats)}")
        y = None
        for s, feat in enumerate(visual_feats):
            size = feat.shape[-2:]
            if p_sn.shape[-2] % size[0] or p_sn.shape[-1] % size[1]:
                raise ShapeError(
                    f"fusion stage {s}: feature extents {tuple(size)} do not divide normal image "
                    f"extents {tuple(p_sn.shape[-2:])}"
                )
            sn = F.adaptive_avg_pool2d(p_sn, size) if p_sn.shape[-2:] != size else p_sn
            if y is not None:
                up = y if y.shape[-2:] == size else F.interpolate(y, size=size, mode="bilinear", align_corners=False)
                sn = torch.cat([sn, up], dim=-3)
            guide = self.guidance[s](sn)
            y = self.layers[s](guide, self.project[s](feat))
        return y


class GuideFilterNetwork(nn.Module):
    def __init__(self, config: GfnConfig | None = None):
        super().__init__()
        self.config = config or GfnConfig()
        self.extraction = ExtractionNet(self.config)
        self.fusion = FusionNet(self.config)

    def forward(self, x: Tensor):
        """x: (n, 4, h, w) -> (normals, decoder features, fused features F(x))."""
        normals, feats = self.extraction(x)
        return normals, feats, self.fusion(normals, feats)


def extraction_forward(net: ExtractionNet, frame: RgbdFrame) -> tuple[SurfaceNormalImage, list[Tensor]]:
    """Single-frame convenience wrapper around ``ExtractionNet``."""
    dtype = next(net.parameters()).dtype
    x = frame_to_input(frame).to(dtype)[None]
    normals, feats = net(x)
    n = normals[0].detach().cpu().numpy().astype(np.float64)
    valid = np.ones((1,) + frame.shape, dtype=bool)
    return SurfaceNormalImage(n, valid), [f[0] for f in feats]
