"""Differentiable operator set used by the traversability networks.

Tensors are ``torch.Tensor`` values; reverse-mode differentiation is torch
autograd. Every operator accepts a single sample ``(c, h, w)`` or a batch
``(n, c, h, w)`` and returns the matching layout.

``grad_check`` is the independent central-difference oracle used to
validate every gradient in the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor


class ShapeError(ValueError):
    pass


class GradientCheckError(ArithmeticError):
    """Raised when an operation produces a non-finite gradient."""


@dataclass
class ConvParams:
    kernel: Tensor  # (out_channels, in_channels, k, k)
    bias: Tensor | None = None  # (out_channels,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel.dim() != 4:
            raise ShapeError(f"kernel must be 4-d, got shape {tuple(self.kernel.shape)}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.bias is not None and self.bias.dim() != 1:
            raise ShapeError(f"bias must be 1-d, got shape {tuple(self.bias.shape)}")

    @property
    def k(self) -> int:
        return self.kernel.shape[-1]


def _batched(x: Tensor, ndim: int = 3) -> tuple[Tensor, bool]:
    if x.dim() == ndim:
        return x.unsqueeze(0), True
    if x.dim() == ndim + 1:
        return x, False
    raise ShapeError(f"expected a {ndim}-d sample or {ndim + 1}-d batch, got shape {tuple(x.shape)}")


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return y.squeeze(0) if squeeze else y


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Cross-correlation of ``x`` (c, h, w) with ``params.kernel``."""
    xb, squeeze = _batched(x)
    c_in = params.kernel.shape[1]
    if xb.shape[1] != c_in:
        raise ShapeError(
            f"conv2d: input shape {tuple(x.shape)} has {xb.shape[1]} channels but kernel "
            f"shape {tuple(params.kernel.shape)} expects {c_in}"
        )
    if params.bias is not None and params.bias.shape[0] != params.kernel.shape[0]:
        raise ShapeError(
            f"conv2d: bias shape {tuple(params.bias.shape)} does not match kernel shape "
            f"{tuple(params.kernel.shape)}"
        )
    k = params.k
    if xb.shape[2] + 2 * params.padding < k or xb.shape[3] + 2 * params.padding < k:
        raise ShapeError(
            f"conv2d: input shape {tuple(x.shape)} is smaller than kernel shape "
            f"{tuple(params.kernel.shape)}"
        )
    y = F.conv2d(xb, params.kernel, params.bias, stride=params.stride, padding=params.padding)
    return _unbatch(y, squeeze)


def deconv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Transposed convolution: the adjoint of ``conv2d`` w.r.t. its input.

    The kernel keeps the ``conv2d`` layout ``(out, in, k, k)`` of the forward
    convolution it transposes, so ``x`` must have ``out`` channels and the
    result has ``in`` channels.
    """
    if params.stride not in (1, 2):
        raise ValueError(f"deconv2d: stride must be 1 or 2, got {params.stride}")
    xb, squeeze = _batched(x)
    if xb.shape[1] != params.kernel.shape[0]:
        raise ShapeError(
            f"deconv2d: input shape {tuple(x.shape)} has {xb.shape[1]} channels but kernel "
            f"shape {tuple(params.kernel.shape)} expects {params.kernel.shape[0]}"
        )
    if params.bias is not None and params.bias.shape[0] != params.kernel.shape[1]:
        raise ShapeError(
            f"deconv2d: bias shape {tuple(params.bias.shape)} must match the "
            f"{params.kernel.shape[1]} output channels of kernel {tuple(params.kernel.shape)}"
        )
    y = F.conv_transpose2d(xb, params.kernel, params.bias, stride=params.stride, padding=params.padding)
    return _unbatch(y, squeeze)


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.dim() <= axis < x.dim():
        raise ShapeError(f"softmax: axis {axis} invalid for shape {tuple(x.shape)}")
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def spatially_variant_conv(x: Tensor, filters: Tensor) -> Tensor:
    """Apply a distinct k x k filter at every pixel, shared across channels.

    x: (c, h, w) or (n, c, h, w); filters: (h, w, k, k) or (n, h, w, k, k).
    Zero padding keeps the spatial size.
    """
    xb, squeeze = _batched(x)
    fb, _ = _batched(filters, ndim=4)
    n, c, h, w = xb.shape
    k = fb.shape[-1]
    if fb.shape[-2] != k or k % 2 == 0:
        raise ShapeError(f"spatially_variant_conv: filters must be k x k with odd k, got {tuple(filters.shape)}")
    if fb.shape[1:3] != (h, w):
        raise ShapeError(
            f"spatially_variant_conv: filters shape {tuple(filters.shape)} does not match "
            f"input shape {tuple(x.shape)}"
        )
    if fb.shape[0] not in (1, n):
        raise ShapeError(f"spatially_variant_conv: filter batch {fb.shape[0]} vs input batch {n}")
    patches = F.unfold(xb, k, padding=k // 2).view(n, c, k * k, h, w)
    taps = fb.reshape(fb.shape[0], h, w, k * k).permute(0, 3, 1, 2).unsqueeze(1)
    y = (patches * taps).sum(dim=2)
    return _unbatch(y, squeeze)


def pointwise_dynamic_conv(x: Tensor, filters: Tensor) -> Tensor:
    """Per-pixel channel mixing: y[:, i, j] = filters[i, j] @ x[:, i, j].

    x: (c, h, w); filters: (h, w, c_out, c), optionally batched.
    """
    xb, squeeze = _batched(x)
    fb, _ = _batched(filters, ndim=4)
    n, c, h, w = xb.shape
    if fb.shape[-1] != c or fb.shape[1:3] != (h, w):
        raise ShapeError(
            f"pointwise_dynamic_conv: filters shape {tuple(filters.shape)} incompatible with "
            f"input shape {tuple(x.shape)}"
        )
    if fb.shape[0] not in (1, n):
        raise ShapeError(f"pointwise_dynamic_conv: filter batch {fb.shape[0]} vs input batch {n}")
    y = torch.einsum("nhwoc,nchw->nohw", fb.expand(n, -1, -1, -1, -1), xb)
    return _unbatch(y, squeeze)


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: list[float] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_rel_error)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        errs = ", ".join(f"{e:.2e}" for e in self.max_rel_error)
        return f"[{status}] {self.name}: max rel error per input = [{errs}] (tol {self.tolerance:.0e})"


def grad_check(
    op: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-4,
    name: str | None = None,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients of ``op(*inputs)`` with central differences.

    Non-scalar outputs are reduced by a fixed random projection. Inputs are
    perturbed in place (so ``op`` may also close over module parameters
    passed in ``inputs``). The step is ``1e-5 * max(1, |x_i|)``. The error
    for each input is ``max|g_auto - g_fd| / max(|g_auto|_inf, |g_fd|_inf)``.
    ``max_entries`` checks a seeded random subset of coordinates.
    """
    name = name or getattr(op, "__name__", "op")
    gen = torch.Generator().manual_seed(seed)
    leaves = list(inputs)
    for leaf in leaves:
        if not leaf.is_leaf or leaf.dtype != torch.float64:
            raise TypeError(f"{name}: grad_check inputs must be float64 leaf tensors")
        leaf.requires_grad_(True)

    with torch.enable_grad():
        out = op(*leaves)
    projection = None
    if out.numel() != 1:
        projection = torch.randn(out.shape, generator=gen, dtype=out.dtype)

    def scalar(o: Tensor) -> Tensor:
        return (o * projection).sum() if projection is not None else o.sum()

    for leaf in leaves:
        leaf.grad = None
    grads = torch.autograd.grad(scalar(out), leaves, allow_unused=True)

    report = GradCheckReport(name=name, tolerance=tolerance)
    for idx, (leaf, g) in enumerate(zip(leaves, grads)):
        g = torch.zeros_like(leaf) if g is None else g.detach()
        if not torch.isfinite(g).all():
            raise GradientCheckError(f"{name}: non-finite gradient for input {idx}")
        flat = leaf.data.view(-1)
        coords = np.arange(flat.numel())
        if max_entries is not None and flat.numel() > max_entries:
            perm = torch.randperm(flat.numel(), generator=gen).numpy()
            coords = np.sort(perm[:max_entries])
        g_flat = g.reshape(-1)
        fd = np.empty(len(coords))
        auto = g_flat[coords].numpy()
        with torch.no_grad():
            for m, i in enumerate(coords):
                orig = flat[i].item()
                h = 1e-5 * max(1.0, abs(orig))
                flat[i] = orig + h
                plus = scalar(op(*leaves)).item()
                flat[i] = orig - h
                minus = scalar(op(*leaves)).item()
                flat[i] = orig
                fd[m] = (plus - minus) / (2 * h)
        if not np.isfinite(fd).all():
            raise GradientCheckError(f"{name}: non-finite finite-difference gradient for input {idx}")
        scale = max(np.abs(auto).max(initial=0.0), np.abs(fd).max(initial=0.0))
        err = 0.0 if scale == 0.0 else float(np.abs(auto - fd).max() / scale)
        report.max_rel_error.append(err)
    return report
