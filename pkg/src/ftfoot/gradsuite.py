"""Finite-difference gradient checks over every differentiable operation.

Shared by the ``gradcheck`` command and the test suite. All checks run in
float64 on small random instances.
"""
from __future__ import annotations

import time
import warnings

import torch

from . import diffcore as dc
from .fsm import (
    FsmConfig,
    FootprintSupervision,
    LossWeights,
    TransformSpec,
    TraversabilityNet,
    affinity_matrix,
    fsm_forward,
    random_walk,
    self_supervised_loss,
    total_loss,
    weighted_bce,
)
from .gfn import GfnConfig, confidence_gate, generate_filters, guide_filter_layer, surface_normal_loss

TOLERANCE = 1e-4


def _leaf(gen, *shape, scale=1.0, offset=0.0):
    return (torch.randn(*shape, generator=gen, dtype=torch.float64) * scale + offset).requires_grad_(True)


def _tiny_model(seed=0):
    torch.manual_seed(seed)
    gfn = GfnConfig(num_stages=2, channels=(3, 4), strides=(1, 2), fusion_channels=3)
    model = TraversabilityNet(gfn, FsmConfig(grid=(10, 10))).double()
    # perturb the identity-initialised heads so their gradients are generic
    with torch.no_grad():
        for layer in model.gfn.fusion.layers:
            layer.init_identity(logit_gap=0.5)
            for p in layer.parameters():
                p.add_(0.3 * torch.randn(p.shape, dtype=p.dtype))
        for p in model.parameters():
            p.add_(0.05 * torch.randn(p.shape, dtype=p.dtype))
    return model


def checks(seed: int = 0):
    """Yield (name, op, inputs, max_entries) for every differentiable operation."""
    g = torch.Generator().manual_seed(seed)
    c, h, w, k = 2, 5, 5, 3

    x = _leaf(g, 2, c, h, w)
    kern, bias = _leaf(g, 3, c, k, k), _leaf(g, 3)
    yield "conv2d", lambda x, kk, b: dc.conv2d(x, dc.ConvParams(kk, b, stride=1, padding=1)), [x, kern, bias], None
    x = _leaf(g, 2, c, h, w)
    kern, bias = _leaf(g, 3, c, k, k), _leaf(g, 3)
    yield "conv2d_stride2", lambda x, kk, b: dc.conv2d(x, dc.ConvParams(kk, b, stride=2, padding=1)), [x, kern, bias], None

    x = _leaf(g, 2, 3, 3, 3)
    kern, bias = _leaf(g, 3, c, 4, 4), _leaf(g, c)
    yield "deconv2d", lambda x, kk, b: dc.deconv2d(x, dc.ConvParams(kk, b, stride=2, padding=1)), [x, kern, bias], None

    yield "softmax", lambda z: dc.softmax(z, axis=1), [_leaf(g, 3, 4, 2)], None

    x = _leaf(g, 2, c, h, w)
    filt = _leaf(g, 2, h, w, k, k)
    yield "spatially_variant_conv", dc.spatially_variant_conv, [x, filt], None

    x = _leaf(g, 2, c, h, w)
    filt = _leaf(g, 2, h, w, 3, c)
    yield "pointwise_dynamic_conv", dc.pointwise_dynamic_conv, [x, filt], None

    xg, xc = _leaf(g, 1, c, h, w), _leaf(g, 1, c, h, w)
    gk, gb = _leaf(g, 2, 2 * c, k, k, scale=0.3), _leaf(g, 2)

    def gate(xg, xc, gk, gb):
        a, b, conf = confidence_gate(xg, xc, dc.ConvParams(gk, gb, padding=1))
        return torch.cat([a, b, conf], dim=1)

    yield "confidence_gate", gate, [xg, xc, gk, gb], None

    xg, xc = _leaf(g, 1, c, h, w), _leaf(g, 1, c, h, w)
    sk, sb = _leaf(g, k * k, 2 * c, k, k, scale=0.3), _leaf(g, k * k)
    pk, pb = _leaf(g, 3 * c, 2 * c, k, k, scale=0.3), _leaf(g, 3 * c)

    def filters(xg, xc, sk, sb, pk, pb):
        ks, kp = generate_filters(xg, xc, dc.ConvParams(sk, sb, padding=1), dc.ConvParams(pk, pb, padding=1), k, 3)
        return torch.cat([ks.reshape(-1), kp.reshape(-1)])

    yield "generate_filters", filters, [xg, xc, sk, sb, pk, pb], 60

    xg, xc = _leaf(g, 1, c, h, w), _leaf(g, 1, c, h, w)
    gk, gb = _leaf(g, 2, 2 * c, k, k, scale=0.3), _leaf(g, 2)
    sk, sb = _leaf(g, k * k, 2 * c, k, k, scale=0.3), _leaf(g, k * k)
    pk, pb = _leaf(g, 3 * c, 2 * c, k, k, scale=0.3), _leaf(g, 3 * c)

    def gfl(xg, xc, gk, gb, sk, sb, pk, pb):
        return guide_filter_layer(
            xg, xc, dc.ConvParams(gk, gb, padding=1), dc.ConvParams(sk, sb, padding=1), dc.ConvParams(pk, pb, padding=1), k, 3
        )

    yield "guide_filter_layer", gfl, [xg, xc, gk, gb, sk, sb, pk, pb], 60

    feats = _leaf(g, 6, 3, scale=0.7)
    alpha = torch.tensor(0.5, dtype=torch.float64, requires_grad=True)

    def rw(f, a):
        return random_walk(f, affinity_matrix(f.T), a)

    yield "affinity_matrix+random_walk", rw, [feats, alpha], None

    torch.manual_seed(seed)
    module = FootprintSupervision(3, FsmConfig(grid=(3, 3))).double()
    fx = _leaf(g, 3, 6, 6)
    yield "fsm_forward", lambda f, a: fsm_forward(f, module), [fx, module.alpha], None
    head_w = module.head.weight
    yield "fsm_forward_head", lambda f, hw: fsm_forward(f, module), [fx.detach().clone().requires_grad_(True), head_w], None

    p = torch.rand(2, 1, 4, 4, generator=g, dtype=torch.float64).mul(0.8).add(0.1).requires_grad_(True)
    y = (torch.rand(2, 1, 4, 4, generator=g) > 0.6).double()
    valid = torch.rand(2, 1, 4, 4, generator=g) > 0.2
    yield "weighted_bce", lambda p: weighted_bce(p, y, valid), [p], None

    pred = _leaf(g, 2, 3, 4, 4)
    gt = torch.nn.functional.normalize(torch.randn(2, 3, 4, 4, generator=g, dtype=torch.float64), dim=1)
    nvalid = torch.rand(2, 1, 4, 4, generator=g) > 0.3
    yield "surface_normal_loss", lambda q: surface_normal_loss(q, gt, nvalid), [pred], None

    model = _tiny_model(seed)
    x = torch.rand(1, 4, 20, 20, generator=g, dtype=torch.float64).requires_grad_(True)
    for tr in (TransformSpec("horizontal_flip"), TransformSpec("translate", dx=-2)):
        yield f"self_supervised_loss[{tr.kind}]", lambda x, tr=tr: self_supervised_loss(model, x, tr), [x], 40
        yield f"self_supervised_loss[{tr.kind}]/params", (
            lambda a, w, tr=tr: self_supervised_loss(model, x.detach(), tr)
        ), [model.fsm.alpha, model.gfn.fusion.project[-1].weight], 40

    footprint = (torch.rand(1, 1, 20, 20, generator=g) > 0.7).double()
    fvalid = torch.ones(1, 1, 20, 20, dtype=torch.bool)
    normals = torch.nn.functional.normalize(torch.randn(1, 3, 20, 20, generator=g, dtype=torch.float64), dim=1)
    nvalid = torch.ones(1, 1, 20, 20, dtype=torch.bool)
    weights = LossWeights(1.0, 0.5, 1.0)
    tr = TransformSpec("horizontal_flip")
    some = [model.fsm.alpha, model.fsm.head.weight, model.gfn.extraction.head.weight, model.gfn.fusion.layers[0].spatial.weight]

    def total(*params):
        return total_loss(model, x.detach(), footprint, fvalid, normals, nvalid, tr, weights)[0]

    yield "total_loss", total, some, 40


def run_suite(seed: int = 0, tolerance: float = TOLERANCE, verbose: bool = False, stream=None):
    """Run every check; returns (reports, elapsed seconds)."""
    reports = []
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name, op, inputs, entries in checks(seed):
            rep = dc.grad_check(op, inputs, tolerance=tolerance, name=name, max_entries=entries, seed=seed)
            reports.append(rep)
            if verbose and stream is not None:
                print(rep, file=stream)
    return reports, time.perf_counter() - t0
