"""Input validation helpers for the estimator API."""
from __future__ import annotations

import numpy as np

from .geometry import FootprintMask, RgbdFrame
from .synthdata import Sample


def check_samples(X, require_footprint: bool = True, multiple_of: int = 1) -> list[Sample]:
    """Validate a sequence of samples (or bare frames) of a common size.

    Bare ``RgbdFrame`` values are wrapped in samples without labels, which
    is only allowed when ``require_footprint`` is false.
    """
    if isinstance(X, (Sample, RgbdFrame)):
        raise TypeError("expected a sequence of samples, got a single sample; wrap it in a list")
    try:
        items = list(X)
    except TypeError as exc:
        raise TypeError(f"expected a sequence of samples, got {type(X).__name__}") from exc
    if not items:
        raise ValueError("found an empty sample sequence; at least one sample is required")
    out = []
    for i, s in enumerate(items):
        if isinstance(s, RgbdFrame):
            if require_footprint:
                raise ValueError(f"sample {i} is a bare frame; fitting requires footprint labels")
            h, w = s.shape
            s = Sample(s, FootprintMask(np.zeros((1, h, w), bool), np.zeros((1, h, w), bool)))
        elif not isinstance(s, Sample):
            raise TypeError(f"sample {i} has type {type(s).__name__}, expected Sample or RgbdFrame")
        out.append(s)
    shape = out[0].frame.shape
    for i, s in enumerate(out):
        if s.frame.shape != shape:
            raise ValueError(f"sample {i} has size {s.frame.shape}, expected {shape} like sample 0")
        if require_footprint and not s.footprint.mask.any():
            raise ValueError(f"sample {i} ({s.name or 'unnamed'}) has an empty footprint")
    if shape[0] % multiple_of or shape[1] % multiple_of:
        raise ValueError(f"image size {shape} must be divisible by {multiple_of}")
    return out


def check_mask(mask, shape=None, name: str = "mask") -> np.ndarray:
    """Coerce to a boolean array, checking values are 0/1 and the shape matches."""
    arr = np.asarray(mask)
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary (0/1)")
        arr = arr.astype(bool)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_probability(p, name: str = "probabilities") -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if not np.isfinite(arr).all() or arr.min(initial=0.0) < 0 or arr.max(initial=0.0) > 1:
        raise ValueError(f"{name} must be finite and within [0, 1]")
    return arr
