"""Grid types and elementary image operations.

A scalar field is a 2D float64 ``ndarray`` with finite values in [0, 1];
a binary mask is a 2D ``bool`` array; a slice stack is a 3D array of
shape ``(l, H, W)``. The ``as_*`` helpers validate and normalise inputs.
"""

import math

import numpy as np
from scipy import ndimage

SLICE_COUNTS = (1, 3, 5)


class FieldError(ValueError):
    """Invalid field, mask, or stack."""


class ParameterError(ValueError):
    """Invalid operation parameter."""


def as_field(values, *, name="field"):
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise FieldError(f"{name} must be 2D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise FieldError(f"{name} must be at least 1x1")
    if not np.all(np.isfinite(a)):
        raise FieldError(f"{name} contains NaN or Inf")
    if a.min() < 0.0 or a.max() > 1.0:
        raise FieldError(f"{name} values must lie in [0, 1]")
    return a


def as_mask(bits, *, name="mask"):
    a = np.asarray(bits)
    if a.ndim != 2:
        raise FieldError(f"{name} must be 2D, got shape {a.shape}")
    return a.astype(bool, copy=False)


def as_stack(slices, *, check_count=True):
    """Validate a slice stack; all slices share one shape, l in {1, 3, 5}."""
    if isinstance(slices, np.ndarray):
        a = np.asarray(slices, dtype=np.float64)
        if a.ndim != 3:
            raise FieldError(f"stack must be 3D (l, H, W), got shape {a.shape}")
    else:
        fields = [as_field(s) for s in slices]
        if len({f.shape for f in fields}) > 1:
            raise FieldError("all slices must share width and height")
        a = np.stack(fields) if fields else np.empty((0, 1, 1))
    if check_count and a.shape[0] not in SLICE_COUNTS:
        raise FieldError(f"slice count must be one of {SLICE_COUNTS}, got {a.shape[0]}")
    for s in a:
        as_field(s, name="slice")
    return a


def threshold(field, level):
    """Superlevel mask ``field >= level``."""
    if not 0.0 <= level <= 1.0:
        raise ParameterError(f"level must lie in [0, 1], got {level}")
    return as_field(field) >= level


def gaussian_kernel1d(sigma):
    """Normalised 1D Gaussian taps, truncated at ``ceil(3 * sigma)``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(field, sigma):
    """Zero-padded Gaussian blur, rescaled so the output peak equals the input peak."""
    f = as_field(field)
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(f, k, axis=0, mode="constant", cval=0.0)
    out = ndimage.correlate1d(out, k, axis=1, mode="constant", cval=0.0)
    peak_in, peak_out = f.max(), out.max()
    if peak_out <= 0.0:
        return np.zeros_like(f)
    out *= peak_in / peak_out
    return np.clip(out, 0.0, peak_in)
