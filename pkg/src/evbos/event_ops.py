"""Dense images derived from event streams: brightness increments, smoothed
event-density maps, regularizer weights, and flow-transported streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import EventStream, ScalarField, ValidationError, VectorField


@dataclass(frozen=True)
class IncrementImage:
    """Brightness-increment image: contrast times the pixelwise polarity sum."""

    field: ScalarField
    window: tuple[int, int]
    contrast: float


def _polarity_sum(events: EventStream, resolution: tuple[int, int]) -> np.ndarray:
    w, h = resolution
    if len(events) == 0:
        return np.zeros((h, w))
    flat = events.y.astype(np.intp) * w + events.x.astype(np.intp)
    sums = np.bincount(flat, weights=events.p.astype(np.float64), minlength=w * h)
    return sums.reshape(h, w)


def accumulate_increment(
    events: EventStream,
    contrast: float,
    resolution: tuple[int, int],
    window: tuple[int, int] | None = None,
) -> IncrementImage:
    """Sum event polarities pixelwise and scale by the contrast sensitivity.

    Pixels without events are exactly zero; the result is linear both in the
    contrast and in stream concatenation.
    """
    if contrast <= 0:
        raise ValidationError(f"contrast must be > 0, got {contrast}")
    values = _polarity_sum(events, resolution) * contrast
    if window is None:
        if len(events) > 0:
            window = (int(events.t[0]), int(events.t[-1]) + 1)
        else:
            window = (0, 0)
    return IncrementImage(ScalarField(values), window, float(contrast))


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian, truncated at radius ceil(3*sigma), renormalized to sum 1."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_smooth(field: ScalarField, sigma: float) -> ScalarField:
    """Separable Gaussian convolution with reflect boundary handling."""
    k = gaussian_kernel1d(sigma)
    tmp = correlate1d(field.values, k, axis=0, mode="reflect")
    out = correlate1d(tmp, k, axis=1, mode="reflect")
    return ScalarField(out)


def event_density(
    events: EventStream, sigma: float, resolution: tuple[int, int]
) -> ScalarField:
    """Gaussian-smoothed per-pixel event histogram, min-max normalized to [0, 1].

    An all-zero histogram (empty window) stays all-zero rather than erroring.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    w, h = resolution
    if len(events) == 0:
        return ScalarField(np.zeros((h, w)))
    flat = events.y.astype(np.intp) * w + events.x.astype(np.intp)
    counts = np.bincount(flat, minlength=w * h).astype(np.float64).reshape(h, w)
    smoothed = gaussian_smooth(ScalarField(counts), sigma).values
    peak = smoothed.max()
    if peak <= 0:
        return ScalarField(np.zeros((h, w)))
    return ScalarField(smoothed / peak)


def weight_map(h: ScalarField, alpha: float) -> ScalarField:
    """Regularizer weight ``w = 1 - alpha * h``: large where events are scarce.

    The affine form keeps the weight bounded in [1 - alpha, 1] and largest
    exactly where the event density vanishes (reciprocal variants diverge on
    sparse histograms, which contradicts the intended behavior).
    """
    if not (0.0 <= alpha < 1.0):
        raise ValidationError(f"alpha must be in [0, 1), got {alpha}")
    vals = h.values
    if vals.min() < -1e-12 or vals.max() > 1.0 + 1e-12:
        raise ValidationError("density values must lie in [0, 1]")
    return ScalarField(1.0 - alpha * vals)


def warp_events(
    events: EventStream, flow: VectorField, t_ref: int
) -> tuple[EventStream, int]:
    """Transport events along a px/s flow field to the reference time.

    Each event moves to ``x' = x - v(x) * (t - t_ref)`` with nearest-pixel
    rounding (ties to even); out-of-bounds results are dropped and their count
    returned.  Timestamps are unchanged.
    """
    w, h = events.resolution
    if flow.resolution != events.resolution:
        raise ValidationError(
            f"flow resolution {flow.resolution} != stream resolution {events.resolution}"
        )
    if len(events) == 0:
        return events, 0
    dt_s = (events.t - np.int64(t_ref)).astype(np.float64) * 1e-6
    vx = flow.u.values[events.y, events.x]
    vy = flow.v.values[events.y, events.x]
    nx = np.rint(events.x - vx * dt_s).astype(np.int64)
    ny = np.rint(events.y - vy * dt_s).astype(np.int64)
    keep = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    dropped = int(np.count_nonzero(~keep))
    out = EventStream(nx[keep], ny[keep], events.t[keep], events.p[keep], events.resolution)
    return out, dropped
