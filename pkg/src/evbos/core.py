"""Shared domain types: events, streams, dense fields, and ROI utilities.

Conventions used throughout the package:

* ``x`` is the pixel column, ``y`` the pixel row; dense grids are stored as
  row-major ``(height, width)`` float64 arrays indexed ``values[y, x]``.
* Timestamps are integer microseconds.  Time intervals are half-open
  ``[t0, t1)`` so consecutive windows partition a stream.
* All types are immutable after construction (backing arrays are marked
  read-only), so they can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


#: Guard added to linear intensities (fraction of full scale) before taking
#: logs, both in the event model and in the estimator's frame conversion.
LOG_OFFSET = 1e-3


class EvbosError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(EvbosError, ValueError):
    """Invalid input data or configuration."""


class EmptyWindowError(ValidationError):
    """An operation required at least one event in the time window."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Event:
    """A single sensor event: pixel, microsecond timestamp, polarity (+/-1)."""

    x: int
    y: int
    t: int
    polarity: int

    def __post_init__(self) -> None:
        if self.polarity not in (-1, 1):
            raise ValidationError(f"polarity must be -1 or +1, got {self.polarity}")
        if self.x < 0 or self.y < 0 or self.t < 0:
            raise ValidationError(f"event coordinates/timestamp must be >= 0: {self}")


@dataclass(frozen=True)
class EventStream:
    """Time-ordered event stream, stored column-wise for efficiency.

    ``x``/``y`` are int32 pixel coordinates, ``t`` int64 microseconds,
    ``p`` int8 polarities in {-1, +1}.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    resolution: tuple[int, int]  # (width, height)

    def __post_init__(self) -> None:
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise ValidationError(f"resolution must be positive, got {self.resolution}")
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event component arrays must have equal length")
        object.__setattr__(self, "x", _frozen(np.asarray(self.x, dtype=np.int32)))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=np.int32)))
        object.__setattr__(self, "t", _frozen(np.asarray(self.t, dtype=np.int64)))
        object.__setattr__(self, "p", _frozen(np.asarray(self.p, dtype=np.int8)))

    @staticmethod
    def from_events(events: Sequence[Event], resolution: tuple[int, int]) -> "EventStream":
        xs = np.fromiter((e.x for e in events), dtype=np.int32, count=len(events))
        ys = np.fromiter((e.y for e in events), dtype=np.int32, count=len(events))
        ts = np.fromiter((e.t for e in events), dtype=np.int64, count=len(events))
        ps = np.fromiter((e.polarity for e in events), dtype=np.int8, count=len(events))
        return EventStream(xs, ys, ts, ps, resolution)

    @staticmethod
    def empty(resolution: tuple[int, int]) -> "EventStream":
        z = np.zeros(0)
        return EventStream(z, z, z, z, resolution)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )


@dataclass(frozen=True)
class ScalarField:
    """Dense 2D grid of finite float64 values with (width, height) metadata."""

    values: np.ndarray
    resolution: tuple[int, int] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValidationError(f"scalar field must be 2D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("scalar field contains non-finite values")
        res = (vals.shape[1], vals.shape[0])
        if self.resolution is not None and tuple(self.resolution) != res:
            raise ValidationError(
                f"declared resolution {self.resolution} does not match array shape {vals.shape}"
            )
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "resolution", res)

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]


@dataclass(frozen=True)
class VectorField:
    """Dense 2D grid of 2-vectors, split into x- and y-component scalar fields.

    ``units`` is free-form metadata ('px', 'px/s', or 'px/window').
    """

    u: ScalarField
    v: ScalarField
    units: str = "px"

    def __post_init__(self) -> None:
        if self.u.resolution != self.v.resolution:
            raise ValidationError(
                f"vector components differ in resolution: {self.u.resolution} vs {self.v.resolution}"
            )

    @staticmethod
    def from_arrays(u: np.ndarray, v: np.ndarray, units: str = "px") -> "VectorField":
        return VectorField(ScalarField(u), ScalarField(v), units)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.u.resolution

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.values, self.v.values)


@dataclass(frozen=True)
class Roi:
    """Rectangular region of interest: top-left corner plus extent, in pixels."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"ROI extent must be positive, got {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValidationError(f"ROI corner must be non-negative, got {self}")

    def check_within(self, resolution: tuple[int, int]) -> None:
        w, h = resolution
        if self.x0 + self.width > w or self.y0 + self.height > h:
            raise ValidationError(f"ROI {self} exceeds bounds of resolution {resolution}")


@dataclass(frozen=True)
class StreamReport:
    """Outcome of stream validation: how many raw events were rejected and where."""

    n_input: int
    n_rejected: int
    rejected_indices: tuple[int, ...]

    def __str__(self) -> str:
        if self.n_rejected == 0:
            return f"validated {self.n_input} events, none rejected"
        shown = ", ".join(str(i) for i in self.rejected_indices[:10])
        more = "" if self.n_rejected <= 10 else f", ... (+{self.n_rejected - 10} more)"
        return (
            f"validated {self.n_input} events, rejected {self.n_rejected} "
            f"out-of-bounds at indices [{shown}{more}]"
        )


def validate_stream(
    raw_events: Sequence[Event] | EventStream,
    resolution: tuple[int, int],
) -> tuple[EventStream, StreamReport]:
    """Time-sort raw events (stable) and drop out-of-bounds ones.

    Returns the validated stream together with a report naming the count and
    original indices of rejected events.  Validating a validated stream is a
    no-op.
    """
    w, h = resolution
    if w <= 0 or h <= 0:
        raise ValidationError(f"resolution must be positive, got {resolution}")
    if isinstance(raw_events, EventStream):
        xs, ys, ts, ps = raw_events.x, raw_events.y, raw_events.t, raw_events.p
    else:
        stream = EventStream.from_events(raw_events, resolution)
        xs, ys, ts, ps = stream.x, stream.y, stream.t, stream.p

    in_bounds = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    rejected = np.nonzero(~in_bounds)[0]
    xs, ys, ts, ps = xs[in_bounds], ys[in_bounds], ts[in_bounds], ps[in_bounds]
    order = np.argsort(ts, kind="stable")
    stream = EventStream(xs[order], ys[order], ts[order], ps[order], resolution)
    report = StreamReport(
        n_input=len(in_bounds),
        n_rejected=int(rejected.size),
        rejected_indices=tuple(int(i) for i in rejected),
    )
    return stream, report


def slice_events(stream: EventStream, t0: int, t1: int) -> EventStream:
    """Return exactly the events with ``t0 <= t < t1``, order preserved."""
    if t0 > t1:
        raise ValidationError(f"slice bounds must satisfy t0 <= t1, got [{t0}, {t1})")
    lo = int(np.searchsorted(stream.t, t0, side="left"))
    hi = int(np.searchsorted(stream.t, t1, side="left"))
    return EventStream(
        stream.x[lo:hi], stream.y[lo:hi], stream.t[lo:hi], stream.p[lo:hi], stream.resolution
    )


def crop(field: ScalarField | VectorField, roi: Roi):
    """Copy the ROI sub-grid out of a scalar or vector field."""
    if isinstance(field, VectorField):
        return VectorField(crop(field.u, roi), crop(field.v, roi), field.units)
    roi.check_within(field.resolution)
    sub = field.values[roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width]
    return ScalarField(sub.copy())
