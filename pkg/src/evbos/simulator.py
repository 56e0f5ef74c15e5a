"""Ground-truthed synthetic scenes and threshold-crossing event simulation.

A scene is a random-dot background warped by a time-varying displacement field
derived from a smooth density-rate source; events are generated per pixel by
linearly interpolating log intensity between frames and solving the contrast
threshold crossings exactly, so event counts and times are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels as kernels
from .bos_physics import (
    BosGeometry,
    deflection_from_density_gradient,
    displacement_from_deflection,
    gradient_of_scalar,
)
from .core import LOG_OFFSET, EventStream, ScalarField, ValidationError, VectorField

#: Intensity of a dot interior relative to the white background.
DOT_LEVEL = 0.08


@dataclass(frozen=True)
class SimConfig:
    """Event-generation settings: contrast thresholds per polarity, refractory
    period, intensity-signal substep rate, and background/scene seeds."""

    contrast_pos: float = 0.05
    contrast_neg: float = 0.05
    refractory_us: int = 0
    fps: float = 120.0
    seed: int = 0
    dot_density: float = 0.02
    dot_radius: float = 1.2

    def validate(self) -> None:
        if self.contrast_pos <= 0 or self.contrast_neg <= 0:
            raise ValidationError("contrast thresholds must be > 0")
        if self.refractory_us < 0:
            raise ValidationError("refractory period must be >= 0")
        if self.fps <= 0:
            raise ValidationError("fps must be > 0")


@dataclass(frozen=True)
class FrameSequence:
    """Intensity frames with strictly increasing microsecond timestamps."""

    frames: tuple[ScalarField, ...]
    timestamps_us: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.timestamps_us):
            raise ValidationError("frame and timestamp counts differ")
        res = {f.resolution for f in self.frames}
        if len(res) > 1:
            raise ValidationError("all frames must share a resolution")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames[0].resolution

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class SynthScene:
    """A rendered scene: frames, per-interval ground-truth flow, and the
    underlying displacement fields (px, relative to the unwarped background)."""

    frames: FrameSequence
    gt_flows: tuple[VectorField, ...]
    displacements: tuple[VectorField, ...]


def render_background(
    resolution: tuple[int, int], dot_density: float, dot_radius: float, seed: int
) -> ScalarField:
    """White field with seeded-random dark dots (soft 1 px edge).

    ``dot_density`` is dots per pixel, so the dark-pixel fraction is roughly
    ``dot_density * pi * dot_radius**2`` while dots stay sparse.
    """
    if not (0.0 < dot_density < 1.0):
        raise ValidationError(f"dot_density must be in (0, 1), got {dot_density}")
    if dot_radius <= 0:
        raise ValidationError("dot_radius must be > 0")
    w, h = resolution
    rng = np.random.default_rng(seed)
    n_dots = int(round(dot_density * w * h))
    field = np.ones((h, w))
    cx = rng.uniform(0, w, size=n_dots)
    cy = rng.uniform(0, h, size=n_dots)
    reach = int(np.ceil(dot_radius + 1.0))
    for k in range(n_dots):
        x0 = max(int(np.floor(cx[k])) - reach, 0)
        x1 = min(int(np.ceil(cx[k])) + reach + 1, w)
        y0 = max(int(np.floor(cy[k])) - reach, 0)
        y1 = min(int(np.ceil(cy[k])) + reach + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1, dtype=np.float64)
        ys = np.arange(y0, y1, dtype=np.float64)
        dist = np.hypot(xs[None, :] - cx[k], ys[:, None] - cy[k])
        edge = np.clip(dist - (dot_radius - 0.5), 0.0, 1.0)
        dot = DOT_LEVEL + (1.0 - DOT_LEVEL) * edge
        np.minimum(field[y0:y1, x0:x1], dot, out=field[y0:y1, x0:x1])
    return ScalarField(field)


def warp_frame(frame: ScalarField, displacement: VectorField) -> ScalarField:
    """Backward-warp a frame: output(x) = frame(x - d(x)), bilinear, reflect."""
    if frame.resolution != displacement.resolution:
        raise ValidationError("frame and displacement resolutions must match")
    h, w = frame.values.shape
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = xx - displacement.u.values
    sy = yy - displacement.v.values
    return ScalarField(kernels.bilinear_sample(frame.values, sx, sy))


def synth_scene(
    background: ScalarField,
    q_source: Callable[[float], ScalarField],
    geometry: BosGeometry | None,
    duration: float,
    fps: float,
    max_displacement: float | None = 3.0,
) -> SynthScene:
    """Render a scene whose background is displaced by the gradient of
    a smooth, time-varying density proxy.

    Displacement at frame time t is the Sobel gradient of ``q_source(t)``
    (passed through the optics chain when a geometry is given), rescaled so
    its global peak magnitude over the sequence equals ``max_displacement``.
    The ground-truth flow of interval [t_i, t_{i+1}) is the displacement
    difference, in px per interval.
    """
    if duration <= 0 or fps <= 0:
        raise ValidationError("duration and fps must be > 0")
    n_frames = int(round(duration * fps)) + 1
    if n_frames < 2:
        raise ValidationError("scene must contain at least two frames")
    times = [i / fps for i in range(n_frames)]
    timestamps = tuple(int(round(t * 1e6)) for t in times)

    disp_u: list[np.ndarray] = []
    disp_v: list[np.ndarray] = []
    for t in times:
        q = q_source(t)
        if q.resolution != background.resolution:
            raise ValidationError("density source resolution must match background")
        grad = gradient_of_scalar(q)
        du, dv = grad.u.values, grad.v.values
        if geometry is not None:
            du = displacement_from_deflection(
                deflection_from_density_gradient(du, geometry), geometry
            )
            dv = displacement_from_deflection(
                deflection_from_density_gradient(dv, geometry), geometry
            )
        disp_u.append(np.asarray(du, dtype=np.float64))
        disp_v.append(np.asarray(dv, dtype=np.float64))

    if max_displacement is not None:
        peak = max(float(np.hypot(u, v).max()) for u, v in zip(disp_u, disp_v))
        scale = max_displacement / peak if peak > 0 else 0.0
        disp_u = [u * scale for u in disp_u]
        disp_v = [v * scale for v in disp_v]

    displacements = tuple(
        VectorField.from_arrays(u, v, units="px") for u, v in zip(disp_u, disp_v)
    )
    frames = tuple(warp_frame(background, d) for d in displacements)
    gt_flows = tuple(
        VectorField.from_arrays(
            disp_u[i + 1] - disp_u[i], disp_v[i + 1] - disp_v[i], units="px/window"
        )
        for i in range(n_frames - 1)
    )
    return SynthScene(FrameSequence(frames, timestamps), gt_flows, displacements)


def blob_density_source(
    resolution: tuple[int, int],
    n_blobs: int,
    sigma: float,
    mod_freq: float,
    seed: int,
) -> Callable[[float], ScalarField]:
    """Random sum of Gaussian blobs, each oscillating at its own phase/rate.

    Produces a smooth density proxy whose gradient drives the synthetic
    schlieren displacement; frequencies are drawn near ``mod_freq``.
    """
    w, h = resolution
    rng = np.random.default_rng(seed)
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    blobs = []
    for _ in range(n_blobs):
        cx = rng.uniform(0.2 * w, 0.8 * w)
        cy = rng.uniform(0.2 * h, 0.8 * h)
        amp = rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
        freq = mod_freq * rng.uniform(0.7, 1.3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        shape = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma * sigma))
        blobs.append((amp * shape, freq, phase))

    def source(t: float) -> ScalarField:
        total = np.zeros((h, w))
        for shape, freq, phase in blobs:
            total += np.sin(2.0 * np.pi * freq * t + phase) * shape
        return ScalarField(total)

    return source


def _segment_crossings(
    ref: np.ndarray,
    l0: np.ndarray,
    l1: np.ndarray,
    t0: int,
    t1: int,
    contrast: float,
    positive: bool,
):
    """Exact crossing times of reference +/- k*contrast levels on one linear
    log-intensity segment; returns (flat pixel index, times us, count/pixel)."""
    d = l1 - l0
    if positive:
        room = l1 - ref
        moving = d > 0
    else:
        room = ref - l1
        moving = d < 0
    counts = np.zeros(ref.shape, dtype=np.int64)
    counts[moving] = np.floor(room[moving] / contrast).astype(np.int64)
    np.clip(counts, 0, None, out=counts)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, np.intp), np.empty(0, np.int64), counts
    idx = np.nonzero(counts)[0]
    reps = counts[idx]
    rep_idx = np.repeat(idx, reps)
    starts = np.cumsum(reps) - reps
    k = np.arange(total, dtype=np.float64) - np.repeat(starts, reps) + 1.0
    sign = 1.0 if positive else -1.0
    levels = ref[rep_idx] + sign * k * contrast
    frac = (levels - l0[rep_idx]) / d[rep_idx]
    times = np.rint(t0 + (t1 - t0) * frac).astype(np.int64)
    return rep_idx, times, counts


def simulate_events(frames: FrameSequence, sim: SimConfig) -> EventStream:
    """Threshold-crossing event generation on piecewise-linear log intensity.

    Per pixel, an event fires whenever the interpolated log intensity passes
    the last reference level by the polarity's contrast; the reference level
    advances by one contrast step per crossing.  With a positive refractory
    period, crossings closer than that to the pixel's previous *emitted* event
    are suppressed (the reference still advances).  Output is globally
    time-sorted (stable).
    """
    sim.validate()
    if len(frames) < 2:
        raise ValidationError("need at least two frames to simulate events")
    ts = np.asarray(frames.timestamps_us, dtype=np.int64)
    if np.any(np.diff(ts) <= 0):
        raise ValidationError("frame timestamps must be strictly increasing")
    w, h = frames.resolution

    logs = [np.log(f.values + LOG_OFFSET).ravel() for f in frames.frames]
    ref = logs[0].copy()
    all_idx: list[np.ndarray] = []
    all_t: list[np.ndarray] = []
    all_p: list[np.ndarray] = []
    for i in range(len(frames) - 1):
        l0, l1 = logs[i], logs[i + 1]
        t0, t1 = int(ts[i]), int(ts[i + 1])
        for positive, contrast in ((True, sim.contrast_pos), (False, sim.contrast_neg)):
            rep_idx, times, counts = _segment_crossings(
                ref, l0, l1, t0, t1, contrast, positive
            )
            if len(rep_idx):
                all_idx.append(rep_idx)
                all_t.append(times)
                all_p.append(
                    np.full(len(rep_idx), 1 if positive else -1, dtype=np.int8)
                )
            step = contrast if positive else -contrast
            ref += counts * step

    if not all_idx:
        return EventStream.empty((w, h))
    flat = np.concatenate(all_idx)
    t = np.concatenate(all_t)
    p = np.concatenate(all_p)

    if sim.refractory_us > 0:
        keep = _refractory_filter(flat, t, sim.refractory_us)
        flat, t, p = flat[keep], t[keep], p[keep]

    order = np.argsort(t, kind="stable")
    flat, t, p = flat[order], t[order], p[order]
    return EventStream(flat % w, flat // w, t, p, (w, h))


def _refractory_filter(flat: np.ndarray, t: np.ndarray, refractory_us: int) -> np.ndarray:
    """Keep-mask dropping events within the refractory period of the previous
    kept event at the same pixel (events are in per-pixel time order already)."""
    order = np.lexsort((np.arange(len(t)), t, flat))
    keep = np.ones(len(t), dtype=bool)
    last_pix = -1
    last_t = 0
    for j in order:
        pix = int(flat[j])
        if pix != last_pix:
            last_pix = pix
            last_t = int(t[j])
            continue
        if int(t[j]) - last_t < refractory_us:
            keep[j] = False
        else:
            last_t = int(t[j])
    return keep
