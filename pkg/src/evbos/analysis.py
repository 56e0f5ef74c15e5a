"""Flow-accuracy metrics, kymogram construction, automatic slope detection,
and the back-projection of kymogram slopes to object-plane velocities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bos_physics import BosGeometry
from .core import EventStream, Roi, ScalarField, ValidationError, VectorField
from .event_ops import gaussian_smooth


@dataclass(frozen=True)
class Metrics:
    """Flow accuracy over an evaluation mask.

    ``aee``: mean endpoint error in px.  ``pct_out``: percentage of pixels
    whose endpoint error strictly exceeds 1 px.  ``ae``: mean angular error in
    radians between the (u, v, 1) direction vectors.
    """

    aee: float
    pct_out: float
    ae: float
    n_pixels: int


@dataclass(frozen=True)
class Kymogram:
    """Space-time image: one column of a field sequence stacked over time."""

    values: np.ndarray  # (rows=time, cols=space)
    column: int
    rate: float  # rows per second

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValidationError("kymogram must be 2D (time x space)")
        if self.rate <= 0:
            raise ValidationError("row rate must be > 0")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class PatchSlope:
    """Detected dominant slope of one spatial patch of a kymogram."""

    start: int  # first spatial index covered by the patch
    slope: float  # px/s
    angle_deg: float
    confidence: float  # peak-to-mean ratio of the angular response


def event_mask(events: EventStream, roi: Roi) -> np.ndarray:
    """Boolean field, true exactly at in-ROI pixels with at least one event."""
    w, h = events.resolution
    roi.check_within((w, h))
    mask = np.zeros((h, w), dtype=bool)
    if len(events) > 0:
        flat = events.y.astype(np.intp) * w + events.x.astype(np.intp)
        counts = np.bincount(flat, minlength=w * h).reshape(h, w)
        mask = counts > 0
    inside = np.zeros((h, w), dtype=bool)
    inside[roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width] = True
    return mask & inside


def compute_metrics(est: VectorField, gt: VectorField, mask: np.ndarray) -> Metrics:
    """AEE / %Out / AE of an estimated flow against ground truth over a mask."""
    if est.resolution != gt.resolution:
        raise ValidationError("flow fields must share resolution")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != est.u.values.shape:
        raise ValidationError("mask shape must match the flow resolution")
    if not mask.any():
        raise ValidationError("evaluation mask is empty")
    u1 = est.u.values[mask]
    v1 = est.v.values[mask]
    u2 = gt.u.values[mask]
    v2 = gt.v.values[mask]
    ee = np.hypot(u1 - u2, v1 - v2)
    aee = float(ee.mean())
    pct_out = float(100.0 * np.count_nonzero(ee > 1.0) / ee.size)
    cosang = (u1 * u2 + v1 * v2 + 1.0) / (
        np.sqrt(u1 * u1 + v1 * v1 + 1.0) * np.sqrt(u2 * u2 + v2 * v2 + 1.0)
    )
    ae = float(np.mean(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return Metrics(aee=aee, pct_out=pct_out, ae=ae, n_pixels=int(ee.size))


def build_kymogram(
    sources: Sequence[ScalarField],
    column: int,
    roi_rows: tuple[int, int] | None,
    rate: float,
) -> Kymogram:
    """Stack one column of each source field into a time-by-space image.

    ``roi_rows`` restricts the extracted column to rows [y0, y1); sources may
    be density-rate images or event histograms.
    """
    if not sources:
        raise ValidationError("need at least one source field")
    res = sources[0].resolution
    for s in sources:
        if s.resolution != res:
            raise ValidationError("all sources must share a resolution")
    w, h = res
    if not (0 <= column < w):
        raise ValidationError(f"column {column} out of bounds for width {w}")
    if roi_rows is None:
        roi_rows = (0, h)
    y0, y1 = roi_rows
    if not (0 <= y0 < y1 <= h):
        raise ValidationError(f"row range {roi_rows} out of bounds for height {h}")
    rows = [s.values[y0:y1, column] for s in sources]
    return Kymogram(np.stack(rows, axis=0), column=column, rate=rate)


def _rotated_gradient_response(patch: np.ndarray, angles_rad: np.ndarray) -> np.ndarray:
    """Mean |spatial gradient| of the patch resampled at each rotation angle.

    Rotation is by bilinear resampling about the patch center; samples falling
    outside the patch are excluded, as are difference pairs touching them.
    """
    n, m = patch.shape
    cy = (n - 1) / 2.0
    cx = (m - 1) / 2.0
    rr, cc = np.meshgrid(
        np.arange(n, dtype=np.float64) - cy,
        np.arange(m, dtype=np.float64) - cx,
        indexing="ij",
    )
    responses = np.empty(len(angles_rad))
    for i, theta in enumerate(angles_rad):
        ct, st = np.cos(theta), np.sin(theta)
        src_r = cy + rr * ct - cc * st
        src_c = cx + rr * st + cc * ct
        valid = (src_r >= 0) & (src_r <= n - 1) & (src_c >= 0) & (src_c <= m - 1)
        r0 = np.clip(np.floor(src_r).astype(np.intp), 0, n - 2)
        c0 = np.clip(np.floor(src_c).astype(np.intp), 0, m - 2)
        fr = src_r - r0
        fc = src_c - c0
        v00 = patch[r0, c0]
        v01 = patch[r0, c0 + 1]
        v10 = patch[r0 + 1, c0]
        v11 = patch[r0 + 1, c0 + 1]
        top = v00 + fc * (v01 - v00)
        bot = v10 + fc * (v11 - v10)
        rot = top + fr * (bot - top)
        diff = np.abs(rot[:, 1:] - rot[:, :-1])
        pair_valid = valid[:, 1:] & valid[:, :-1]
        count = int(pair_valid.sum())
        responses[i] = float(diff[pair_valid].sum()) / count if count else 0.0
    return responses


def detect_slope(
    kymo: Kymogram, patch_size: int, smoothing_sigma: float
) -> list[PatchSlope]:
    """Dominant line slope per spatial patch of a kymogram, in px/s.

    The smoothed kymogram is tiled into patch_size x patch_size windows;
    within each spatial tile the angular responses of all time tiles are
    summed and the rotation angle in [-89 deg, 89 deg] (0.25 deg steps)
    maximizing the spatial-gradient magnitude is converted to a velocity via
    the row rate.  Confidence is the peak-to-mean ratio of the response curve.
    """
    t_rows, s_cols = kymo.values.shape
    if patch_size > t_rows or patch_size > s_cols:
        raise ValidationError(
            f"patch size {patch_size} exceeds kymogram extents {(t_rows, s_cols)}"
        )
    smoothed = (
        gaussian_smooth(ScalarField(kymo.values), smoothing_sigma).values
        if smoothing_sigma > 0
        else kymo.values
    )
    angles_deg = np.arange(-89.0, 89.0 + 1e-9, 0.25)
    angles_rad = np.deg2rad(angles_deg)
    n_space = s_cols // patch_size
    n_time = t_rows // patch_size
    out: list[PatchSlope] = []
    for j in range(n_space):
        c0 = j * patch_size
        response = np.zeros(len(angles_rad))
        for i in range(n_time):
            r0 = i * patch_size
            patch = smoothed[r0 : r0 + patch_size, c0 : c0 + patch_size]
            response += _rotated_gradient_response(patch, angles_rad)
        best = int(np.argmax(response))
        mean_resp = float(response.mean())
        confidence = float(response[best]) / mean_resp if mean_resp > 0 else 0.0
        angle = float(angles_deg[best])
        slope = float(np.tan(np.deg2rad(angle)) * kymo.rate)
        out.append(PatchSlope(start=c0, slope=slope, angle_deg=angle, confidence=confidence))
    return out


def velocity_from_slope(slope: float, geometry: BosGeometry) -> float:
    """Back-project an image-plane kymogram slope (px/s) to object-plane m/s.

    Small-angle pinhole scaling: velocity = slope * pixel_pitch * Z_A / f.
    """
    return (
        slope
        * geometry.pixel_pitch
        * geometry.lens_to_schlieren
        / geometry.focal_length
    )
