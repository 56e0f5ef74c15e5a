"""Color-wheel flow rendering and simple Netpbm image writers."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import ScalarField, VectorField


def flow_to_rgb(flow: VectorField, max_magnitude: float | None = None) -> np.ndarray:
    """Standard optical-flow color wheel as an (H, W, 3) uint8 image.

    Hue encodes the flow direction (atan2 of the components), saturation the
    magnitude clipped at ``max_magnitude`` (auto: the field's peak); zero flow
    maps to white.
    """
    u = flow.u.values
    v = flow.v.values
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(mag.max())
    if max_magnitude <= 0:
        max_magnitude = 1.0
    hue = (np.arctan2(v, u) / (2.0 * np.pi)) % 1.0
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    val = np.ones_like(sat)

    i = np.floor(hue * 6.0).astype(int) % 6
    f = hue * 6.0 - np.floor(hue * 6.0)
    p = val * (1.0 - sat)
    q = val * (1.0 - f * sat)
    t = val * (1.0 - (1.0 - f) * sat)
    r = np.choose(i, [val, q, p, p, t, val])
    g = np.choose(i, [t, val, val, q, p, p])
    b = np.choose(i, [p, p, t, val, val, q])
    rgb = np.stack([r, g, b], axis=-1)
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Binary 8-bit PPM (P6)."""
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def write_gray_pgm(path: str | Path, values: np.ndarray) -> None:
    """8-bit PGM of an arbitrary real field, min-max normalized."""
    vals = np.asarray(values, dtype=np.float64)
    lo, hi = float(vals.min()), float(vals.max())
    if hi > lo:
        norm = (vals - lo) / (hi - lo)
    else:
        norm = np.zeros_like(vals)
    data = np.rint(norm * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def visualize_flow(flow: VectorField, max_magnitude: float | None = None) -> np.ndarray:
    """Alias for :func:`flow_to_rgb` matching the pipeline's operation name."""
    return flow_to_rgb(flow, max_magnitude)


def field_preview(field: ScalarField) -> np.ndarray:
    """Symmetric grayscale preview of a signed field (zero maps to mid-gray)."""
    vals = field.values
    peak = float(np.abs(vals).max())
    if peak <= 0:
        return np.full(vals.shape, 128, dtype=np.uint8)
    return np.rint((vals / peak * 0.5 + 0.5) * 255.0).astype(np.uint8)
