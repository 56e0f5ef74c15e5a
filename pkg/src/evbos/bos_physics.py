"""Background-oriented schlieren optics and the scalar-gradient / Poisson pair.

The optics chain maps a density gradient to a refraction angle and on to an
image-plane displacement; the Sobel / Poisson-integration pair converts
between a scalar density-rate field and the flow it induces.  Both directions
use the *same* discrete gradient operator, so integrating a gradient recovers
the original field (minus its mean) to solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh as scipy_eigh

from . import _kernels as kernels
from .core import ScalarField, ValidationError, VectorField


@dataclass(frozen=True)
class BosGeometry:
    """Optical constants linking pixel displacements to physical quantities.

    Distances in meters; ``gladstone_dale`` in m^3/kg.  ``schlieren_depth`` is
    the extent of the refracting volume along the optical axis.
    """

    focal_length: float
    lens_to_schlieren: float
    schlieren_to_background: float
    pixel_pitch: float
    schlieren_depth: float
    ambient_index: float = 1.000293
    gladstone_dale: float = 2.23e-4

    def __post_init__(self) -> None:
        if self.focal_length <= 0:
            raise ValidationError("focal_length must be > 0")
        if self.lens_to_schlieren <= self.focal_length:
            raise ValidationError("lens_to_schlieren must exceed the focal length")
        if self.schlieren_to_background <= 0:
            raise ValidationError("schlieren_to_background must be > 0")
        if self.pixel_pitch <= 0:
            raise ValidationError("pixel_pitch must be > 0")
        if self.schlieren_depth <= 0:
            raise ValidationError("schlieren_depth must be > 0")
        if self.ambient_index < 1:
            raise ValidationError("ambient_index must be >= 1")
        if self.gladstone_dale <= 0:
            raise ValidationError("gladstone_dale must be > 0")


def refractive_index(rho: float | np.ndarray, geometry: BosGeometry):
    """Gladstone-Dale relation: n = G * rho + 1."""
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0):
        raise ValidationError("density must be non-negative")
    out = geometry.gladstone_dale * rho + 1.0
    return float(out) if out.ndim == 0 else out


def deflection_from_density_gradient(grad_rho, geometry: BosGeometry) -> np.ndarray:
    """Refraction angle from a density gradient, integrated over the depth.

    eps = (Z / n_inf) * G * d(rho)/dx, componentwise; accepts a 2-vector or
    arrays broadcast elementwise.
    """
    grad_rho = np.asarray(grad_rho, dtype=np.float64)
    scale = geometry.schlieren_depth / geometry.ambient_index * geometry.gladstone_dale
    return scale * grad_rho


def displacement_from_deflection(eps, geometry: BosGeometry) -> np.ndarray:
    """Image displacement in pixels caused by a small deflection angle.

    dx_m = f * Z_D / (Z_D + Z_A - f) * eps; converted to pixels via the pitch.
    """
    denom = (
        geometry.schlieren_to_background
        + geometry.lens_to_schlieren
        - geometry.focal_length
    )
    if denom <= 0:
        raise ValidationError("Z_D + Z_A - f must be positive")
    eps = np.asarray(eps, dtype=np.float64)
    meters = geometry.focal_length * (geometry.schlieren_to_background / denom) * eps
    return meters / geometry.pixel_pitch


def flow_from_displacement_pair(dx1: VectorField, dx2: VectorField, dt: float) -> VectorField:
    """Optical flow (px/s) from two displacement fields dt seconds apart."""
    if dt <= 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    if dx1.resolution != dx2.resolution:
        raise ValidationError("displacement fields must share resolution")
    return VectorField.from_arrays(
        (dx2.u.values - dx1.u.values) / dt,
        (dx2.v.values - dx1.v.values) / dt,
        units="px/s",
    )


def gradient_of_scalar(q: ScalarField) -> VectorField:
    """Normalized Sobel gradient (unit-slope ramp -> unit gradient), reflect padded."""
    gx, gy = kernels.sobel_xy(np.asarray(q.values, dtype=np.float64))
    return VectorField.from_arrays(gx, gy, units="value/px")


def _diff_matrix_1d(n: int) -> np.ndarray:
    """Central difference /2 with reflect boundaries (boundary rows vanish)."""
    d = np.zeros((n, n))
    for j in range(n):
        jm = abs(j - 1)
        jp = j + 1 if j + 1 < n else 2 * n - 2 - (j + 1)
        d[j, jp] += 0.5
        d[j, jm] -= 0.5
    return d


def _smooth_matrix_1d(n: int) -> np.ndarray:
    """[1, 2, 1]/4 smoothing with reflect boundaries."""
    m = np.zeros((n, n))
    for j in range(n):
        jm = abs(j - 1)
        jp = j + 1 if j + 1 < n else 2 * n - 2 - (j + 1)
        m[j, jm] += 0.25
        m[j, j] += 0.5
        m[j, jp] += 0.25
    return m


def _pencil_basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Generalized eigenbasis of the 1D (difference, smoothing) normal pair.

    Solves D'D u = mu M'M u on the complement of their shared alternating
    null vector; the returned basis U satisfies U' (M'M) U = I.
    """
    d = _diff_matrix_1d(n)
    m = _smooth_matrix_1d(n)
    q = d.T @ d
    t = m.T @ m
    nyquist = (-1.0) ** np.arange(n)
    nyquist /= np.linalg.norm(nyquist)
    complement = np.linalg.svd(np.eye(n) - np.outer(nyquist, nyquist))[0][:, : n - 1]
    mu, u = scipy_eigh(complement.T @ q @ complement, complement.T @ t @ complement)
    return complement @ u, mu


@lru_cache(maxsize=8)
def _poisson_context(h: int, w: int):
    """Per-shape solver data: x/y pencil bases and the null-space projector.

    The gradient operator's null space is spanned by constants plus the
    alternating column/row families (patterns invisible to a central
    difference); the projector removes them via a small pinv'd Gram system.
    """
    basis_x, mu = _pencil_basis(w)
    basis_y, rho = _pencil_basis(h)
    alt_x = (-1.0) ** np.arange(w)
    alt_y = (-1.0) ** np.arange(h)
    n = h + w + 1
    gram = np.zeros((n, n))
    gram[:h, :h] = np.eye(h) * w
    gram[h : h + w, h : h + w] = np.eye(w) * h
    gram[:h, h : h + w] = np.outer(alt_y, alt_x)
    gram[h : h + w, :h] = gram[:h, h : h + w].T
    gram[:h, -1] = alt_x.sum()
    gram[-1, :h] = alt_x.sum()
    gram[h : h + w, -1] = alt_y.sum()
    gram[-1, h : h + w] = alt_y.sum()
    gram[-1, -1] = h * w
    gram_pinv = np.linalg.pinv(gram, rcond=1e-10)
    return basis_x, mu, basis_y, rho, alt_x, alt_y, gram_pinv


def _project_out_null(q: np.ndarray, alt_x, alt_y, gram_pinv) -> np.ndarray:
    h, w = q.shape
    rhs = np.concatenate([q @ alt_x, alt_y @ q, [q.sum()]])
    coef = gram_pinv @ rhs
    f, g, c0 = coef[:h], coef[h : h + w], coef[-1]
    return q - (np.outer(f, alt_x) + np.outer(alt_y, g) + c0)


def poisson_integrate(v: VectorField, mode_floor: float = 1e-9) -> ScalarField:
    """Zero-mean scalar field q minimizing ||grad(q) - v||^2.

    ``grad`` is the same discrete operator as :func:`gradient_of_scalar`, so
    ``poisson_integrate(gradient_of_scalar(q))`` reproduces ``q - mean(q)`` to
    solver precision.  Solved directly: the normal operator is a Kronecker sum
    of banded 1D operators, diagonalized exactly by two cached generalized
    eigendecompositions; gauge modes (eigenvalue sums below ``mode_floor``
    relative to the largest) are set to zero and the operator's null space is
    projected out of the result.
    """
    gx = np.asarray(v.u.values, dtype=np.float64)
    gy = np.asarray(v.v.values, dtype=np.float64)
    h, w = gx.shape
    if h < 2 or w < 2:
        return ScalarField(np.zeros((h, w)))
    b = kernels.sobel_xy_adjoint(np.ascontiguousarray(gx), np.ascontiguousarray(gy))
    basis_x, mu, basis_y, rho, alt_x, alt_y, gram_pinv = _poisson_context(h, w)
    beta = basis_y.T @ b @ basis_x
    denom = rho[:, None] + mu[None, :]
    keep = denom > mode_floor * denom.max()
    coeffs = np.zeros_like(beta)
    coeffs[keep] = beta[keep] / denom[keep]
    q = basis_y @ coeffs @ basis_x.T
    return ScalarField(_project_out_null(q, alt_x, alt_y, gram_pinv))
