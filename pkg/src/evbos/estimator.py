"""Joint estimation of the density-rate field and alignment warp from events.

Given one window of events and the concurrent (or reference) intensity frame,
the estimator minimizes a composite objective over a coarse-to-fine patch
pyramid with Adam:

* data term: L1 distance between L2-normalized measured and predicted
  brightness-increment images (normalization removes the unknown contrast
  sensitivity, so only the *pattern* of the increment constrains the flow);
* regularizers: event-density-weighted total variation of the flow plus an L1
  penalty on the per-pixel translation warp.

Two parameterizations are supported: a scalar patch grid whose Sobel gradient
is the flow ("poisson", the physically-motivated default) and a direct
2-vector flow grid ("flow").
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .bos_physics import gradient_of_scalar
from .core import (
    LOG_OFFSET,
    EmptyWindowError,
    EventStream,
    ScalarField,
    ValidationError,
    VectorField,
)
from .event_ops import accumulate_increment, event_density, gaussian_smooth, weight_map

#: Norm floor below which a field is treated as exactly zero by the
#: data-term normalization.
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatorConfig:
    """All optimization hyperparameters; defaults follow the reference setup.

    ``contrast`` describes the data, not the optimizer: it is the sensor's
    contrast sensitivity, used only to calibrate the magnitude of the output
    flow (see :func:`estimate`).  Leave it at 1.0 when unknown; the flow is
    then reported in px-per-unit-contrast units.
    """

    lambda1: float = 0.5
    lambda2: float = 0.1
    alpha: float = 0.95
    sigma_increment: float = 2.0
    sigma_density: float = 5.0
    iterations: int = 600
    lr: float = 0.05
    lr_decay: float = 0.1
    levels: int = 4
    coarsest_patch: int = 64
    window: float = 1.0 / 120.0
    parameterization: str = "poisson"
    seed: int = 0
    contrast: float = 1.0

    def validate(self) -> None:
        if self.contrast <= 0:
            raise ValidationError("contrast must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("lambda1 and lambda2 must be >= 0")
        if not (0.0 <= self.alpha < 1.0):
            raise ValidationError("alpha must be in [0, 1)")
        if self.sigma_increment <= 0 or self.sigma_density <= 0:
            raise ValidationError("smoothing sigmas must be > 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.lr <= 0 or not (0.0 < self.lr_decay <= 1.0):
            raise ValidationError("lr must be > 0 and lr_decay in (0, 1]")
        if self.levels < 1:
            raise ValidationError("levels must be >= 1")
        if self.coarsest_patch < 1 or self.coarsest_patch % (1 << (self.levels - 1)) != 0:
            raise ValidationError(
                "coarsest_patch must be a positive multiple of 2^(levels-1)"
            )
        if self.window <= 0:
            raise ValidationError("window must be > 0 seconds")
        if self.parameterization not in ("poisson", "flow"):
            raise ValidationError(
                f"parameterization must be 'poisson' or 'flow', got {self.parameterization!r}"
            )

    def patch_sizes(self) -> list[int]:
        return [self.coarsest_patch >> level for level in range(self.levels)]


@dataclass(frozen=True)
class ParamGrid:
    """Per-patch parameter grid: scalar (gh, gw) or 2-vector (gh, gw, 2)."""

    values: np.ndarray
    patch_size: int
    level: int = 0

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim not in (2, 3) or (vals.ndim == 3 and vals.shape[2] != 2):
            raise ValidationError(
                f"grid must be (gh, gw) or (gh, gw, 2), got shape {vals.shape}"
            )
        if self.patch_size < 1:
            raise ValidationError("patch_size must be >= 1")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class Params:
    """One pyramid level's unknowns: primary grid plus the translation grid."""

    p: ParamGrid
    q: ParamGrid | None = None
    v: ParamGrid | None = None

    def __post_init__(self) -> None:
        if (self.q is None) == (self.v is None):
            raise ValidationError("exactly one of q (poisson) or v (flow) must be set")


@dataclass(frozen=True)
class ObjectiveInputs:
    """Precomputed per-window inputs: log frame, smoothed increment, TV weight."""

    frame_log: ScalarField
    increment: ScalarField
    weight: ScalarField


@dataclass(frozen=True)
class EstimationResult:
    q: ScalarField | None
    v: VectorField
    p: VectorField
    loss_trace: tuple[tuple[float, ...], ...]
    mask: np.ndarray


def _grid_shape(resolution: tuple[int, int], patch: int) -> tuple[int, int]:
    w, h = resolution
    return (math.ceil(h / patch), math.ceil(w / patch))


def upsample_params(grid: ParamGrid, target_resolution: tuple[int, int]):
    """Bilinearly interpolate a patch grid to per-pixel density.

    Grid nodes sit at patch centers; values are clamped beyond the outermost
    nodes, so a constant grid yields a constant field.
    """
    w, h = target_resolution
    gh, gw = _grid_shape(target_resolution, grid.patch_size)
    if grid.values.shape[:2] != (gh, gw):
        raise ValidationError(
            f"grid shape {grid.values.shape[:2]} does not match "
            f"ceil({target_resolution} / {grid.patch_size}) = {(gh, gw)}"
        )
    if grid.values.ndim == 2:
        vals = np.ascontiguousarray(grid.values)
        return ScalarField(kernels.upsample_bilinear(vals, grid.patch_size, h, w))
    u = kernels.upsample_bilinear(
        np.ascontiguousarray(grid.values[:, :, 0]), grid.patch_size, h, w
    )
    v = kernels.upsample_bilinear(
        np.ascontiguousarray(grid.values[:, :, 1]), grid.patch_size, h, w
    )
    return VectorField.from_arrays(u, v)


def predict_increment(
    frame_log: ScalarField, v: VectorField, p: VectorField, window: float
) -> ScalarField:
    """Predicted brightness increment: -grad(L) at the warped position, dot v.

    ``v`` is in px per window (it already carries the window duration; the
    ``window`` argument is kept for unit bookkeeping only).  Out-of-bounds
    warped samples use reflect padding.
    """
    if window <= 0:
        raise ValidationError("window must be > 0 seconds")
    if frame_log.resolution != v.resolution or v.resolution != p.resolution:
        raise ValidationError("frame, flow and translation resolutions must match")
    gx, gy = kernels.sobel_xy(frame_log.values)
    h, wid = frame_log.values.shape
    xx, yy = np.meshgrid(
        np.arange(wid, dtype=np.float64), np.arange(h, dtype=np.float64)
    )
    sx = np.ascontiguousarray(xx + p.u.values)
    sy = np.ascontiguousarray(yy + p.v.values)
    gxs, gys, _, _, _, _ = kernels.sample_gradient_bilinear(gx, gy, sx, sy)
    return ScalarField(-(gxs * v.u.values + gys * v.v.values))


def _normalized(a: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(a))
    if n < NORM_FLOOR:
        return np.zeros_like(a)
    return a / n


def data_term(pred: ScalarField, meas: ScalarField) -> float:
    """L1 distance between L2-normalized increment images.

    A field whose L2 norm is below 1e-12 is treated as exactly zero.
    """
    if pred.resolution != meas.resolution:
        raise ValidationError("increment images must share resolution")
    return float(np.sum(np.abs(_normalized(pred.values) - _normalized(meas.values))))


def reg_term(
    v: VectorField, p: VectorField, w: ScalarField, lambda1: float, lambda2: float
) -> float:
    """Weighted total variation of the flow plus L1 penalty on the translation.

    Forward differences; each difference is weighted at its base pixel.
    """
    if v.resolution != p.resolution or v.resolution != w.resolution:
        raise ValidationError("fields must share resolution")
    wv = w.values
    tv = 0.0
    for comp in (v.u.values, v.v.values):
        tv += float(np.sum(wv[:, :-1] * np.abs(comp[:, 1:] - comp[:, :-1])))
        tv += float(np.sum(wv[:-1, :] * np.abs(comp[1:, :] - comp[:-1, :])))
    l1p = float(np.sum(np.abs(p.u.values)) + np.sum(np.abs(p.v.values)))
    return lambda1 * tv + lambda2 * l1p


@dataclass
class _Workspace:
    """Per-window constants shared by every objective evaluation."""

    gx_img: np.ndarray
    gy_img: np.ndarray
    meas_n: np.ndarray
    wmap: np.ndarray
    xx: np.ndarray
    yy: np.ndarray
    resolution: tuple[int, int]


def _make_workspace(inputs: ObjectiveInputs) -> _Workspace:
    if (
        inputs.frame_log.resolution != inputs.increment.resolution
        or inputs.frame_log.resolution != inputs.weight.resolution
    ):
        raise ValidationError("objective inputs must share resolution")
    gx, gy = kernels.sobel_xy(inputs.frame_log.values)
    h, w = inputs.frame_log.values.shape
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return _Workspace(
        gx_img=gx,
        gy_img=gy,
        meas_n=_normalized(inputs.increment.values),
        wmap=np.asarray(inputs.weight.values),
        xx=np.ascontiguousarray(xx),
        yy=np.ascontiguousarray(yy),
        resolution=inputs.frame_log.resolution,
    )


def _params_to_dict(params: dict | Params) -> tuple[dict, int, str]:
    if isinstance(params, Params):
        patch = params.p.patch_size
        out = {
            "px": np.ascontiguousarray(params.p.values[:, :, 0]),
            "py": np.ascontiguousarray(params.p.values[:, :, 1]),
        }
        if params.q is not None:
            if params.q.patch_size != patch:
                raise ValidationError("q and p grids must share the patch size")
            out["q"] = np.ascontiguousarray(params.q.values)
            return out, patch, "poisson"
        assert params.v is not None
        if params.v.patch_size != patch:
            raise ValidationError("v and p grids must share the patch size")
        out["vx"] = np.ascontiguousarray(params.v.values[:, :, 0])
        out["vy"] = np.ascontiguousarray(params.v.values[:, :, 1])
        return out, patch, "flow"
    raise ValidationError("params must be a Params instance")


def _forward_fields(pd: dict, patch: int, mode: str, ws: _Workspace):
    """Per-pixel fields for the current grids: flow, translation, warped frame
    gradients (with position derivatives), and the predicted increment."""
    w, h = ws.resolution
    px = kernels.upsample_bilinear(pd["px"], patch, h, w)
    py = kernels.upsample_bilinear(pd["py"], patch, h, w)
    if mode == "poisson":
        q_pix = kernels.upsample_bilinear(pd["q"], patch, h, w)
        u, vc = kernels.sobel_xy(q_pix)
    else:
        u = kernels.upsample_bilinear(pd["vx"], patch, h, w)
        vc = kernels.upsample_bilinear(pd["vy"], patch, h, w)
    sx = ws.xx + px
    sy = ws.yy + py
    samples = kernels.sample_gradient_bilinear(ws.gx_img, ws.gy_img, sx, sy)
    pred = -(samples[0] * u + samples[1] * vc)
    return u, vc, px, py, samples, pred


def _forward_backward(
    pd: dict,
    patch: int,
    mode: str,
    ws: _Workspace,
    lambda1: float,
    lambda2: float,
    want_grad: bool,
):
    """Objective value and (optionally) its gradient w.r.t. every grid entry.

    All absolute-value terms use the sign subgradient with sign(0) = 0.  When
    the predicted increment is numerically the zero field its normalized
    version is the zero field, and the data gradient is defined as the
    residual-sign field at unit scale: a finite descent kick that lets Adam
    leave the all-zero initialization (otherwise a dead stationary point)
    without distorting its moment estimates.
    """
    w, h = ws.resolution
    gh, gw = _grid_shape(ws.resolution, patch)
    u, vc, px, py, samples, pred = _forward_fields(pd, patch, mode, ws)
    gxs, gys, gxdx, gxdy, gydx, gydy = samples
    norm_pred = float(np.linalg.norm(pred))
    if norm_pred < NORM_FLOOR:
        pred_n = np.zeros_like(pred)
        inv_norm = 1.0
    else:
        pred_n = pred / norm_pred
        inv_norm = 1.0 / norm_pred
    resid = pred_n - ws.meas_n
    e_data = float(np.sum(np.abs(resid)))

    wv = ws.wmap
    du_x = u[:, 1:] - u[:, :-1]
    du_y = u[1:, :] - u[:-1, :]
    dv_x = vc[:, 1:] - vc[:, :-1]
    dv_y = vc[1:, :] - vc[:-1, :]
    e_tv = float(
        np.sum(wv[:, :-1] * np.abs(du_x))
        + np.sum(wv[:-1, :] * np.abs(du_y))
        + np.sum(wv[:, :-1] * np.abs(dv_x))
        + np.sum(wv[:-1, :] * np.abs(dv_y))
    )
    e_p = float(np.sum(np.abs(px)) + np.sum(np.abs(py)))
    energy = e_data + lambda1 * e_tv + lambda2 * e_p
    if not want_grad:
        return energy, None

    s = np.sign(resid)
    if norm_pred < NORM_FLOOR:
        dpred = s * inv_norm
    else:
        dpred = (s - pred_n * float(np.sum(s * pred_n))) * inv_norm

    du = -(gxs * dpred)
    dvc = -(gys * dpred)
    tx = lambda1 * wv[:, :-1] * np.sign(du_x)
    du[:, 1:] += tx
    du[:, :-1] -= tx
    ty = lambda1 * wv[:-1, :] * np.sign(du_y)
    du[1:, :] += ty
    du[:-1, :] -= ty
    tx = lambda1 * wv[:, :-1] * np.sign(dv_x)
    dvc[:, 1:] += tx
    dvc[:, :-1] -= tx
    ty = lambda1 * wv[:-1, :] * np.sign(dv_y)
    dvc[1:, :] += ty
    dvc[:-1, :] -= ty

    dpx = -dpred * (u * gxdx + vc * gydx) + lambda2 * np.sign(px)
    dpy = -dpred * (u * gxdy + vc * gydy) + lambda2 * np.sign(py)

    grads = {
        "px": kernels.upsample_bilinear_adjoint(np.ascontiguousarray(dpx), patch, gh, gw),
        "py": kernels.upsample_bilinear_adjoint(np.ascontiguousarray(dpy), patch, gh, gw),
    }
    if mode == "poisson":
        dq_pix = kernels.sobel_xy_adjoint(
            np.ascontiguousarray(du), np.ascontiguousarray(dvc)
        )
        grads["q"] = kernels.upsample_bilinear_adjoint(
            np.ascontiguousarray(dq_pix), patch, gh, gw
        )
    else:
        grads["vx"] = kernels.upsample_bilinear_adjoint(
            np.ascontiguousarray(du), patch, gh, gw
        )
        grads["vy"] = kernels.upsample_bilinear_adjoint(
            np.ascontiguousarray(dvc), patch, gh, gw
        )
    return energy, grads


def objective(params: Params, inputs: ObjectiveInputs, config: EstimatorConfig) -> float:
    """Composite objective: data term plus regularizers, on per-pixel fields."""
    config.validate()
    pd, patch, mode = _params_to_dict(params)
    ws = _make_workspace(inputs)
    energy, _ = _forward_backward(
        pd, patch, mode, ws, config.lambda1, config.lambda2, want_grad=False
    )
    return energy


def objective_gradient(
    params: Params, inputs: ObjectiveInputs, config: EstimatorConfig
) -> Params:
    """Gradient of :func:`objective` w.r.t. every patch parameter."""
    config.validate()
    pd, patch, mode = _params_to_dict(params)
    ws = _make_workspace(inputs)
    _, grads = _forward_backward(
        pd, patch, mode, ws, config.lambda1, config.lambda2, want_grad=True
    )
    p_grad = np.stack([grads["px"], grads["py"]], axis=-1)
    if mode == "poisson":
        return Params(
            p=ParamGrid(p_grad, patch), q=ParamGrid(grads["q"], patch), v=None
        )
    v_grad = np.stack([grads["vx"], grads["vy"]], axis=-1)
    return Params(p=ParamGrid(p_grad, patch), q=None, v=ParamGrid(v_grad, patch))


@dataclass(frozen=True)
class AdamState:
    """Parameters plus Adam moments; ``step`` counts applied updates."""

    params: dict
    m: dict
    v: dict
    step: int = 0

    @staticmethod
    def init(params: dict) -> "AdamState":
        return AdamState(
            params={k: np.array(a, dtype=np.float64) for k, a in params.items()},
            m={k: np.zeros_like(a, dtype=np.float64) for k, a in params.items()},
            v={k: np.zeros_like(a, dtype=np.float64) for k, a in params.items()},
            step=0,
        )


def adam_step(
    state: AdamState,
    grad: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update; returns the new state (inputs untouched)."""
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for key, theta in state.params.items():
        g = grad[key]
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[key] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[key] = m
        new_v[key] = v
    return AdamState(new_params, new_m, new_v, t)


def _resample_grid(
    old: np.ndarray, old_patch: int, new_patch: int, resolution: tuple[int, int]
) -> np.ndarray:
    """Evaluate the old grid's interpolant at the new grid's node centers."""
    gh, gw = _grid_shape(resolution, new_patch)
    ogh, ogw = old.shape
    cx = (np.arange(gw) + 0.5) * new_patch - 0.5
    cy = (np.arange(gh) + 0.5) * new_patch - 0.5
    gx = np.clip((cx + 0.5) / old_patch - 0.5, 0.0, ogw - 1)
    gy = np.clip((cy + 0.5) / old_patch - 0.5, 0.0, ogh - 1)
    x0 = np.floor(gx).astype(np.intp)
    y0 = np.floor(gy).astype(np.intp)
    fx = gx - x0
    fy = gy - y0
    x1 = np.minimum(x0 + 1, ogw - 1)
    y1 = np.minimum(y0 + 1, ogh - 1)
    g00 = old[y0[:, None], x0[None, :]]
    g01 = old[y0[:, None], x1[None, :]]
    g10 = old[y1[:, None], x0[None, :]]
    g11 = old[y1[:, None], x1[None, :]]
    top = g00 + fx[None, :] * (g01 - g00)
    bot = g10 + fx[None, :] * (g11 - g10)
    return top + fy[:, None] * (bot - top)


def _lr_schedule(config: EstimatorConfig) -> np.ndarray:
    n = config.iterations
    if n == 1:
        return np.array([config.lr])
    exponents = np.arange(n, dtype=np.float64) / (n - 1)
    return config.lr * config.lr_decay**exponents


def frame_to_log(frame: ScalarField) -> ScalarField:
    """Linear intensity in [0, 1] to log domain, guarding dark pixels."""
    return ScalarField(np.log(frame.values + LOG_OFFSET))


def estimate(
    events: EventStream, frame: ScalarField, config: EstimatorConfig
) -> EstimationResult:
    """Run the full coarse-to-fine estimation for one event window.

    ``events`` is the window's slice (callers cut the stream beforehand;
    ``config.window`` states the duration it represents).  ``frame`` is the
    linear-intensity frame at the window start.  Per level, parameters are
    initialized from the previous level (level 0: zero translation/flow,
    random density-rate grid), refined with ``config.iterations`` Adam steps
    under a geometrically decaying learning rate, and the best-objective
    iterate is kept.  Each level's loss trace holds the objective at every
    iterate followed by the objective of the retained parameters, so its last
    entry is its minimum.

    The normalized data term determines the flow only up to a global scale
    (it cancels the unknown contrast sensitivity), so the reported fields are
    calibrated afterwards: the predicted increment of the converged pattern is
    least-squares matched against the measured one, using ``config.contrast``
    to convert polarity sums into log-intensity units.  With the default
    contrast of 1.0 the magnitude is in px-per-unit-contrast.
    """
    config.validate()
    if events.resolution != frame.resolution:
        raise ValidationError(
            f"event resolution {events.resolution} != frame resolution {frame.resolution}"
        )
    if len(events) == 0:
        raise EmptyWindowError("empty window: no events in the estimation interval")

    resolution = frame.resolution
    w, h = resolution
    increment = accumulate_increment(events, 1.0, resolution)
    meas = gaussian_smooth(increment.field, config.sigma_increment)
    density = event_density(events, config.sigma_density, resolution)
    wmap = weight_map(density, config.alpha)
    inputs = ObjectiveInputs(frame_log=frame_to_log(frame), increment=meas, weight=wmap)
    ws = _make_workspace(inputs)

    rng = np.random.default_rng(config.seed)
    mode = config.parameterization
    lrs = _lr_schedule(config)

    pd: dict = {}
    prev_patch = 0
    traces: list[tuple[float, ...]] = []
    for level, patch in enumerate(config.patch_sizes()):
        gh, gw = _grid_shape(resolution, patch)
        if level == 0:
            pd = {
                "px": np.zeros((gh, gw)),
                "py": np.zeros((gh, gw)),
            }
            if mode == "poisson":
                pd["q"] = rng.uniform(-1.0, 1.0, size=(gh, gw))
            else:
                pd["vx"] = np.zeros((gh, gw))
                pd["vy"] = np.zeros((gh, gw))
        else:
            pd = {
                k: _resample_grid(a, prev_patch, patch, resolution)
                for k, a in pd.items()
            }

        state = AdamState.init(pd)
        best_energy = math.inf
        best_params = state.params
        trace: list[float] = []
        for it in range(config.iterations):
            energy, grads = _forward_backward(
                state.params, patch, mode, ws, config.lambda1, config.lambda2, True
            )
            trace.append(energy)
            if energy < best_energy:
                best_energy = energy
                best_params = {k: a.copy() for k, a in state.params.items()}
            state = adam_step(state, grads, float(lrs[it]))
        trace.append(best_energy)
        traces.append(tuple(trace))
        pd = best_params
        prev_patch = patch

    # magnitude calibration: the objective is blind to a global rescaling of
    # the flow, so fit the one free scalar against the measured increment
    # (smoothing the prediction first so both sides share a bandwidth)
    _, _, _, _, _, pred = _forward_fields(pd, prev_patch, mode, ws)
    pred_sm = gaussian_smooth(ScalarField(pred), config.sigma_increment).values
    denom = float(np.sum(pred_sm * pred_sm))
    if denom > NORM_FLOOR:
        scale = config.contrast * float(np.sum(pred_sm * meas.values)) / denom
    else:
        scale = 0.0

    px = kernels.upsample_bilinear(np.ascontiguousarray(pd["px"]), prev_patch, h, w)
    py = kernels.upsample_bilinear(np.ascontiguousarray(pd["py"]), prev_patch, h, w)
    p_field = VectorField.from_arrays(px, py, units="px")
    if mode == "poisson":
        q_pix = scale * kernels.upsample_bilinear(
            np.ascontiguousarray(pd["q"]), prev_patch, h, w
        )
        q_field = ScalarField(q_pix - q_pix.mean())
        v_field = gradient_of_scalar(q_field)
        v_field = VectorField(v_field.u, v_field.v, units="px/window")
    else:
        q_field = None
        u = kernels.upsample_bilinear(np.ascontiguousarray(pd["vx"]), prev_patch, h, w)
        vc = kernels.upsample_bilinear(np.ascontiguousarray(pd["vy"]), prev_patch, h, w)
        v_field = VectorField.from_arrays(scale * u, scale * vc, units="px/window")

    flat = events.y.astype(np.intp) * w + events.x.astype(np.intp)
    mask = (np.bincount(flat, minlength=w * h) > 0).reshape(h, w)
    return EstimationResult(
        q=q_field, v=v_field, p=p_field, loss_trace=tuple(traces), mask=mask
    )
