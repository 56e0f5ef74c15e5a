"""Event-based background-oriented schlieren toolkit.

Estimates the temporal derivative of a gas density field (and the optical
flow it induces) from event-camera data plus an intensity frame, with a
ground-truthed event simulator, flow metrics, and kymogram velocimetry for
closed-loop verification.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .analysis import (
    Kymogram,
    Metrics,
    build_kymogram,
    compute_metrics,
    detect_slope,
    event_mask,
    velocity_from_slope,
)
from .bos_physics import (
    BosGeometry,
    deflection_from_density_gradient,
    displacement_from_deflection,
    flow_from_displacement_pair,
    gradient_of_scalar,
    poisson_integrate,
    refractive_index,
)
from .core import (
    EmptyWindowError,
    EvbosError,
    Event,
    EventStream,
    Roi,
    ScalarField,
    StreamReport,
    ValidationError,
    VectorField,
    crop,
    slice_events,
    validate_stream,
)
from .estimator import (
    AdamState,
    EstimationResult,
    EstimatorConfig,
    ObjectiveInputs,
    ParamGrid,
    Params,
    adam_step,
    data_term,
    estimate,
    objective,
    objective_gradient,
    predict_increment,
    reg_term,
    upsample_params,
)
from .event_ops import (
    IncrementImage,
    accumulate_increment,
    event_density,
    gaussian_smooth,
    warp_events,
    weight_map,
)
from .simulator import (
    FrameSequence,
    SimConfig,
    render_background,
    simulate_events,
    synth_scene,
    warp_frame,
)

__version__ = "0.1.0"
