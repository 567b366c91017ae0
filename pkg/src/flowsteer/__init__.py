"""Training-free velocity-field intervention editing for rectified flows."""

from .analytic import (
    EDIT_NAMES,
    VOCAB_SIZE,
    EditTask,
    GaussianFlow,
    PointMassFlow,
    analytic_edit_model,
    gaussian_velocity,
    make_task_suite,
    point_mass_velocity,
)
from .flow import (
    Condition,
    FlowSample,
    TimeGrid,
    VelocityModel,
    conditional_velocity,
    euler_step,
    fm_loss,
    interpolate,
)
from .intervene import (
    FlowEditor,
    InterventionConfig,
    MaskPair,
    NonFiniteVelocityError,
    Trajectory,
    apply_intervention,
    baseline_sample,
    blend,
    diff_velocity,
    keep_velocity,
    mask_snapshot,
    partition,
    sample,
    similarity,
)
from .metrics import (
    DEFAULT_STRENGTHS,
    MetricError,
    MetricReport,
    StrengthSweep,
    build_sweep,
    delta_smooth,
    dir_score,
    edit_direction_similarity,
    l1_distance,
    l2_distance,
    masked_distance,
    mean_abs_distance,
    psnr,
    report,
    ssim,
)
from .nets import (
    CFGVelocityModel,
    ToyVelocityNet,
    ToyVelocityRegressor,
    TrainConfig,
    backward,
    cfg_velocity,
    load_model,
    save_model,
    train,
)
from .validation import ShapeMismatchError

__version__ = "0.1.0"
