"""Second-order smoothness of dose-volume objectives in radiotherapy planning.

Dose fields are non-negative combinations of radial peaks; dose-volume
histograms are computed by level-set quadrature; the package measures how
the volume above a dose level, and penalty objectives built on it, lose
second differentiability where a critical value of the field crosses the
level, and what that does to Newton and BFGS iterations.
"""

from . import _backend
from .dose_model import (
    CriticalPoint,
    Peak,
    PeakFamily,
    evaluate,
    find_critical_points,
    grad_sigma,
    single_peak,
    track_critical_points,
    two_peak,
)
from .errors import (
    BracketInvalidError,
    ConfigError,
    DegenerateCriticalPointError,
    DvhSmoothError,
    FitFailedError,
    IllConditionedStepError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericalDomainError,
    TrackingLostError,
)
from .eud import EudSpec, eud, eud_and_grad, eud_grad_sigma
from .fitting import ExponentFit, loglog_fit
from .geometry import Region
from .histogram import (
    DvhCurve,
    QuadratureSpec,
    dvh_curve,
    local_volume_exponent,
    local_volume_standard,
    volume_above,
    volume_above_mc,
)
from .objective import (
    Constraint,
    ObjectiveSpec,
    Scalar1DObjective,
    make_f1,
    make_f2,
    objective_grad_eud,
    objective_grad_fd,
    objective_value,
)
from .optimizer import QuasiNewtonOptions, Trace, bfgs_run, convergence_classify, newton1d_run, newton1d_step
from .smoothness import (
    LambdaPoint,
    fd_second_derivative,
    holder_exponent,
    lambda_distance,
    locate_lambda_1d,
    step_scaling_probe,
)

BACKEND = _backend.NAME
__version__ = "0.1.0"
