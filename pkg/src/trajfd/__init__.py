"""Trajectory-to-fundamental-diagram toolkit.

Estimates macroscopic speed/density/acceleration fields from vehicle
trajectories on sliding space-time subdomains, builds non-local
density-speed samples labeled by acceleration sign, and fits parametric
speed-density models either by weighted cross-entropy on the non-local
samples or by least squares on the classical local samples.
"""

from .anticipation import (
    LkvSample,
    NlkvSample,
    anticipated_density_field,
    assemble_lkv,
    assemble_nlkv,
)
from .fields import (
    GridSpec,
    MacroField,
    SignField,
    cell_contributions,
    estimate_acceleration_field,
    estimate_vk_fields,
    grid_dims,
    label_signs,
)
from .fitting import (
    DegenerateSampleError,
    FitConfig,
    FitResult,
    compute_omega,
    ece_loss,
    fit_fd,
    lse_loss,
    nll_loss,
    softplus_stable,
)
from .ingest import (
    IngestError,
    TrajectorySchema,
    TrajectorySet,
    VehicleTrajectory,
    parse_trajectories,
    segment_contiguous,
    validate_trajectory,
)
from .models import (
    FdDomainError,
    FdParams,
    deceleration_probability,
    eval_franklin_newell,
    eval_greenberg,
    eval_smulders,
    fd_speed,
    franklin_newell,
    greenberg,
    smulders,
    validate_params,
)

__version__ = "0.1.0"
