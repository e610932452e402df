"""Finite-space tools for checking and testing coarsening at random (CAR)."""

from .coarsening import (
    CoarseningJoint,
    apply_S,
    apply_S_star,
    build_joint,
    car_data_density,
    rebase,
    validate_coarsening,
)
from .dist_core import (
    BaseSpace,
    Density,
    Partition,
    SpaceMismatchError,
    kl_divergence,
    kl_partition,
    l1_distance,
    make_density,
    sample_density,
)
from .factorize import ProjectionOptions, car_factorize, em_step, kl_project
from .mechanisms import (
    GridSpec,
    SampleBatch,
    comonotone_current_status,
    current_status,
    missing_data,
    multiplicative_sampler,
    product_coarsening,
    right_censored,
    sample_car,
    sample_joint,
    subset_coarsening,
)
from .polar import bipolar_basis, check_extension, membership_M, polar_M
from .stat_tests import (
    TestReport,
    delta_monotone_check,
    kl_compat_test,
    monotone_density_test,
    product_cell_test,
)

__version__ = "0.1.0"
