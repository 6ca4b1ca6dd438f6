"""Bessel Poisson two-weight testing toolkit.

Numerics for the Poisson semigroup of the Bessel operator on the half line:
kernel evaluation, the two-weight operator norm between discrete measures,
forward and backward testing constants, and a verification harness for the
quantitative steps of the testing-condition argument (maximum principle,
Whitney structure, weak (1,1) maximal bound, Carleson packing, and the
level-set energy decomposition).
"""

from .geometry import (
    CarlesonBox,
    DiscreteMeasure1D,
    DiscreteMeasure2D,
    Interval,
    MeasureFormatError,
    dilate,
    general_interval,
    hat,
    load_measure_file,
    mass_1d,
    mass_2d,
    save_measure_file,
    tilde,
)
from .kernel import (
    BesselParam,
    KernelQuery,
    QuadratureAccuracyError,
    check_kernel_upper_bound,
    eval_kernel,
    eval_kernel_batch,
    fit_upper_bound_constants,
    m_lambda,
)
from .dyadic import (
    ComplementEmptyError,
    DyadicInterval,
    MaximalResult,
    OpenSet,
    StoppingFamily,
    WhitneyCollection,
    WhitneyReport,
    carleson_packing_check,
    carleson_ratio,
    check_nesting,
    maximal_function,
    principal_intervals,
    weak_11_check,
    whitney_decompose,
    whitney_properties,
)
from .operators import (
    NormResult,
    TestingResult,
    TwoWeightInstance,
    apply_adjoint,
    apply_forward,
    backward_testing,
    forward_testing,
    interval_family,
    operator_norm,
    run_testing,
)
from .harness import (
    ExperimentConfig,
    GeneratedInstance,
    GridTooCoarseError,
    TestReport,
    check_box_comparability,
    check_max_principle,
    decompose_energy,
    default_level_shift,
    gen_instance,
    mp_constant,
    run_equivalence_suite,
    sample_kernel_comparability,
)

__version__ = "0.1.0"
