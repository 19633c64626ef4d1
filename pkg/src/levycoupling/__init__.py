"""Coupling and total-variation tools for random walks, compound Poisson and Levy processes."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BudgetExceeded,
    CriterionFailed,
    DegenerateOverlap,
    DensityRotationUnsupported,
    DimensionMismatch,
    EmptyTruncation,
    IncompatibleGrids,
    InsufficientData,
    LevyCouplingError,
    SchemaError,
    SnapError,
    ZeroDisplacement,
    ZeroMass,
)
from .measure import (  # noqa: E402
    AtomicMeasure,
    GridDensity,
    MixedMeasure,
    add,
    atoms,
    convolution_power,
    convolve,
    dirac,
    grid_density,
    jordan,
    meet,
    normalize,
    rotate_to_e1,
    scale,
    shift,
    truncate_levy,
    tv_distance,
    uniform,
    zero_measure,
)
from .semigroup import (  # noqa: E402
    SemigroupSeries,
    build_series,
    cp_transition,
    cp_tv,
    poisson_tail,
    poisson_weights,
    series_tv_bound,
    truncation_order,
)
from .coupling import (  # noqa: E402
    CENSORED,
    MinekaStepLaw,
    build_mineka,
    chained_tv_bound,
    exact_first_passage,
    sample_t_l,
    sample_t_s,
    simulate_t_l,
    simulate_t_s,
    subordinated_tail,
)
from .criteria import (  # noqa: E402
    CriterionReport,
    LevyTriplet,
    Verdict,
    check_th22,
    decide_coupling_property,
    eta0,
)
from .bounds import (  # noqa: E402
    RateFit,
    couplingo2_bound,
    fit_rate,
    jensen_chain_check,
    th2_bound,
)
