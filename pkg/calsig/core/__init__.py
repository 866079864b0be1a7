from calsig.core.checks import (
    CalsigError,
    CheckReport,
    DegenerateInputError,
    InfeasibleError,
    InvalidInputError,
    SolverError,
    UnboundedError,
    Verdict,
    Violation,
)

from calsig.core.prior import (
    PriorBySum,
    from_bernoulli,
    from_mapping,
    full_info_revenue,
    profile_weight,
    welfare,
)

from calsig.core.marginals import (
    CalibrationReport,
    Convention,
    DiscreteDist,
    LinSysSolution,
    MarginalFamily,
    SplitOrder,
    Thresholds,
    check_calibration_feasible,
    min_secmax,
    optimal_marginals,
    optimal_thresholds,
    solve_linsys,
    split_linsys,
)

from calsig.core.transport import (
    K1Solution,
    TransportPlan,
    check_plan_feasible,
    correlate,
    correlate_general,
    correlate_k1_lp,
    induced_secmax,
    monotone_rearrange,
    plan_from_k1,
    predicted_secmax,
    secmax_upper_bound,
)

from calsig.core.signaling import (
    CalibratedSignaling,
    RegionReport,
    SignalingMeta,
    Variant,
    classify_region,
    conditional_secmax,
    design_optimal,
    full_information,
    revenue,
    symmetrize,
    verify_calibration,
)

from calsig.core.ir import (
    IrMarginalFamily,
    SerratedSequence,
    UtilityReport,
    bidder_surplus,
    design_ir,
    exante_utility,
    ir_conditional_secmax,
    ir_marginals,
    ir_threshold_t0,
    max_valid_epsilon,
    serrated_sequence,
)
