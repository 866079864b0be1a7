from loguru import logger

from calsig.core import (
    # Errors and reports
    CalsigError,
    InvalidInputError,
    DegenerateInputError,
    InfeasibleError,
    CheckReport,
    Violation,
    # Priors and marginals
    PriorBySum,
    DiscreteDist,
    MarginalFamily,
    Convention,
    # Transport
    TransportPlan,
    correlate,
    # Signaling
    CalibratedSignaling,
    design_optimal,
    full_information,
    revenue,
    verify_calibration,
    # IR
    design_ir,
    exante_utility,
)

from calsig.execution import (
    GridSpec,
    SimReport,
    verify_suite,
)


__version__ = "0.1.0"

# silent as a library; the CLI re-enables it
logger.disable("calsig")


__all__ = [
    # Version
    "__version__",
    # Core
    "CalsigError",
    "InvalidInputError",
    "DegenerateInputError",
    "InfeasibleError",
    "CheckReport",
    "Violation",
    "PriorBySum",
    "DiscreteDist",
    "MarginalFamily",
    "Convention",
    "TransportPlan",
    "correlate",
    "CalibratedSignaling",
    "design_optimal",
    "full_information",
    "revenue",
    "verify_calibration",
    "design_ir",
    "exante_utility",
    # Execution
    "GridSpec",
    "SimReport",
    "verify_suite",
]
