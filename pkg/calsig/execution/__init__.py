from calsig.execution.oracle import (
    GridSpec,
    brute_force_transport,
    grid_lp_optimal,
    scan_marginal_objective,
    verify_suite,
)
from calsig.execution.simulator import SimReport, run
from calsig.execution.sweep import SweepRow, run_sweep
