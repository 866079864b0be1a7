from calsig.solvers.lp import (
    DenseSimplex,
    LpMethod,
    LpResult,
    solve_lp,
)
