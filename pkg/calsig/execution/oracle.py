"""
Independent brute-force checks of the constructions.

- grid_lp_optimal: the whole signaling problem as one LP over a bid grid (n <= 3)
- brute_force_transport: best coupling of a marginal pair by LP over joint atoms
- scan_marginal_objective: grid scan plus bounded refinement of the 1-D marginal program
- verify_suite: runs all of the above against a prior (and optionally a bundle)
"""

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from loguru import logger
from scipy import optimize, sparse

from calsig.core.checks import CheckReport, InvalidInputError, Violation
from calsig.core.marginals import (
    Convention,
    DiscreteDist,
    MarginalFamily,
    check_calibration_feasible,
    linsys_objective,
    min_secmax,
    solve_linsys,
)
from calsig.core.prior import PriorBySum, profile_weight
from calsig.core.signaling import (
    CalibratedSignaling,
    design_optimal,
    revenue,
    verify_calibration,
)
from calsig.core.transport import check_plan_feasible, correlate, correlate_general
from calsig.solvers.lp import LpMethod, solve_lp

GRID_MAX_N = 3
GRID_MAX_POINTS = 12
JOINT_MAX_ATOMS = 200_000
SCAN_MIN_RESOLUTION = 1000


@dataclass(frozen=True)
class GridSpec:
    """Sorted, de-duplicated bid grid containing 0 and 1."""
    points: tuple[float, ...]

    def __post_init__(self) -> None:
        pts = self.points
        if not pts or pts[0] != 0.0 or pts[-1] != 1.0:
            raise InvalidInputError("grid must contain 0 and 1")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise InvalidInputError("grid must be strictly increasing")
        if any(p < 0.0 or p > 1.0 for p in pts):
            raise InvalidInputError("grid points must lie in [0, 1]")

    @classmethod
    def with_points(cls, points: Iterable[float]) -> "GridSpec":
        """Sort, de-duplicate and add the endpoints."""
        pts = sorted({0.0, 1.0} | {float(p) for p in points})
        merged: list[float] = []
        for p in pts:
            if not merged or p - merged[-1] > 1e-12:
                merged.append(p)
        merged[-1] = 1.0
        return cls(tuple(merged))

    @classmethod
    def uniform(cls, m: int, extra: Iterable[float] = ()) -> "GridSpec":
        return cls.with_points(list(np.linspace(0.0, 1.0, m)) + list(extra))

    def __len__(self) -> int:
        return len(self.points)


def grid_lp_optimal(
    prior: PriorBySum, grid: GridSpec, method: LpMethod = LpMethod.HIGHS
) -> float:
    """
    Best revenue of any calibrated signaling whose bids lie on the grid.

    Variables pi(x | o) for every outcome profile o and grid bid profile x.
    Each bidder's click mass at a grid value equals the value times its
    total mass there; each pi(. | o) is a distribution.
    """
    n = prior.n
    if n > GRID_MAX_N:
        raise InvalidInputError(f"grid LP is limited to n <= {GRID_MAX_N}, got {n}")
    if len(grid) > GRID_MAX_POINTS:
        raise InvalidInputError(f"grid LP is limited to {GRID_MAX_POINTS} points")

    g = np.asarray(grid.points)
    idx = np.asarray(list(itertools.product(range(len(g)), repeat=n)))
    bids = g[idx]
    second = np.sort(bids, axis=1)[:, -2]
    profiles = list(itertools.product((0, 1), repeat=n))
    nx = len(idx)
    nv = len(profiles) * nx

    c = np.zeros(nv)
    eq_rows, eq_cols, eq_data = [], [], []
    n_cal = n * len(g)
    for p, o in enumerate(profiles):
        lam = profile_weight(prior, sum(o))
        cols = p * nx + np.arange(nx)
        c[cols] = lam * second
        if lam > 0.0:
            for i in range(n):
                eq_rows.append(i * len(g) + idx[:, i])
                eq_cols.append(cols)
                eq_data.append(lam * (o[i] - bids[:, i]))
        eq_rows.append(np.full(nx, n_cal + p))
        eq_cols.append(cols)
        eq_data.append(np.ones(nx))
    b_eq = np.concatenate([np.zeros(n_cal), np.ones(len(profiles))])
    A_eq = sparse.csr_matrix(
        (np.concatenate(eq_data), (np.concatenate(eq_rows), np.concatenate(eq_cols))),
        shape=(n_cal + len(profiles), nv),
    )
    res = solve_lp(c, A_eq=A_eq, b_eq=b_eq, method=method, maximize=True)
    logger.info("grid lp n={} |grid|={}: {} variables, value {}", n, len(g), nv, res.objective)
    return res.objective


def brute_force_transport(
    k: int,
    f1: Optional[DiscreteDist],
    f0: Optional[DiscreteDist],
    n: int,
    method: LpMethod = LpMethod.HIGHS,
) -> float:
    """Maximum expected second-highest bid over all couplings, one variable per joint atom."""
    dists = [f1 if i < k else f0 for i in range(n)]
    if any(d is None for d in dists):
        raise InvalidInputError("a marginal is missing for this k")
    supports = [np.asarray(d.support) for d in dists]  # type: ignore[union-attr]
    size = math.prod(len(s) for s in supports)
    if size > JOINT_MAX_ATOMS:
        raise InvalidInputError(f"joint support has {size} atoms (limit {JOINT_MAX_ATOMS})")

    idx = np.asarray(list(itertools.product(*[range(len(s)) for s in supports])))
    bids = np.column_stack([supports[i][idx[:, i]] for i in range(n)])
    second = np.sort(bids, axis=1)[:, -2]

    rows, cols, b_eq = [], [], []
    offset = 0
    for i, d in enumerate(dists):
        rows.append(offset + idx[:, i])
        cols.append(np.arange(size))
        b_eq.extend(d.probs)  # type: ignore[union-attr]
        offset += len(supports[i])
    A_eq = sparse.csr_matrix(
        (np.ones(size * n), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, size)
    )
    res = solve_lp(second, A_eq=A_eq, b_eq=np.asarray(b_eq), method=method, maximize=True)
    return res.objective


@dataclass
class ScanResult:
    x_best: float
    value: float
    x_closed_form: float
    matches: bool
    convention: Convention

    def to_dict(self) -> dict:
        return {
            "x_best": self.x_best,
            "value": self.value,
            "x_closed_form": self.x_closed_form,
            "matches": self.matches,
            "convention": self.convention.value,
        }


def closed_form_x(prior: PriorBySum, convention: Convention) -> float:
    big_a = sum((k - 2) * prior[k] for k in range(2, prior.n + 1))
    if convention == Convention.APPENDIX:
        return solve_linsys(prior).x_star
    lam0, lam1 = prior[0], prior[1]
    if lam0 + lam1 <= 0.0:
        return 0.0
    return min(max(lam1 * (big_a - lam0) / (lam0 + lam1), 0.0), big_a)


def scan_marginal_objective(
    prior: PriorBySum,
    resolution: int = SCAN_MIN_RESOLUTION,
    convention: Convention = Convention.APPENDIX,
) -> ScanResult:
    if resolution < SCAN_MIN_RESOLUTION:
        raise InvalidInputError(f"resolution must be at least {SCAN_MIN_RESOLUTION}")
    big_a = sum((k - 2) * prior[k] for k in range(2, prior.n + 1))
    x_closed = closed_form_x(prior, convention)
    if big_a <= 0.0:
        value = linsys_objective(prior, 0.0, convention)
        return ScanResult(0.0, value, x_closed, abs(x_closed) <= 1e-5, convention)

    xs = np.linspace(0.0, big_a, resolution + 1)
    values = np.asarray([linsys_objective(prior, float(x), convention) for x in xs])
    i = int(np.argmax(values))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    refined = optimize.minimize_scalar(
        lambda x: -linsys_objective(prior, float(x), convention),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    x_best, value = float(xs[i]), float(values[i])
    if -refined.fun >= value:
        x_best, value = float(refined.x), float(-refined.fun)
    return ScanResult(x_best, value, x_closed, abs(x_best - x_closed) <= 1e-5, convention)


# Caption marginals of the worked k = 2, n = 4 coupling example
REFERENCE_F1 = DiscreteDist((0.2, 0.8, 1.0), (0.2, 0.4, 0.4))
REFERENCE_F0 = DiscreteDist((0.0, 0.2, 0.8), (0.6, 0.2, 0.2))


def reference_transport_check(tol: float = 1e-9) -> CheckReport:
    """The k = 2, n = 4 worked example: threshold 0.8, value 0.88."""
    plan = correlate_general(2, REFERENCE_F1, REFERENCE_F0, 4)
    feasible = check_plan_feasible(plan, 2, REFERENCE_F1, REFERENCE_F0, tol)
    t = min_secmax(2, REFERENCE_F1, REFERENCE_F0, 4)
    gap = max(abs(plan.expected_secmax() - 0.88), abs(t - 0.8))
    violations = list(feasible.violations)
    if gap > tol:
        violations.append(Violation(
            rule_id="ORC-002",
            severity="error",
            message=f"reference coupling value {plan.expected_secmax():.12g}, threshold {t}",
        ))
    return CheckReport(
        name="reference_transport",
        passed=not violations,
        worst=max(gap, feasible.worst),
        tolerance=tol,
        violations=violations,
    )


@dataclass
class SuiteOptions:
    tol: float = 1e-9
    grid_tol: float = 1e-6
    grid_points: int = 5
    scan_resolution: int = SCAN_MIN_RESOLUTION
    method: LpMethod = LpMethod.SIMPLEX


def _value_check(name: str, got: float, want: float, tol: float) -> CheckReport:
    gap = abs(got - want)
    violations = []
    if gap > tol:
        violations.append(Violation(
            rule_id="ORC-001",
            severity="error",
            message=f"{name}: {got:.12g} vs oracle {want:.12g}",
        ))
    return CheckReport(
        name=name,
        passed=gap <= tol,
        worst=gap,
        tolerance=tol,
        violations=violations,
        details={"value": got, "oracle": want},
    )


def check_bundle(
    sig: CalibratedSignaling, family: Optional[MarginalFamily], tol: float
) -> list[CheckReport]:
    """Re-check a loaded signaling: calibration, plan feasibility, stored revenue."""
    reports = [verify_calibration(sig, tol)]
    if family is not None:
        reports.append(check_calibration_feasible(sig.prior, family, tol))
        for k, plan in sig.plans.items():
            f1, f0 = family.pair(k)
            reports.append(check_plan_feasible(plan, k, f1, f0, tol))
    return reports


def verify_suite(
    prior: PriorBySum,
    sig: Optional[CalibratedSignaling] = None,
    options: Optional[SuiteOptions] = None,
) -> CheckReport:
    """Run every oracle that fits the prior's size; pass only if all pass."""
    opts = options or SuiteOptions()
    reports = [reference_transport_check(opts.tol)]

    opt = design_optimal(prior, method=opts.method)
    rev = revenue(opt)
    reports.append(verify_calibration(opt, opts.tol))
    assert opt.meta.family is not None
    reports.append(check_calibration_feasible(prior, opt.meta.family, opts.tol))

    if prior.n <= 6:
        for k in range(prior.n + 1):
            f1, f0 = opt.meta.family.pair(k)
            plan = correlate(k, f1, f0, prior.n, method=opts.method)
            reports.append(_value_check(
                f"transport[k={k}]",
                plan.expected_secmax(),
                brute_force_transport(k, f1, f0, prior.n),
                1e-7,
            ))

    if prior.n <= GRID_MAX_N:
        assert opt.meta.t1 is not None and opt.meta.t0 is not None
        grid = GridSpec.uniform(opts.grid_points, extra=(opt.meta.t0, opt.meta.t1))
        reports.append(_value_check("grid_lp", rev, grid_lp_optimal(prior, grid), opts.grid_tol))

    scan = scan_marginal_objective(prior, opts.scan_resolution)
    reports.append(CheckReport(
        name="marginal_scan",
        passed=scan.matches,
        worst=abs(scan.x_best - scan.x_closed_form),
        tolerance=1e-5,
        details=scan.to_dict(),
    ))

    if sig is not None:
        reports.append(CheckReport.combine("bundle", check_bundle(sig, sig.meta.family, opts.tol)))

    report = CheckReport.combine("verify", reports)
    logger.info("verify suite: {} ({} checks)", report.verdict.value, len(reports))
    return report
