"""
Bid marginals and the optimal marginal family.

Features:
- DiscreteDist: finitely supported distributions on [0, 1]
- MarginalFamily: per-class marginals (f_{k,1}, f_{k,0}) of a symmetric signaling
- Calibration feasibility of a family (x * D(x) = N(x) at every support point)
- Minimum second-highest bid t_k of a marginal pair
- LinSys solution, optimal thresholds and the optimal family
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

import numpy as np
from loguru import logger

from calsig.core.checks import (
    CheckReport,
    DegenerateInputError,
    InvalidInputError,
    Violation,
)
from calsig.core.prior import PriorBySum

PROB_TOL = 1e-9
MERGE_TOL = 1e-12
HALF_MASS_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteDist:
    """A finite distribution on [0, 1] with strictly increasing support."""
    support: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.probs) or not self.support:
            raise InvalidInputError("support and probs must be non-empty and equal length")
        if any(p < 0.0 for p in self.probs):
            raise InvalidInputError("probabilities must be non-negative")
        if any(x < 0.0 or x > 1.0 for x in self.support):
            raise InvalidInputError("support values must lie in [0, 1]")
        if any(b <= a for a, b in zip(self.support, self.support[1:])):
            raise InvalidInputError("support must be strictly increasing")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidInputError(f"probabilities must sum to 1 (got {total!r})")

    @classmethod
    def from_atoms(
        cls, atoms: Iterable[tuple[float, float]], tol: float = MERGE_TOL
    ) -> "DiscreteDist":
        """Build from (value, weight) pairs; merges near-equal values, drops empty atoms."""
        pairs = sorted((float(x), float(p)) for x, p in atoms if p > 0.0)
        if not pairs:
            raise InvalidInputError("distribution has no positive-weight atom")
        support: list[float] = []
        probs: list[float] = []
        for x, p in pairs:
            if support and x - support[-1] <= tol:
                probs[-1] += p
            else:
                support.append(min(max(x, 0.0), 1.0))
                probs.append(p)
        return cls(tuple(support), tuple(probs))

    @classmethod
    def point(cls, x: float) -> "DiscreteDist":
        return cls((float(x),), (1.0,))

    @classmethod
    def from_list(cls, items: list[dict]) -> "DiscreteDist":
        try:
            return cls.from_atoms((item["x"], item["p"]) for item in items)
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"malformed distribution: {e}") from e

    def to_list(self) -> list[dict]:
        return [{"x": x, "p": p} for x, p in zip(self.support, self.probs)]

    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.support, self.probs))

    def mass_at(self, x: float, tol: float = MERGE_TOL) -> float:
        for s, p in zip(self.support, self.probs):
            if abs(s - x) <= tol:
                return p
        return 0.0

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    def is_point(self, x: Optional[float] = None) -> bool:
        if len(self.support) != 1:
            return False
        return x is None or abs(self.support[0] - x) <= MERGE_TOL

    def distance(self, other: "DiscreteDist") -> float:
        """Largest absolute difference in point mass over the merged supports."""
        values = set(self.support) | set(other.support)
        return max(abs(self.mass_at(v) - other.mass_at(v)) for v in values)


@dataclass
class MarginalFamily:
    """
    Per-class bid marginals of a permutation-anonymous symmetric signaling.

    f1[k] (k = 1..n) is the bid distribution of a bidder with outcome 1 when
    exactly k outcomes are 1; f0[k] (k = 0..n-1) the same for outcome 0.
    """
    n: int
    f1: dict[int, DiscreteDist]
    f0: dict[int, DiscreteDist]

    def __post_init__(self) -> None:
        if set(self.f1) != set(range(1, self.n + 1)):
            raise InvalidInputError(f"f1 must be indexed by 1..{self.n}")
        if set(self.f0) != set(range(0, self.n)):
            raise InvalidInputError(f"f0 must be indexed by 0..{self.n - 1}")

    def pair(self, k: int) -> tuple[Optional[DiscreteDist], Optional[DiscreteDist]]:
        return self.f1.get(k), self.f0.get(k)

    def values(self) -> list[float]:
        """Union of all support points, ascending."""
        vals = {x for d in (*self.f1.values(), *self.f0.values()) for x in d.support}
        return sorted(vals)

    def max_support_size(self) -> int:
        return max(len(d.support) for d in (*self.f1.values(), *self.f0.values()))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "f1": {str(k): d.to_list() for k, d in sorted(self.f1.items())},
            "f0": {str(k): d.to_list() for k, d in sorted(self.f0.items())},
        }

    @classmethod
    def from_plans(cls, n: int, plans: Mapping[int, Any]) -> "MarginalFamily":
        """
        Recompute the family from canonical per-class plans.

        A bidder's bid law is the average over the coordinates of its side,
        since outcomes are placed by a uniformly random bijection.
        """
        f1: dict[int, DiscreteDist] = {}
        f0: dict[int, DiscreteDist] = {}
        for k, plan in plans.items():
            if k >= 1:
                f1[k] = DiscreteDist.from_atoms(
                    (bids[i], w / k) for bids, w in plan.rows for i in range(k)
                )
            if k <= n - 1:
                f0[k] = DiscreteDist.from_atoms(
                    (bids[i], w / (n - k)) for bids, w in plan.rows for i in range(k, n)
                )
        return cls(n=n, f1=f1, f0=f0)

    @classmethod
    def from_dict(cls, data: dict) -> "MarginalFamily":
        try:
            return cls(
                n=int(data["n"]),
                f1={int(k): DiscreteDist.from_list(v) for k, v in data["f1"].items()},
                f0={int(k): DiscreteDist.from_list(v) for k, v in data["f0"].items()},
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise InvalidInputError(f"malformed marginal family: {e}") from e


@dataclass
class CalibrationReport(CheckReport):
    """Calibration-feasibility check of a marginal family."""
    offending_value: Optional[float] = None

    @property
    def feasible(self) -> bool:
        return self.passed

    @property
    def worst_violation(self) -> float:
        return self.worst


class Convention(str, Enum):
    """Reading of the t0 threshold formula."""
    MAIN_TEXT = "main_text"  # t0 = y / (lambda_0 + y)
    APPENDIX = "appendix"  # t0 = y / (2 lambda_0 + y)


class SplitOrder(str, Enum):
    """Order in which the LinSys waterfall visits classes k = 2..n."""
    DESCENDING = "descending"
    ASCENDING = "ascending"


@dataclass
class LinSysSolution:
    """Weights a_k (mass at t1) and b_k (mass at t0) of the classes k >= 2."""
    a: dict[int, float]
    b: dict[int, float]
    x_star: float
    y_star: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "a": {str(k): v for k, v in self.a.items()},
            "b": {str(k): v for k, v in self.b.items()},
            "x_star": self.x_star,
            "y_star": self.y_star,
            "flags": list(self.flags),
        }


@dataclass
class Thresholds:
    """Optimal calibrated bids t1 (one-click class) and t0 (no-click class)."""
    t1: float
    t0: float
    convention: Convention
    linsys: LinSysSolution
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "t1": self.t1,
            "t0": self.t0,
            "convention": self.convention.value,
            "flags": list(self.flags),
        }


def min_secmax(
    k: int, f1: Optional[DiscreteDist], f0: Optional[DiscreteDist], n: int
) -> float:
    """
    Minimum second-highest bid t_k.

    Largest t with half the class's total bid mass on [t, 1] at least 1; any
    coupling of the pair puts its second-highest bid at or above t_k.
    """
    if not 0 <= k <= n:
        raise InvalidInputError(f"k must lie in [0, {n}], got {k}")
    weights: dict[float, float] = {}
    if k >= 1:
        if f1 is None:
            raise InvalidInputError("f1 is required when k >= 1")
        for x, p in f1.atoms():
            weights[x] = weights.get(x, 0.0) + 0.5 * k * p
    if k <= n - 1:
        if f0 is None:
            raise InvalidInputError("f0 is required when k <= n - 1")
        for x, p in f0.atoms():
            weights[x] = weights.get(x, 0.0) + 0.5 * (n - k) * p
    acc = 0.0
    for x in sorted(weights, reverse=True):
        acc += weights[x]
        if acc >= 1.0 - HALF_MASS_TOL:
            return x
    return min(weights)


def check_calibration_feasible(
    prior: PriorBySum, fam: MarginalFamily, tol: float = 1e-9
) -> CalibrationReport:
    """Check x * D(x) = N(x) at every support point of the family."""
    if fam.n != prior.n:
        raise InvalidInputError(f"family has n={fam.n} but prior has n={prior.n}")
    n = prior.n
    worst = 0.0
    offending: Optional[float] = None
    violations: list[Violation] = []
    residuals: dict[float, float] = {}
    for x in fam.values():
        num = sum(prior[k] * k * fam.f1[k].mass_at(x) for k in range(1, n + 1))
        den = num + sum(prior[k] * (n - k) * fam.f0[k].mass_at(x) for k in range(0, n))
        r = abs(x * den - num)
        residuals[x] = r
        if r > worst:
            worst, offending = r, x
        if r > tol:
            violations.append(Violation(
                rule_id="CAL-001",
                severity="error",
                message=f"bid {x:.12g} has click rate {num / den if den else float('nan'):.12g}",
                location=f"x={x:.12g}",
            ))
    return CalibrationReport(
        name="calibration_feasible",
        passed=worst <= tol,
        worst=worst,
        tolerance=tol,
        violations=violations,
        details={"residuals": {f"{x:.12g}": r for x, r in residuals.items()}},
        offending_value=offending if worst > tol else None,
    )


def split_linsys(
    prior: PriorBySum, x_star: float, order: SplitOrder = SplitOrder.DESCENDING
) -> LinSysSolution:
    """
    Distribute x_star over the classes k = 2..n as weights a_k with b_k the rest.

    Waterfall: a_k = min((k-2)/k, remaining / (lambda_k k)). Class n keeps a
    sliver of b_n > 0 whenever the remainder allows it.
    """
    n = prior.n
    caps = {k: (k - 2) / k for k in range(2, n + 1)}
    total = sum((k - 2) * prior[k] for k in range(2, n + 1))
    x_star = min(max(x_star, 0.0), total)
    ks = range(n, 1, -1) if order == SplitOrder.DESCENDING else range(2, n + 1)
    reserve = min(1e-9, caps[n]) if prior[n] > 0.0 else 0.0

    a = {k: 0.0 for k in caps}
    remaining = x_star
    for k in ks:
        weight = prior[k] * k
        if weight <= 0.0 or remaining <= 0.0:
            continue
        cap = caps[k] - (reserve if k == n else 0.0)
        a[k] = min(cap, remaining / weight)
        remaining -= a[k] * weight

    flags: list[str] = []
    if remaining > 1e-15 and prior[n] > 0.0:
        a[n] = min(caps[n], a[n] + remaining / (prior[n] * n))
        flags.append("b_n reserve consumed: b_n = 0")
    b = {k: max(caps[k] - a[k], 0.0) for k in caps}
    if n == 2:
        flags.append("n = 2 forces a_2 = b_2 = 0")
    return LinSysSolution(a=a, b=b, x_star=x_star, y_star=total - x_star, flags=flags)


def solve_linsys(prior: PriorBySum) -> LinSysSolution:
    """Closed-form maximiser x_star of the one-dimensional marginal program, then split."""
    lam0, lam1, lamn = prior[0], prior[1], prior[prior.n]
    if lamn <= 0.0:
        raise DegenerateInputError(
            "lambda_n = 0: the optimal family needs b_n > 0 and is undefined"
        )
    big_a = sum((k - 2) * prior[k] for k in range(2, prior.n + 1))
    if lam0 <= 0.0 and lam1 <= 0.0:
        # every profile has two clicks: any split works, put it all at t1 = 1
        sol = split_linsys(prior, big_a, SplitOrder.DESCENDING)
        sol.flags.append("lambda_0 = lambda_1 = 0: x* = A, thresholds carry no revenue")
        logger.warning("lambda_0 = lambda_1 = 0: degenerate split x* = A = {}", big_a)
        return sol
    x = (lam1 * big_a + 2.0 * lam1 * lam0 * (1.0 - math.sqrt(2.0))) / (
        lam1 + math.sqrt(2.0) * lam0
    )
    x = min(max(x, 0.0), big_a)
    sol = split_linsys(prior, x, SplitOrder.DESCENDING)
    if lam0 <= 0.0:
        sol.flags.append("lambda_0 = 0: t0 carries no revenue")
    logger.debug("linsys: A={} x*={} y*={}", big_a, sol.x_star, sol.y_star)
    return sol


def _t1(lam1: float, x: float) -> Optional[float]:
    den = 2.0 * lam1 + x
    return (lam1 + x) / den if den > 0.0 else None


def _t0(lam0: float, y: float, convention: Convention) -> Optional[float]:
    den = (lam0 if convention == Convention.MAIN_TEXT else 2.0 * lam0) + y
    return y / den if den > 0.0 else None


def optimal_thresholds(
    prior: PriorBySum, convention: Convention = Convention.APPENDIX
) -> Thresholds:
    """Closed-form t1 and t0 for the chosen t0 convention (with fallback)."""
    sol = solve_linsys(prior)
    flags: list[str] = []

    def evaluate(conv: Convention) -> tuple[float, float]:
        t1 = _t1(prior[1], sol.x_star)
        t0 = _t0(prior[0], sol.y_star, conv)
        if t1 is None:
            t1 = 0.5
            flags.append("lambda_1 = 0: t1 defaults to 0.5")
        if t0 is None:
            t0 = 0.0
            flags.append("lambda_0 = 0 and y* = 0: t0 defaults to 0")
        return t1, t0

    t1, t0 = evaluate(convention)
    used = convention
    if t0 > t1 + MERGE_TOL or t1 < 0.5 - MERGE_TOL:
        other = Convention.APPENDIX if convention == Convention.MAIN_TEXT else Convention.MAIN_TEXT
        alt1, alt0 = evaluate(other)
        if alt0 <= alt1 + MERGE_TOL and alt1 >= 0.5 - MERGE_TOL:
            flags.append(f"{convention.value} thresholds violate t0 <= t1; using {other.value}")
            logger.warning("threshold ordering violated under {}, falling back", convention.value)
            t1, t0, used = alt1, alt0, other
        else:
            flags.append("t0 <= t1 violated under both conventions")
    return Thresholds(t1=t1, t0=t0, convention=used, linsys=sol, flags=flags)


def linsys_objective(
    prior: PriorBySum, x: float, convention: Convention = Convention.APPENDIX
) -> float:
    """Revenue of the optimal-form family when the classes k >= 2 put x at t1."""
    big_a = sum((k - 2) * prior[k] for k in range(2, prior.n + 1))
    t1 = _t1(prior[1], x)
    t0 = _t0(prior[0], big_a - x, convention)
    return (
        prior[1] * (t1 if t1 is not None else 0.5)
        + prior[0] * (t0 if t0 is not None else 0.0)
        + sum(prior.lam[2:])
    )


def optimal_marginals(
    prior: PriorBySum, convention: Convention = Convention.APPENDIX
) -> MarginalFamily:
    """The optimal family: point masses at 0, t0, t1 and 1 only."""
    th = optimal_thresholds(prior, convention)
    return family_from_thresholds(prior.n, th.t1, th.t0, th.linsys)


def family_from_thresholds(
    n: int, t1: float, t0: float, sol: LinSysSolution
) -> MarginalFamily:
    f1 = {1: DiscreteDist.point(t1)}
    for k in range(2, n + 1):
        f1[k] = DiscreteDist.from_atoms([(1.0, 2.0 / k), (t1, sol.a[k]), (t0, sol.b[k])])
    f0 = {
        0: DiscreteDist.from_atoms([(t0, 2.0 / n), (0.0, (n - 2) / n)]),
        1: DiscreteDist.from_atoms([(t1, 1.0 / (n - 1)), (0.0, (n - 2) / (n - 1))]),
    }
    for k in range(2, n):
        f0[k] = DiscreteDist.point(0.0)
    return MarginalFamily(n=n, f1=f1, f0=f0)
