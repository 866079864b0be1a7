"""
Individually rational signaling (approximation scheme).

The optimal signaling can charge more than the bidders' total value. The
IR construction replaces the single one-click threshold t1 by a strictly
increasing ladder of calibrated levels, so that in a one-click profile the
bidder with outcome 1 always wins outright, and (when the optimum exceeds
welfare) lowers the no-click threshold until revenue equals welfare.

Ladder: c_l = c_bar + l eps^2 / (2M), t_l = (lambda_1 + c_l) / (2 lambda_1 + c_l)
for l in [-M, M-1] with M = ceil(1/eps), plus t_M = 1. c_bar is the optimal
one-click mass c_star, raised to eps^2/2 when c_star is smaller so that every
c_l stays non-negative.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger

from calsig.core.checks import DegenerateInputError, InfeasibleError, InvalidInputError
from calsig.core.marginals import (
    DiscreteDist,
    LinSysSolution,
    MarginalFamily,
    SplitOrder,
    optimal_thresholds,
    split_linsys,
)
from calsig.core.prior import PriorBySum, welfare
from calsig.core.signaling import (
    CalibratedSignaling,
    SignalingMeta,
    Variant,
    assemble,
    classify_region,
)
from calsig.core.transport import Row, TransportPlan, predicted_secmax
from calsig.solvers.lp import LpMethod

EPS_SLACK = 1e-12
ALLOC_EPS = 1e-18
DENSE_LEVELS_MAX = 1_000_000
EPSILON_BISECTIONS = 200
MASS_TOL = 1e-12


@dataclass(frozen=True)
class SerratedSequence:
    """Calibrated bid ladder t_l, l = -M..M, around the optimal t1."""
    epsilon: float
    M: int
    c_star: float
    c_bar: float
    values: tuple[float, ...]
    flags: tuple[str, ...] = ()

    def level(self, l: int) -> float:
        if not -self.M <= l <= self.M:
            raise InvalidInputError(f"level {l} outside [-{self.M}, {self.M}]")
        return self.values[l + self.M]

    @property
    def levels(self) -> dict[int, float]:
        return {l: self.values[l + self.M] for l in range(-self.M, self.M + 1)}

    @property
    def lower(self) -> tuple[float, ...]:
        """Levels -M..M-1 (everything but the top level 1)."""
        return self.values[:-1]

    @property
    def shifted(self) -> bool:
        return self.c_bar > self.c_star

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "M": self.M,
            "c_star": self.c_star,
            "c_bar": self.c_bar,
            "levels": list(self.values),
            "flags": list(self.flags),
        }


@dataclass
class IrMarginalFamily(MarginalFamily):
    """IR bid marginals plus the bookkeeping of how they were built."""
    b_ir: dict[int, float] = field(default_factory=dict)
    b_star: dict[int, float] = field(default_factory=dict)
    d_l: dict[int, float] = field(default_factory=dict)  # class-n mass per level
    d: float = 0.0  # class-n mass moved off the bid-1 atom
    t0_ir: float = 0.0
    region: int = 1
    sequence: Optional[SerratedSequence] = None
    flags: list[str] = field(default_factory=list)


@dataclass
class UtilityReport:
    """Ex-ante utility of each bidder; equal for every bidder by symmetry."""
    n: int
    common: float
    per_class: dict[int, float]

    @property
    def per_bidder(self) -> list[float]:
        return [self.common] * self.n

    def to_dict(self) -> dict:
        return {
            "common": self.common,
            "per_bidder": self.per_bidder,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }


def _excess_upper(lam1: float, c_star: float, epsilon: float) -> float:
    """Upper bound on the outcome-1 mass e the ladder needs beyond c_star; increasing in eps."""
    return max(0.5 * epsilon**2 - c_star, 0.0) + 0.5 * lam1 * epsilon


def _excess_bound(lam1: float, c_star: float, cap: float) -> float:
    """Largest eps with _excess_upper(eps) <= cap."""
    eps = 2.0 * cap / lam1
    if 0.5 * eps**2 <= c_star:
        return eps
    return 0.5 * (math.sqrt(lam1**2 + 8.0 * (c_star + cap)) - lam1)


def _surplus_fits(prior: PriorBySum, split: LinSysSolution, epsilon: float) -> bool:
    """
    Region 2: the full-surplus threshold and the class-n slack both fit at eps.

    t0_ir is bounded by its value with every level at the bottom of the ladder,
    which grows with eps, so the predicate is monotone.
    """
    n, lam0, lam1 = prior.n, prior[0], prior[1]
    c_min = max(split.x_star - 0.5 * epsilon**2, 0.0)
    t0_hi = lam1 * lam1 / (lam0 * (2.0 * lam1 + c_min))
    if t0_hi >= 1.0:
        return False
    target = 2.0 * lam0 * t0_hi / (1.0 - t0_hi)
    if target > split.y_star:
        return False
    b_ir = _fill_b_ir(prior, target, split.b)
    cap = n * prior[n] * (split.b[n] - b_ir[n])
    return _excess_upper(lam1, split.x_star, epsilon) <= cap


def epsilon_bounds(prior: PriorBySum) -> dict[str, float]:
    """Upper limits on epsilon by name; every eps below all of them is valid."""
    lam1, lamn = prior[1], prior[prior.n]
    if lam1 <= 0.0:
        raise DegenerateInputError("lambda_1 = 0: the IR ladder is undefined")
    bounds = {"sqrt(lambda_1)": math.sqrt(lam1)}
    split = split_linsys(prior, optimal_thresholds(prior).linsys.x_star, SplitOrder.ASCENDING)
    if classify_region(prior).region == 1:
        bounds["class-n bid-1 atom"] = _excess_bound(lam1, split.x_star, 2.0 * lamn)
        return bounds
    lo, hi = 0.0, bounds["sqrt(lambda_1)"]
    if not _surplus_fits(prior, split, hi):
        for _ in range(EPSILON_BISECTIONS):
            mid = 0.5 * (lo + hi)
            if _surplus_fits(prior, split, mid):
                lo = mid
            else:
                hi = mid
        bounds["class-n slack b_n - b_n_ir"] = lo
    return bounds


def max_valid_epsilon(prior: PriorBySum) -> float:
    return min(epsilon_bounds(prior).values())


def check_epsilon(prior: PriorBySum, epsilon: float) -> None:
    if not math.isfinite(epsilon) or epsilon <= 0.0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    for name, bound in epsilon_bounds(prior).items():
        if epsilon > bound + EPS_SLACK:
            raise InvalidInputError(
                f"epsilon={epsilon:g} exceeds {name} = {bound:.6g}; "
                f"max valid epsilon is {max_valid_epsilon(prior):.6g}"
            )


def _ladder_base(prior: PriorBySum, epsilon: float) -> tuple[int, float, float]:
    M = math.ceil(1.0 / epsilon - EPS_SLACK)
    c_star = optimal_thresholds(prior).linsys.x_star
    return M, c_star, max(c_star, 0.5 * epsilon**2)


def serrated_sequence(
    prior: PriorBySum, epsilon: float, validate: bool = True
) -> SerratedSequence:
    if validate:
        check_epsilon(prior, epsilon)
    lam1 = prior[1]
    M, c_star, c_bar = _ladder_base(prior, epsilon)
    c = c_bar + np.arange(-M, M) * (epsilon**2 / (2 * M))
    t = np.append((lam1 + c) / (2.0 * lam1 + c), 1.0)
    flags = []
    if c_bar > c_star:
        flags.append("c_star < eps^2/2: ladder shifted up, level 0 sits above t1")
    if not np.all(np.diff(t) > 0.0):
        flags.append("adjacent levels coincide in double precision")
        logger.warning("serrated ladder not strictly increasing at eps={}", epsilon)
    return SerratedSequence(
        epsilon=epsilon,
        M=M,
        c_star=c_star,
        c_bar=c_bar,
        values=tuple(float(v) for v in t),
        flags=tuple(flags),
    )


def ir_threshold_t0(prior: PriorBySum, epsilon: float, seq: SerratedSequence) -> float:
    """No-click threshold: unchanged in region 1, lowered to the full-surplus value in region 2."""
    region = classify_region(prior)
    if prior[0] <= 0.0:
        logger.warning("lambda_0 = 0: keeping t0 = {}", region.t0)
        return region.t0
    if region.region == 1:
        return region.t0
    gaps = math.fsum(1.0 - t for t in seq.lower)
    return prior[1] * gaps / (2 * seq.M * prior[0])


def _fill_b_ir(prior: PriorBySum, target: float, b_star: dict[int, float]) -> dict[int, float]:
    """Waterfall sum lambda_k k b_k = target over k = 2..n-1, class n last."""
    n = prior.n
    b_ir = {k: 0.0 for k in b_star}
    remaining = target
    for k in list(range(2, n)) + [n]:
        weight = prior[k] * k
        if weight <= 0.0 or remaining <= 0.0:
            continue
        b_ir[k] = remaining / weight if k == n else min(b_star[k], remaining / weight)
        remaining -= b_ir[k] * weight
    return b_ir


def ir_marginals(prior: PriorBySum, epsilon: float) -> IrMarginalFamily:
    n = prior.n
    lam0, lam1, lamn = prior[0], prior[1], prior[n]
    seq = serrated_sequence(prior, epsilon)
    M = seq.M
    region = classify_region(prior)
    split = split_linsys(prior, seq.c_star, SplitOrder.ASCENDING)
    t0_ir = ir_threshold_t0(prior, epsilon, seq)
    flags = list(seq.flags) + region.flags

    # Outcome-1 mass each level needs from the classes k >= 2 (lambda k f weighted)
    c = seq.c_bar + np.arange(-M, M) * (epsilon**2 / (2 * M))
    targets = c / (2 * M)
    targets[0] += lam1 / (2 * M)
    supply_a = math.fsum(prior[k] * k * split.a[k] for k in range(2, n + 1))
    e = max(float(math.fsum(targets)) - supply_a, 0.0)
    d = e / (n * lamn)

    if region.region == 2:
        target = 2.0 * lam0 * t0_ir / (1.0 - t0_ir)
        if target > split.y_star + MASS_TOL:
            raise InfeasibleError(
                f"full-surplus threshold needs {target:.6g} no-click mass, only {split.y_star:.6g}"
            )
        b_ir = _fill_b_ir(prior, target, split.b)
        room, what = split.b[n] - b_ir[n], "b_n - b_n_ir"
    else:
        b_ir = dict(split.b)
        room, what = 2.0 / n, "the bid-1 atom of class n"
    if d > room + MASS_TOL:
        raise InvalidInputError(
            f"epsilon={epsilon:g} moves d={d:.6g} > {what} = {room:.6g}; "
            f"max valid epsilon is {max_valid_epsilon(prior):.6g}"
        )
    # rounding within MASS_TOL
    d = max(min(d, room), 0.0)
    e = d * n * lamn

    sources = [[n, e], [n, lamn * n * split.a[n]]] + [
        [k, prior[k] * k * split.a[k]] for k in range(n - 1, 1, -1)
    ]
    sources = [s for s in sources if s[1] > ALLOC_EPS]
    level_mass = {k: np.zeros(2 * M) for k in range(2, n + 1)}
    j = 0
    for idx in range(2 * M):
        need = float(targets[idx])
        while need > ALLOC_EPS and j < len(sources):
            k, avail = sources[j]
            take = min(need, avail)
            level_mass[k][idx] += take / (prior[k] * k)
            sources[j][1] -= take
            need -= take
            if sources[j][1] <= ALLOC_EPS:
                j += 1

    lower = seq.lower
    f1 = {
        1: DiscreteDist.from_atoms(
            [(lower[idx], 1.0 / (2 * M)) for idx in range(1, 2 * M)] + [(1.0, 1.0 / (2 * M))]
        )
    }
    for k in range(2, n + 1):
        atoms = [(1.0, 2.0 / k + split.b[k] - b_ir[k] - (d if k == n else 0.0))]
        atoms += [(lower[idx], float(w)) for idx, w in enumerate(level_mass[k]) if w > 0.0]
        atoms.append((t0_ir, b_ir[k]))
        f1[k] = DiscreteDist.from_atoms(atoms)
    f0 = {
        0: DiscreteDist.from_atoms([(t0_ir, 2.0 / n), (0.0, (n - 2) / n)]),
        1: DiscreteDist.from_atoms(
            [(t, 1.0 / (2 * M * (n - 1))) for t in lower] + [(0.0, (n - 2) / (n - 1))]
        ),
    }
    for k in range(2, n):
        f0[k] = DiscreteDist.point(0.0)

    logger.debug(
        "ir marginals n={} eps={} region={} t0_ir={} d={}", n, epsilon, region.region, t0_ir, d
    )
    return IrMarginalFamily(
        n=n,
        f1=f1,
        f0=f0,
        b_ir=b_ir,
        b_star=dict(split.b),
        d_l={l: float(level_mass[n][l + M]) for l in range(-M, M) if level_mass[n][l + M] > 0.0},
        d=d,
        t0_ir=t0_ir,
        region=region.region,
        sequence=seq,
        flags=flags,
    )


def staircase_plan(seq: SerratedSequence, n: int) -> TransportPlan:
    """One-click class: the outcome-1 bidder bids one level above the best other bid."""
    rows: list[Row] = []
    size = n - 1
    w = 1.0 / (2 * seq.M * size)
    for l in range(-seq.M, seq.M):
        others = (seq.level(l),) + (0.0,) * (size - 1)
        for s in range(size):
            shifted = tuple(others[(j + s) % size] for j in range(size))
            rows.append(((seq.level(l + 1),) + shifted, w))
    return TransportPlan(n=n, k=1, rows=rows)


def design_ir(
    prior: PriorBySum,
    epsilon: float,
    method: LpMethod = LpMethod.SIMPLEX,
    threads: int = 1,
) -> CalibratedSignaling:
    fam = ir_marginals(prior, epsilon)
    assert fam.sequence is not None
    others = [k for k in range(prior.n + 1) if k != 1]
    plans = assemble(prior, fam, method=method, threads=threads, classes=others)
    plans[1] = staircase_plan(fam.sequence, prior.n)
    th = optimal_thresholds(prior)
    meta = SignalingMeta(
        variant=Variant.IR,
        t1=th.t1,
        t0=th.t0,
        family=fam,
        flags=fam.flags,
        extra={
            "epsilon": epsilon,
            "M": fam.sequence.M,
            "region": fam.region,
            "levels": list(fam.sequence.values),
            "t0_ir": fam.t0_ir,
        },
    )
    logger.info("designed IR signaling n={} eps={} region={}", prior.n, epsilon, fam.region)
    return CalibratedSignaling(prior=prior, plans=plans, meta=meta)


def ir_conditional_secmax(
    prior: PriorBySum, epsilon: float, fam: Optional[IrMarginalFamily] = None
) -> dict[int, DiscreteDist]:
    """Closed-form second-highest-bid law of the IR signaling, class by class."""
    fam = fam or ir_marginals(prior, epsilon)
    assert fam.sequence is not None
    n, M = prior.n, fam.sequence.M
    phi = {
        0: predicted_secmax(0, None, fam.f0[0], n),
        1: DiscreteDist.from_atoms((t, 1.0 / (2 * M)) for t in fam.sequence.lower),
    }
    for k in range(2, n + 1):
        f1, f0 = fam.pair(k)
        phi[k] = predicted_secmax(k, f1, f0, n)
    return phi


def ir_revenue(prior: PriorBySum, epsilon: float) -> float:
    phi = ir_conditional_secmax(prior, epsilon)
    return math.fsum(prior[k] * d.mean() for k, d in phi.items())


def _level_mean(lam1: float, c_bar: float, epsilon: float, M: int) -> float:
    step = epsilon**2 / (2 * M)
    if M <= DENSE_LEVELS_MAX:
        c = c_bar + np.arange(-M, M) * step
        return float(np.mean((lam1 + c) / (2.0 * lam1 + c)))
    # midpoint rule for 1 - lambda_1 / (2 lambda_1 + c) over [-M - 1/2, M - 1/2]
    lo = 2.0 * lam1 + c_bar - (M + 0.5) * step
    hi = 2.0 * lam1 + c_bar + (M - 0.5) * step
    return 1.0 - lam1 * math.log(hi / lo) / (2 * M * step)


def ir_revenue_floor(prior: PriorBySum, epsilon: float) -> float:
    """
    Lower bound on the IR revenue that needs neither the marginals nor a valid epsilon.

    lambda_0 t0_ir + lambda_1 mean(levels) + sum_{k>=2} lambda_k; in region 1 the
    class-n mass moved off bid 1 is priced at the bottom level.
    """
    lam0, lam1 = prior[0], prior[1]
    if lam1 <= 0.0:
        raise DegenerateInputError("lambda_1 = 0: the IR ladder is undefined")
    if not math.isfinite(epsilon) or epsilon <= 0.0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    region = classify_region(prior)
    if region.region == 2:
        return welfare(prior)
    M, c_star, c_bar = _ladder_base(prior, epsilon)
    mean = _level_mean(lam1, c_bar, epsilon, M)
    c_low = c_bar - 0.5 * epsilon**2
    t_low = (lam1 + c_low) / (2.0 * lam1 + c_low)
    e = (c_bar - c_star) + (lam1 - 0.5 * epsilon**2) / (2 * M)
    return (
        lam0 * region.t0
        + lam1 * mean
        + math.fsum(prior.lam[2:])
        - 0.5 * e * (1.0 - t_low)
    )


def _winner_value(bids: tuple[float, ...], k: int) -> tuple[float, float]:
    """(share of the tied top bidders with outcome 1, second-highest bid) of a canonical row."""
    top = max(bids)
    winners = [i for i, b in enumerate(bids) if b == top]
    ordered = sorted(bids)
    return sum(1 for i in winners if i < k) / len(winners), ordered[-2]


def exante_utility(sig: CalibratedSignaling) -> UtilityReport:
    """
    Expected utility of one bidder under uniform tie-breaking.

    The winner gains its realised outcome and pays the second-highest bid.
    Under the permutation extension every bidder is equally likely to be in
    any seat, so the total is split evenly over the n bidders.
    """
    n = sig.n
    per_class: dict[int, float] = {}
    for k, plan in sig.plans.items():
        total = 0.0
        for bids, w in plan.rows:
            value, price = _winner_value(bids, k)
            total += w * (value - price)
        per_class[k] = sig.prior[k] * total / n
    return UtilityReport(n=n, common=math.fsum(per_class.values()), per_class=per_class)


def bidder_surplus(sig: CalibratedSignaling) -> float:
    """Expected value of the winner minus the price: n times the common utility."""
    return sig.n * exante_utility(sig).common
