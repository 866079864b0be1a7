"""
Calibrated signalings assembled from per-class transport plans.

A signaling is stored canonically: for every outcome class k the plan's
first k coordinates belong to the bidders whose outcome is 1. A realised
outcome profile is served by placing those coordinates onto the positions
of its 1s through a uniformly random bijection.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

import numpy as np
from loguru import logger

from calsig.core.checks import CheckReport, InvalidInputError, Violation
from calsig.core.marginals import (
    Convention,
    DiscreteDist,
    MarginalFamily,
    family_from_thresholds,
    optimal_thresholds,
)
from calsig.core.prior import PriorBySum, from_mapping, profile_weight, welfare
from calsig.core.transport import TransportPlan, correlate, induced_secmax
from calsig.solvers.lp import LpMethod

SYMMETRIZE_MAX_N = 10
REGION_TIE_TOL = 1e-12


class Variant(str, Enum):
    """How a signaling was produced."""
    OPTIMAL = "optimal"
    IR = "ir"
    FULL_INFO = "full_info"
    CUSTOM = "custom"


@dataclass
class SignalingMeta:
    variant: Variant
    t1: Optional[float] = None
    t0: Optional[float] = None
    family: Optional[MarginalFamily] = None
    flags: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "t1": self.t1,
            "t0": self.t0,
            "family": self.family.to_dict() if self.family else None,
            "flags": list(self.flags),
            **self.extra,
        }


@dataclass
class CalibratedSignaling:
    """A permutation-anonymous symmetric signaling: one canonical plan per class."""
    prior: PriorBySum
    plans: dict[int, TransportPlan]
    meta: SignalingMeta

    def __post_init__(self) -> None:
        n = self.prior.n
        if set(self.plans) != set(range(n + 1)):
            raise InvalidInputError(f"plans must be indexed by 0..{n}")
        for k, plan in self.plans.items():
            if plan.n != n or plan.k != k:
                raise InvalidInputError(f"plan {k} has n={plan.n}, k={plan.k}")

    @property
    def n(self) -> int:
        return self.prior.n


@dataclass
class RegionReport:
    """Where a prior sits relative to the welfare boundary."""
    t1: float
    t0: float
    boundary: float  # lambda_1 (1 - t1) / lambda_0
    region: int
    revenue: float
    welfare: float
    flags: list[str] = field(default_factory=list)

    @property
    def surplus_sign(self) -> int:
        """Sign of optimal revenue minus welfare."""
        gap = self.revenue - self.welfare
        return 0 if abs(gap) <= 1e-12 else (1 if gap > 0 else -1)

    def to_dict(self) -> dict:
        return {
            "t1": self.t1,
            "t0": self.t0,
            "boundary": self.boundary,
            "region": self.region,
            "revenue": self.revenue,
            "welfare": self.welfare,
            "surplus_sign": self.surplus_sign,
            "flags": list(self.flags),
        }


def optimal_revenue(prior: PriorBySum, convention: Convention = Convention.APPENDIX) -> float:
    """lambda_0 t0 + lambda_1 t1 + sum of lambda_k for k >= 2, without building plans."""
    th = optimal_thresholds(prior, convention)
    return prior[0] * th.t0 + prior[1] * th.t1 + math.fsum(prior.lam[2:])


def classify_region(
    prior: PriorBySum, convention: Convention = Convention.APPENDIX
) -> RegionReport:
    th = optimal_thresholds(prior, convention)
    flags = list(th.flags)
    if prior[0] > 0.0:
        boundary = prior[1] * (1.0 - th.t1) / prior[0]
        region = 2 if th.t0 > boundary + REGION_TIE_TOL else 1
    else:
        boundary = math.inf
        region = 1
        flags.append("lambda_0 = 0: region condition is vacuous")
    revenue = prior[0] * th.t0 + prior[1] * th.t1 + math.fsum(prior.lam[2:])
    return RegionReport(
        t1=th.t1,
        t0=th.t0,
        boundary=boundary,
        region=region,
        revenue=revenue,
        welfare=welfare(prior),
        flags=flags,
    )


def assemble(
    prior: PriorBySum,
    family: MarginalFamily,
    method: LpMethod = LpMethod.SIMPLEX,
    threads: int = 1,
    classes: Optional[Iterable[int]] = None,
) -> dict[int, TransportPlan]:
    """Correlate the classes of a family (all of them by default); classes are independent."""
    n = prior.n
    ks = list(range(n + 1)) if classes is None else list(classes)

    def build(k: int) -> TransportPlan:
        f1, f0 = family.pair(k)
        return correlate(k, f1, f0, n, method=method)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            plans = list(pool.map(build, ks))
    else:
        plans = [build(k) for k in ks]
    return dict(zip(ks, plans))


def design_optimal(
    prior: PriorBySum,
    convention: Convention = Convention.APPENDIX,
    method: LpMethod = LpMethod.SIMPLEX,
    threads: int = 1,
) -> CalibratedSignaling:
    """Revenue-optimal calibrated signaling."""
    th = optimal_thresholds(prior, convention)
    family = family_from_thresholds(prior.n, th.t1, th.t0, th.linsys)
    plans = assemble(prior, family, method=method, threads=threads)
    meta = SignalingMeta(
        variant=Variant.OPTIMAL,
        t1=th.t1,
        t0=th.t0,
        family=family,
        flags=th.flags + th.linsys.flags,
        extra={"convention": th.convention.value},
    )
    logger.info("designed optimal signaling n={} t1={:.6f} t0={:.6f}", prior.n, th.t1, th.t0)
    return CalibratedSignaling(prior=prior, plans=plans, meta=meta)


def full_information(prior: PriorBySum) -> CalibratedSignaling:
    """Reveal every outcome: bids equal outcomes."""
    n = prior.n
    plans = {
        k: TransportPlan(n=n, k=k, rows=[((1.0,) * k + (0.0,) * (n - k), 1.0)])
        for k in range(n + 1)
    }
    return CalibratedSignaling(prior=prior, plans=plans, meta=SignalingMeta(Variant.FULL_INFO))


def conditional_secmax(sig: CalibratedSignaling, k: int) -> DiscreteDist:
    if not 0 <= k <= sig.n:
        raise InvalidInputError(f"k must lie in [0, {sig.n}], got {k}")
    return induced_secmax(sig.plans[k])


def revenue(sig: CalibratedSignaling) -> float:
    """Expected second-highest bid."""
    return math.fsum(sig.prior[k] * plan.expected_secmax() for k, plan in sig.plans.items())


def click_tallies(sig: CalibratedSignaling) -> dict[float, tuple[float, float]]:
    """Per bid value: (probability mass with outcome 1, total mass), up to a factor 1/n."""
    tallies: dict[float, list[float]] = {}
    for k, plan in sig.plans.items():
        lam = sig.prior[k]
        if lam <= 0.0:
            continue
        for bids, w in plan.rows:
            for i, x in enumerate(bids):
                entry = tallies.setdefault(x, [0.0, 0.0])
                entry[1] += lam * w
                if i < k:
                    entry[0] += lam * w
    return {x: (num, den) for x, (num, den) in tallies.items()}


def verify_calibration(sig: CalibratedSignaling, tol: float = 1e-9) -> CheckReport:
    """Every bid x must equal the click rate of the bidders who receive it."""
    worst = 0.0
    violations: list[Violation] = []
    residuals: dict[str, float] = {}
    for x, (num, den) in sorted(click_tallies(sig).items()):
        if den <= 0.0:
            continue
        if x <= 0.0:
            r = num / den
        else:
            r = abs(num / den - x)
        residuals[f"{x:.12g}"] = r
        worst = max(worst, r)
        if r > tol:
            violations.append(Violation(
                rule_id="CAL-002",
                severity="error",
                message=f"bid {x:.12g} has click rate {num / den:.12g}",
                location=f"x={x:.12g}",
            ))
    return CheckReport(
        name="calibration",
        passed=worst <= tol,
        worst=worst,
        tolerance=tol,
        violations=violations,
        details={"residuals": residuals},
    )


def _canonical(n: int, k: int) -> tuple[int, ...]:
    return (1,) * k + (0,) * (n - k)


def symmetrize(
    raw: Mapping[tuple[int, ...], list[tuple[tuple[float, ...], float]]],
    prior: PriorBySum,
) -> CalibratedSignaling:
    """
    Average a signaling over all bidder permutations.

    raw maps each outcome profile to its (bid profile, weight) list. The
    result serves profile o_k = (1..1, 0..0) with pi(sigma x | sigma o_k)
    averaged over sigma, which is enough to describe every class.
    """
    n = prior.n
    if n > SYMMETRIZE_MAX_N:
        raise InvalidInputError(f"symmetrize enumerates n! permutations; n={n} > {SYMMETRIZE_MAX_N}")
    for o, rows in raw.items():
        if len(o) != n or any(b not in (0, 1) for b in o):
            raise InvalidInputError(f"bad outcome profile {o}")
        total = math.fsum(w for _, w in rows)
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"weights for profile {o} sum to {total}")

    perms = list(itertools.permutations(range(n)))
    plans: dict[int, TransportPlan] = {}
    for k in range(n + 1):
        base = _canonical(n, k)
        acc: dict[tuple[float, ...], float] = {}
        for sigma in perms:
            o = tuple(base[sigma[i]] for i in range(n))
            rows = raw.get(o)
            if rows is None:
                if profile_weight(prior, k) > 0.0:
                    raise InvalidInputError(f"missing signal for outcome profile {o}")
                rows = [(tuple(float(b) for b in o), 1.0)]
            for y, w in rows:
                x = [0.0] * n
                for i in range(n):
                    x[sigma[i]] = float(y[i])
                key = tuple(x)
                acc[key] = acc.get(key, 0.0) + w / len(perms)
        plans[k] = TransportPlan(n=n, k=k, rows=list(acc.items()))

    family = MarginalFamily.from_plans(n, plans)
    return CalibratedSignaling(
        prior=prior, plans=plans, meta=SignalingMeta(Variant.CUSTOM, family=family)
    )


def raw_revenue(
    raw: Mapping[tuple[int, ...], list[tuple[tuple[float, ...], float]]], prior: PriorBySum
) -> float:
    """Revenue of an explicit profile-by-profile signaling."""
    total = 0.0
    for o, rows in raw.items():
        lam = profile_weight(prior, sum(o))
        total += lam * math.fsum(sorted(y)[-2] * w for y, w in rows)
    return total


def to_bundle(sig: CalibratedSignaling) -> dict:
    return {
        "prior": sig.prior.to_dict(),
        "meta": sig.meta.to_dict(),
        "plans": {str(k): sig.plans[k].to_dict() for k in sorted(sig.plans)},
    }


def from_bundle(data: Mapping[str, Any]) -> CalibratedSignaling:
    try:
        prior = from_mapping(data["prior"])
        meta_data = dict(data["meta"])
        plans = {int(k): TransportPlan.from_dict(v) for k, v in data["plans"].items()}
        variant = Variant(meta_data.pop("variant"))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise InvalidInputError(f"malformed signaling bundle: {e}") from e
    family_data = meta_data.pop("family", None)
    meta = SignalingMeta(
        variant=variant,
        t1=meta_data.pop("t1", None),
        t0=meta_data.pop("t0", None),
        family=MarginalFamily.from_dict(family_data) if family_data else None,
        flags=list(meta_data.pop("flags", [])),
        extra=meta_data,
    )
    return CalibratedSignaling(prior=prior, plans=plans, meta=meta)


def sample_profiles(
    sig: CalibratedSignaling, rng: np.random.Generator, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw (outcomes, bids), each of shape (size, n).

    Per sample: a class k by lambda, a plan row by weight, then one uniformly
    random permutation applied to both the canonical outcomes and the row.
    """
    n = sig.n
    ks = rng.choice(n + 1, size=size, p=sig.prior.array)
    outcomes = np.zeros((size, n), dtype=np.int8)
    bids = np.zeros((size, n))
    for k in range(n + 1):
        idx = np.flatnonzero(ks == k)
        if not idx.size:
            continue
        plan = sig.plans[k]
        table = np.asarray([b for b, _ in plan.rows])
        weights = np.asarray([w for _, w in plan.rows])
        picks = rng.choice(len(plan.rows), size=idx.size, p=weights / weights.sum())
        perm = np.argsort(rng.random((idx.size, n)), axis=1)
        canon_o = np.broadcast_to(np.asarray(_canonical(n, k), dtype=np.int8), (idx.size, n))
        placed_o = np.empty((idx.size, n), dtype=np.int8)
        placed_b = np.empty((idx.size, n))
        np.put_along_axis(placed_o, perm, canon_o, axis=1)
        np.put_along_axis(placed_b, perm, table[picks], axis=1)
        outcomes[idx] = placed_o
        bids[idx] = placed_b
    return outcomes, bids
