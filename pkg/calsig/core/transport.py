"""
Revenue-maximising couplings of per-class bid marginals.

For a class with k outcome-1 bidders, a coupling (transport plan) is a joint
distribution over bid profiles whose first k coordinates follow f1 and whose
remaining n-k coordinates follow f0. The seller's revenue from the class is
the plan's expected second-highest bid.

- correlate_general: greedy pairing construction, exact for k not in {1, n-1}
- correlate_k1_lp: LP over pairing measures for the one-distinguished-bidder case
- plan_from_k1: turns an LP solution into a plan
- correlate: dispatcher over all k
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger

from calsig.core.checks import CheckReport, InfeasibleError, InvalidInputError, Violation
from calsig.core.marginals import MERGE_TOL, DiscreteDist, min_secmax
from calsig.solvers.lp import LpMethod, solve_lp

POOL_EPS = 1e-15
PLAN_TOL = 1e-9
LP_ZERO = 1e-13

Row = tuple[tuple[float, ...], float]


@dataclass
class TransportPlan:
    """Canonical coupling for class k: coordinates 0..k-1 carry outcome 1."""
    n: int
    k: int
    rows: list[Row]

    def __post_init__(self) -> None:
        for bids, w in self.rows:
            if len(bids) != self.n:
                raise InvalidInputError(f"row {bids} does not have n={self.n} bids")
            if w < -PLAN_TOL:
                raise InvalidInputError(f"negative row weight {w}")

    @property
    def total_weight(self) -> float:
        return math.fsum(w for _, w in self.rows)

    def coordinate_marginal(self, i: int) -> DiscreteDist:
        return DiscreteDist.from_atoms((bids[i], w) for bids, w in self.rows)

    def values(self) -> set[float]:
        return {x for bids, _ in self.rows for x in bids}

    def expected_secmax(self) -> float:
        return math.fsum(secmax(bids) * w for bids, w in self.rows)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "rows": [{"bids": list(bids), "w": w} for bids, w in self.rows],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransportPlan":
        try:
            rows = [(tuple(float(b) for b in r["bids"]), float(r["w"])) for r in data["rows"]]
            return cls(n=int(data["n"]), k=int(data["k"]), rows=rows)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"malformed transport plan: {e}") from e


@dataclass
class K1Solution:
    """
    Pairing decomposition of a k = 1 coupling.

    m[(x, y)]: the distinguished bidder bids x and is one of the top two,
    alongside another bidder at y. h[y]: the distinguished bidder is not in
    the top two, two others tie at y.
    """
    m: dict[tuple[float, float], float]
    h: dict[float, float]
    value: float
    monotone: bool = True
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "m": [{"x": x, "y": y, "w": w} for (x, y), w in sorted(self.m.items())],
            "h": [{"y": y, "w": w} for y, w in sorted(self.h.items())],
            "value": self.value,
            "monotone": self.monotone,
            "flags": list(self.flags),
        }


def secmax(bids: tuple[float, ...]) -> float:
    """Second-largest entry (the maximum when it is shared)."""
    top = second = -math.inf
    for b in bids:
        if b > top:
            top, second = b, top
        elif b > second:
            second = b
    return second


def _merge_rows(rows: list[Row]) -> list[Row]:
    acc: dict[tuple[float, ...], float] = {}
    for bids, w in rows:
        acc[bids] = acc.get(bids, 0.0) + w
    return [(bids, w) for bids, w in acc.items() if w > POOL_EPS]


class _Pool:
    """Leftover mass of one coordinate (or group), consumed lowest value first."""

    def __init__(self, atoms: list[tuple[float, float]]):
        self.atoms = [[x, p] for x, p in sorted(atoms) if p > POOL_EPS]
        self.i = 0

    def lowest(self) -> tuple[float, float]:
        if not self.atoms:
            return 0.0, 0.0
        while self.i < len(self.atoms) - 1 and self.atoms[self.i][1] <= POOL_EPS:
            self.i += 1
        x, p = self.atoms[self.i]
        return x, max(p, 0.0)

    def take(self, amount: float) -> None:
        if self.atoms:
            self.atoms[self.i][1] -= amount

    def draw(self, weight: float) -> list[tuple[float, float]]:
        """Take `weight` from the lowest values; returns (value, amount) pieces."""
        out = []
        while weight > POOL_EPS:
            x, r = self.lowest()
            if r <= POOL_EPS:
                # exhausted by round-off
                out.append((x, weight))
                break
            take = min(weight, r)
            self.take(take)
            out.append((x, take))
            weight -= take
        return out


def _class_weights(
    k: int, f1: Optional[DiscreteDist], f0: Optional[DiscreteDist], n: int
) -> dict[float, float]:
    weights: dict[float, float] = {}
    if k >= 1 and f1 is not None:
        for x, p in f1.atoms():
            weights[x] = weights.get(x, 0.0) + 0.5 * k * p
    if k <= n - 1 and f0 is not None:
        for x, p in f0.atoms():
            weights[x] = weights.get(x, 0.0) + 0.5 * (n - k) * p
    return weights


def _check_inputs(
    k: int, f1: Optional[DiscreteDist], f0: Optional[DiscreteDist], n: int
) -> None:
    if n < 2:
        raise InvalidInputError(f"need at least two bidders, got n={n}")
    if not 0 <= k <= n:
        raise InvalidInputError(f"k must lie in [0, {n}], got {k}")
    if k >= 1 and f1 is None:
        raise InvalidInputError("f1 is required when k >= 1")
    if k <= n - 1 and f0 is None:
        raise InvalidInputError("f0 is required when k <= n - 1")


def predicted_secmax(
    k: int, f1: Optional[DiscreteDist], f0: Optional[DiscreteDist], n: int
) -> DiscreteDist:
    """Best achievable second-highest-bid law: all half-mass above t_k, the rest at t_k."""
    _check_inputs(k, f1, f0, n)
    t = min_secmax(k, f1, f0, n)
    weights = _class_weights(k, f1, f0, n)
    above = [(x, w) for x, w in weights.items() if x > t]
    residual = 1.0 - math.fsum(w for _, w in above)
    return DiscreteDist.from_atoms(above + [(t, residual)])


def secmax_upper_bound(
    k: int, f1: Optional[DiscreteDist], f0: Optional[DiscreteDist], n: int
) -> float:
    """Upper bound on the expected second-highest bid of any coupling of the pair."""
    _check_inputs(k, f1, f0, n)
    t = min_secmax(k, f1, f0, n)
    weights = _class_weights(k, f1, f0, n)
    return t + math.fsum((x - t) * w for x, w in weights.items() if x > t)


def correlate_general(
    k: int, f1: Optional[DiscreteDist], f0: Optional[DiscreteDist], n: int
) -> TransportPlan:
    """
    Pair bidders of the same outcome at every value from the top down to t_k.

    With m >= 3 bidders on a side, the pairs (i, i+1) are taken cyclically and
    each carries half the side's mass at x; with exactly two, one pair carries
    all of it. The remaining coordinates of each row are filled with the
    lowest leftover values, so every row has a shared maximum.
    """
    _check_inputs(k, f1, f0, n)
    if k in (1, n - 1):
        raise InvalidInputError(
            f"k={k} has a lone bidder on one side; use correlate_k1_lp or correlate"
        )

    t = min_secmax(k, f1, f0, n)
    weights = _class_weights(k, f1, f0, n)
    residual = 1.0 - math.fsum(w for x, w in weights.items() if x > t)
    scale_at_t = residual / weights[t] if weights.get(t, 0.0) > 0.0 else 0.0

    sides = []  # (dist, coordinates)
    if n - k >= 2:
        sides.append((f0, list(range(k, n))))
    if k >= 2:
        sides.append((f1, list(range(0, k))))

    pools: dict[int, _Pool] = {}
    for dist, coords in sides:
        atoms = [(x, p) for x, p in dist.atoms() if x < t]
        atoms.append((t, (1.0 - scale_at_t) * dist.mass_at(t)))
        for c in coords:
            pools[c] = _Pool(atoms)

    rows: list[Row] = []
    for x in sorted((v for v in weights if v >= t), reverse=True):
        scale = scale_at_t if x == t else 1.0
        for dist, coords in sides:
            mass = dist.mass_at(x) * scale
            if mass <= 0.0:
                continue
            size = len(coords)
            if size == 2:
                pairs = [((coords[0], coords[1]), mass)]
            else:
                pairs = [((coords[i], coords[(i + 1) % size]), 0.5 * mass) for i in range(size)]
            for (i, j), amount in pairs:
                fill = [c for c in range(n) if c not in (i, j)]
                while amount > POOL_EPS:
                    heads = [pools[c].lowest() for c in fill]
                    step = min([amount] + [r for _, r in heads if r > POOL_EPS])
                    bids = [0.0] * n
                    bids[i] = bids[j] = x
                    for c, (v, _) in zip(fill, heads):
                        bids[c] = v
                        pools[c].take(step)
                    rows.append((tuple(bids), step))
                    amount -= step

    plan = TransportPlan(n=n, k=k, rows=_merge_rows(rows))
    logger.debug("correlate_general k={} n={}: t_k={} rows={}", k, n, t, len(plan.rows))
    return plan


def induced_secmax(plan: TransportPlan) -> DiscreteDist:
    """Distribution of the second-highest bid under the plan."""
    return DiscreteDist.from_atoms((secmax(bids), w) for bids, w in plan.rows)


def _k1_domain(
    f11: DiscreteDist, f10: DiscreteDist, n: int, restrict_to_threshold: bool
) -> tuple[list[float], list[float]]:
    xs, ys = list(f11.support), list(f10.support)
    if restrict_to_threshold:
        t1 = min_secmax(1, f11, f10, n)
        xs = [x for x in xs if x >= t1 - MERGE_TOL]
        ys = [y for y in ys if y >= t1 - MERGE_TOL]
    return xs, ys


def _cdf(dist: DiscreteDist, v: float) -> float:
    return math.fsum(p for x, p in dist.atoms() if x <= v + MERGE_TOL)


def correlate_k1_lp(
    f11: DiscreteDist,
    f10: DiscreteDist,
    n: int,
    method: LpMethod = LpMethod.SIMPLEX,
    restrict_to_threshold: bool = False,
) -> K1Solution:
    """
    Best coupling of one distinguished bidder (f11) with n-1 others (f10).

    Maximises sum min(x, y) m(x, y) + sum y h(y) subject to capacity
    (each measure fits its marginal), total mass one, and admissibility: the
    leftover mass used as filler must fit at or below each row's second bid,
    for the distinguished bidder and for the others.
    """
    if n < 2:
        raise InvalidInputError(f"need at least two bidders, got n={n}")
    xs, ys = _k1_domain(f11, f10, n, restrict_to_threshold)
    nx, ny = len(xs), len(ys)
    nm = nx * ny
    nh = ny if n >= 3 else 0
    nv = nm + nh
    if not nx or not ny:
        raise InfeasibleError("empty pairing domain")

    c = np.zeros(nv)
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            c[i * ny + j] = min(x, y)
    c[nm:] = ys[:nh]

    rows, rhs = [], []
    for i, x in enumerate(xs):
        row = np.zeros(nv)
        row[i * ny:(i + 1) * ny] = 1.0
        rows.append(row)
        rhs.append(f11.mass_at(x))
    for j, y in enumerate(ys):
        row = np.zeros(nv)
        row[j:nm:ny] = 1.0
        if nh:
            row[nm + j] = 2.0
        rows.append(row)
        rhs.append((n - 1) * f10.mass_at(y))

    for v in sorted(set(f11.support) | set(f10.support)):
        h1 = np.zeros(nv)
        h2 = np.zeros(nv)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                if x <= v:
                    h1[i * ny + j] = 1.0
                h2[i * ny + j] = (n - 2) * (min(x, y) <= v) + (y <= v)
        for j, y in enumerate(ys[:nh]):
            if y <= v:
                h1[nm + j] = 1.0
                h2[nm + j] = n - 1
        rows += [h1, h2]
        rhs += [_cdf(f11, v), (n - 1) * _cdf(f10, v)]

    res = solve_lp(
        c,
        A_ub=np.vstack(rows),
        b_ub=np.asarray(rhs),
        A_eq=np.ones((1, nv)),
        b_eq=np.ones(1),
        method=method,
        maximize=True,
    )
    m = {
        (x, y): float(res.x[i * ny + j])
        for i, x in enumerate(xs)
        for j, y in enumerate(ys)
        if res.x[i * ny + j] > LP_ZERO
    }
    h = {y: float(res.x[nm + j]) for j, y in enumerate(ys[:nh]) if res.x[nm + j] > LP_ZERO}
    sol = K1Solution(m=m, h=h, value=res.objective)
    logger.debug("k1 lp n={}: {} variables, value {}", n, nv, sol.value)
    return monotone_rearrange(sol, f11, f10, n)


def _others_admissible(
    m: dict[tuple[float, float], float], h: dict[float, float], f10: DiscreteDist, n: int
) -> bool:
    values = sorted(set(f10.support) | {x for x, _ in m} | set(h))
    for v in values:
        demand = math.fsum(
            w * ((n - 2) * (min(x, y) <= v) + (y <= v)) for (x, y), w in m.items()
        ) + math.fsum((n - 1) * w for y, w in h.items() if y <= v)
        if demand > (n - 1) * _cdf(f10, v) + PLAN_TOL:
            return False
    return True


def _find_crossing(
    m: dict[tuple[float, float], float], blocked: set
) -> Optional[tuple[tuple[float, float], tuple[float, float]]]:
    keys = sorted(k for k, w in m.items() if w > LP_ZERO)
    for a in keys:
        for b in keys:
            if a[0] > b[0] and a[1] < b[1] and (a, b) not in blocked:
                return a, b
    return None


def _k1_value(m: dict[tuple[float, float], float], h: dict[float, float]) -> float:
    return math.fsum(min(x, y) * w for (x, y), w in m.items()) + math.fsum(
        y * w for y, w in h.items()
    )


def monotone_rearrange(
    sol: K1Solution, f11: DiscreteDist, f10: DiscreteDist, n: int, max_swaps: int = 1000
) -> K1Solution:
    """
    Uncross the pairing measure: if x > x' but y < y', move mass to (x, y') and (x', y).

    Row and column sums are unchanged and the value cannot drop. A swap is
    kept only when the others' admissibility constraints still hold.
    """
    m = dict(sol.m)
    blocked: set = set()
    for _ in range(max_swaps):
        crossing = _find_crossing(m, blocked)
        if crossing is None:
            break
        (x, y), (xp, yp) = crossing
        d = min(m[(x, y)], m[(xp, yp)])
        cand = dict(m)
        cand[(x, y)] -= d
        cand[(xp, yp)] -= d
        cand[(x, yp)] = cand.get((x, yp), 0.0) + d
        cand[(xp, y)] = cand.get((xp, y), 0.0) + d
        cand = {key: w for key, w in cand.items() if w > LP_ZERO}
        if _others_admissible(cand, sol.h, f10, n):
            m = cand
        else:
            blocked.add(crossing)

    monotone = _find_crossing(m, set()) is None
    flags = list(sol.flags)
    if not monotone:
        flags.append("pairing measure could not be uncrossed")
        logger.warning("k1 solution left non-monotone after rearrangement")
    return K1Solution(m=m, h=dict(sol.h), value=_k1_value(m, sol.h), monotone=monotone, flags=flags)


@dataclass
class _Piece:
    weight: float
    first: Optional[float]  # None: distinguished bidder takes a filler value
    fixed: list[float]
    slots: int
    threshold: float


def plan_from_k1(
    sol: K1Solution, f11: DiscreteDist, f10: DiscreteDist, n: int
) -> TransportPlan:
    """
    Build a k = 1 plan from a pairing decomposition.

    Pieces are processed by second-bid threshold, lowest first, and their
    filler slots take the lowest leftover values. Each row's others-multiset
    is spread over coordinates 1..n-1 by its n-1 cyclic shifts.
    """
    pieces = [
        _Piece(w, x, [y], n - 2, min(x, y)) for (x, y), w in sol.m.items()
    ] + [_Piece(w, None, [y, y], n - 3, y) for y, w in sol.h.items()]
    pieces.sort(key=lambda p: p.threshold)

    used1 = {x: 0.0 for x in f11.support}
    used0 = {y: 0.0 for y in f10.support}
    for (x, y), w in sol.m.items():
        used1[x] = used1.get(x, 0.0) + w
        used0[y] = used0.get(y, 0.0) + w
    for y, w in sol.h.items():
        used0[y] = used0.get(y, 0.0) + 2.0 * w
    left1 = [(x, f11.mass_at(x) - used1.get(x, 0.0)) for x in f11.support]
    left0 = [(y, (n - 1) * f10.mass_at(y) - used0.get(y, 0.0)) for y in f10.support]
    short = [v for v, r in left1 + left0 if r < -PLAN_TOL]
    if short:
        raise InfeasibleError(f"pairing measure exceeds the marginals at {short}")
    first_pool, others_pool = _Pool(left1), _Pool(left0)

    rows: list[Row] = []
    for piece in pieces:
        if piece.first is None:
            segments = [(amt, v, []) for v, amt in first_pool.draw(piece.weight)]
        else:
            segments = [(piece.weight, piece.first, [])]
        for _ in range(piece.slots):
            segments = [
                (amt, b, vals + [v])
                for ws, b, vals in segments
                for v, amt in others_pool.draw(ws)
            ]
        for ws, b, vals in segments:
            filler_first = piece.first is None and b > piece.threshold + PLAN_TOL
            if filler_first or any(v > piece.threshold + PLAN_TOL for v in vals):
                raise InfeasibleError(
                    f"filler above the second bid {piece.threshold}: admissibility violated"
                )
            others = sorted(piece.fixed + vals, reverse=True)
            size = n - 1
            for s in range(size):
                shifted = tuple(others[(j + s) % size] for j in range(size))
                rows.append(((b,) + shifted, ws / size))

    return TransportPlan(n=n, k=1, rows=_merge_rows(rows))


def _correlate_last(
    f1: DiscreteDist, f0: DiscreteDist, n: int, method: LpMethod
) -> TransportPlan:
    """Class k = n-1: a lone outcome-0 bidder."""
    if n >= 3 and f0.is_point(0.0):
        sub = correlate_general(n - 1, f1, None, n - 1)
        rows = [(bids + (0.0,), w) for bids, w in sub.rows]
        return TransportPlan(n=n, k=n - 1, rows=rows)
    sol = correlate_k1_lp(f0, f1, n, method=method)
    flipped = plan_from_k1(sol, f0, f1, n)
    rows = [(bids[1:] + bids[:1], w) for bids, w in flipped.rows]
    return TransportPlan(n=n, k=n - 1, rows=rows)


def correlate(
    k: int,
    f1: Optional[DiscreteDist],
    f0: Optional[DiscreteDist],
    n: int,
    method: LpMethod = LpMethod.SIMPLEX,
) -> TransportPlan:
    """Optimal coupling for any class k."""
    _check_inputs(k, f1, f0, n)
    if k == 1:
        assert f1 is not None and f0 is not None
        sol = correlate_k1_lp(f1, f0, n, method=method)
        return plan_from_k1(sol, f1, f0, n)
    if k == n - 1:
        assert f1 is not None and f0 is not None
        return _correlate_last(f1, f0, n, method)
    return correlate_general(k, f1, f0, n)


def check_plan_feasible(
    plan: TransportPlan,
    k: int,
    f1: Optional[DiscreteDist],
    f0: Optional[DiscreteDist],
    tol: float = PLAN_TOL,
) -> CheckReport:
    """Recompute every coordinate marginal and compare it with its target."""
    violations: list[Violation] = []
    worst = abs(plan.total_weight - 1.0)
    if worst > tol:
        violations.append(Violation(
            rule_id="PLAN-001",
            severity="error",
            message=f"row weights sum to {plan.total_weight:.12g}",
        ))
    if any(w < -tol for _, w in plan.rows):
        violations.append(Violation(rule_id="PLAN-002", severity="error", message="negative weight"))
        worst = max(worst, -min(w for _, w in plan.rows))
    if plan.k != k:
        violations.append(Violation(
            rule_id="PLAN-003", severity="error", message=f"plan is for k={plan.k}, not k={k}"
        ))
    for i in range(plan.n):
        target = f1 if i < k else f0
        if target is None:
            raise InvalidInputError(f"no target marginal for coordinate {i}")
        mass: dict[float, float] = {}
        for bids, w in plan.rows:
            mass[bids[i]] = mass.get(bids[i], 0.0) + w
        values = set(mass) | set(target.support)
        gap = max(abs(mass.get(v, 0.0) - target.mass_at(v)) for v in values)
        worst = max(worst, gap)
        if gap > tol:
            violations.append(Violation(
                rule_id="PLAN-004",
                severity="error",
                message=f"coordinate marginal off by {gap:.3e}",
                location=f"coordinate {i}",
            ))
    return CheckReport(
        name=f"plan_feasible[k={k}]",
        passed=not violations,
        worst=worst,
        tolerance=tol,
        violations=violations,
    )
