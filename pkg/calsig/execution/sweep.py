"""Revenue comparison over i.i.d. Bernoulli(p) priors: optimal, IR and full information."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass
from typing import Optional

import numpy as np
from loguru import logger

from calsig.config import get_settings
from calsig.core.checks import CalsigError, DegenerateInputError, InvalidInputError
from calsig.core.ir import ir_revenue, ir_revenue_floor, max_valid_epsilon
from calsig.core.prior import PriorBySum, from_bernoulli, full_info_revenue, welfare
from calsig.core.signaling import classify_region

SWEEP_HEADER = ("p", "welfare", "rev_opt", "rev_ir", "rev_full", "t1", "t0", "region")
EXACT_COLUMN = "ir_exact"


@dataclass
class SweepRow:
    p: float
    welfare: float
    rev_opt: float
    rev_ir: float
    rev_full: float
    t1: float
    t0: float
    region: int
    ir_exact: bool  # False: rev_ir is the analytic floor or a fallback

    def as_tuple(self, mark_exact: bool = False) -> tuple:
        values = astuple(self)
        return values[:-1] + ((int(self.ir_exact),) if mark_exact else ())


def _ir_column(prior: PriorBySum, p: float, epsilon: float, full: float) -> tuple[float, bool]:
    """IR revenue of the construction when eps is valid, else the floor."""
    try:
        limit = max_valid_epsilon(prior)
    except DegenerateInputError as e:
        logger.warning("p={}: {}; rev_ir falls back to full information", p, e)
        return full, False
    if epsilon <= limit:
        try:
            return ir_revenue(prior, epsilon), True
        except CalsigError as e:
            logger.warning("p={}: IR construction failed ({}); rev_ir is the floor", p, e)
    else:
        logger.warning(
            "p={}: epsilon={} exceeds the max valid {:.6g}; rev_ir is the floor", p, epsilon, limit
        )
    return ir_revenue_floor(prior, epsilon), False


def sweep_row(n: int, p: float, epsilon: float) -> SweepRow:
    prior = from_bernoulli(n, p)
    wel, full = welfare(prior), full_info_revenue(prior)
    try:
        region = classify_region(prior)
    except DegenerateInputError as e:
        # no interior thresholds: full information is the only candidate
        logger.warning("p={}: {}; reporting full-information revenue", p, e)
        return SweepRow(p, wel, full, full, full, 0.0, 0.0, 1, False)

    rev_ir, exact = _ir_column(prior, p, epsilon, full)
    return SweepRow(
        p=p,
        welfare=wel,
        rev_opt=region.revenue,
        rev_ir=rev_ir,
        rev_full=full,
        t1=region.t1,
        t0=region.t0,
        region=region.region,
        ir_exact=exact,
    )


def run_sweep(
    n: int,
    p_start: float,
    p_end: float,
    p_steps: int,
    epsilon: float,
    threads: Optional[int] = None,
) -> list[SweepRow]:
    if p_steps < 1:
        raise InvalidInputError(f"p_steps must be at least 1, got {p_steps}")
    if not 0.0 <= p_start <= p_end <= 1.0:
        raise InvalidInputError(f"need 0 <= p_start <= p_end <= 1, got [{p_start}, {p_end}]")
    if not math.isfinite(epsilon) or epsilon <= 0.0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    ps = [float(p) for p in np.linspace(p_start, p_end, p_steps)]
    threads = threads or get_settings().threads

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda p: sweep_row(n, p, epsilon), ps))
    else:
        rows = [sweep_row(n, p, epsilon) for p in ps]
    rows.sort(key=lambda r: r.p)
    logger.info("sweep n={} over {} values of p", n, len(rows))
    return rows
