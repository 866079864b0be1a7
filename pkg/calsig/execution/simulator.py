"""
Monte-Carlo second-price auctions under a calibrated signaling.

Samples are split into shards; shard i draws from the i-th child of
SeedSequence([seed]) and the shard tallies are added in shard order, so a
report depends only on (signaling, samples, seed, shards).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger

from calsig.config import get_settings
from calsig.core.checks import InvalidInputError
from calsig.core.signaling import CalibratedSignaling, sample_profiles

DEFAULT_SHARDS = 4


@dataclass
class SignalStat:
    """How often a bid value was sent and how often its receiver was clicked."""
    value: float
    hits: int
    clicks: int

    @property
    def rate(self) -> float:
        return self.clicks / self.hits if self.hits else float("nan")

    @property
    def stderr(self) -> float:
        """Binomial standard error of the rate if the signal is calibrated."""
        return math.sqrt(self.value * (1.0 - self.value) / self.hits) if self.hits else float("nan")


@dataclass
class _Tally:
    count: int = 0
    revenue: float = 0.0
    revenue_sq: float = 0.0
    utility: Optional[np.ndarray] = None
    utility_sq: Optional[np.ndarray] = None
    signals: dict[float, list[int]] = field(default_factory=dict)

    def add(self, other: "_Tally") -> None:
        self.count += other.count
        self.revenue += other.revenue
        self.revenue_sq += other.revenue_sq
        if other.utility is not None:
            if self.utility is None:
                self.utility = other.utility.copy()
                self.utility_sq = other.utility_sq.copy()  # type: ignore[union-attr]
            else:
                self.utility += other.utility
                self.utility_sq += other.utility_sq  # type: ignore[operator]
        for x, (hits, clicks) in other.signals.items():
            entry = self.signals.setdefault(x, [0, 0])
            entry[0] += hits
            entry[1] += clicks


@dataclass
class SimReport:
    samples: int
    revenue_mean: float
    revenue_stderr: float
    calibration: list[SignalStat]
    utility_mean: list[float]
    utility_stderr: list[float]
    seed: int
    shards: int

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "seed": self.seed,
            "shards": self.shards,
            "revenue_mean": self.revenue_mean,
            "revenue_stderr": self.revenue_stderr,
            "utility_mean": list(self.utility_mean),
            "utility_stderr": list(self.utility_stderr),
            "calibration": [
                {"value": s.value, "hits": s.hits, "clicks": s.clicks, "rate": s.rate}
                for s in self.calibration
            ],
        }

    def to_csv_rows(self) -> list[tuple[float, int, int, float]]:
        return [(s.value, s.hits, s.clicks, s.rate) for s in self.calibration]


CSV_HEADER = ("value", "hits", "clicks", "rate")


def _stderr(total: float, total_sq: float, count: int) -> float:
    if count < 2:
        return 0.0
    mean = total / count
    var = max(total_sq - count * mean * mean, 0.0) / (count - 1)
    return math.sqrt(var / count)


def _run_shard(sig: CalibratedSignaling, seq: np.random.SeedSequence, size: int) -> _Tally:
    rng = np.random.default_rng(seq)
    outcomes, bids = sample_profiles(sig, rng, size)
    rows = np.arange(size)
    price = np.sort(bids, axis=1)[:, -2]
    top = bids.max(axis=1)
    # uniform tie-break: random score among the top bidders only
    scores = np.where(bids == top[:, None], rng.random(bids.shape), -1.0)
    winner = np.argmax(scores, axis=1)
    utility = np.zeros(bids.shape)
    utility[rows, winner] = outcomes[rows, winner] - price

    values, inverse = np.unique(bids.ravel(), return_inverse=True)
    hits = np.bincount(inverse, minlength=len(values))
    clicks = np.bincount(inverse, weights=outcomes.ravel(), minlength=len(values))
    return _Tally(
        count=size,
        revenue=float(price.sum()),
        revenue_sq=float(np.dot(price, price)),
        utility=utility.sum(axis=0),
        utility_sq=(utility**2).sum(axis=0),
        signals={
            float(x): [int(h), int(round(c))] for x, h, c in zip(values, hits, clicks)
        },
    )


def run(
    sig: CalibratedSignaling,
    samples: int,
    seed: int = 0,
    shards: int = DEFAULT_SHARDS,
    threads: Optional[int] = None,
) -> SimReport:
    if samples < 1:
        raise InvalidInputError(f"samples must be at least 1, got {samples}")
    shards = max(min(shards, samples), 1)
    threads = threads or get_settings().threads
    sizes = [samples // shards + (1 if i < samples % shards else 0) for i in range(shards)]
    children = np.random.SeedSequence([seed]).spawn(shards)

    if threads > 1 and shards > 1:
        with ThreadPoolExecutor(max_workers=min(threads, shards)) as pool:
            tallies = list(pool.map(lambda a: _run_shard(sig, *a), zip(children, sizes)))
    else:
        tallies = [_run_shard(sig, c, s) for c, s in zip(children, sizes)]

    total = _Tally()
    for t in tallies:
        total.add(t)
    n = sig.n
    utility = total.utility if total.utility is not None else np.zeros(n)
    utility_sq = total.utility_sq if total.utility_sq is not None else np.zeros(n)

    report = SimReport(
        samples=samples,
        revenue_mean=total.revenue / samples,
        revenue_stderr=_stderr(total.revenue, total.revenue_sq, samples),
        calibration=[
            SignalStat(value=x, hits=h, clicks=c) for x, (h, c) in sorted(total.signals.items())
        ],
        utility_mean=[float(u) / samples for u in utility],
        utility_stderr=[_stderr(float(u), float(q), samples) for u, q in zip(utility, utility_sq)],
        seed=seed,
        shards=shards,
    )
    logger.info(
        "simulated {} auctions: revenue {:.6f} +- {:.6f}",
        samples, report.revenue_mean, report.revenue_stderr,
    )
    return report
