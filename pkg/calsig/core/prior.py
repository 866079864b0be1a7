"""
Symmetric priors over click-outcome profiles.

A symmetric prior on {0,1}^n is fully described by its outcome-sum
distribution lambda[k] = P(exactly k ones); every profile with k ones has
probability lambda[k] / C(n, k). Nothing downstream ever enumerates the
2^n profiles except the tiny-n oracles.
"""

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from loguru import logger
from scipy.special import comb
from scipy.stats import binom

from calsig.core.checks import InvalidInputError

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class PriorBySum:
    """Outcome-sum marginal of a symmetric prior (lambda_0..lambda_n)."""
    n: int
    lam: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.n < 2:
            raise InvalidInputError(f"need at least two bidders, got n={self.n}")
        if len(self.lam) != self.n + 1:
            raise InvalidInputError(
                f"lambda must have n+1={self.n + 1} entries, got {len(self.lam)}"
            )
        arr = np.asarray(self.lam, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise InvalidInputError("lambda entries must be finite and non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise InvalidInputError(f"lambda must sum to 1 (got {total!r})")

    def __getitem__(self, k: int) -> float:
        return self.lam[k]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.lam, dtype=float)

    def to_dict(self) -> dict:
        return {"n": self.n, "lambda": list(self.lam)}


def from_bernoulli(n: int, p: float) -> PriorBySum:
    """i.i.d. Bernoulli(p) outcomes: lambda is the Binomial(n, p) pmf."""
    if n < 2:
        raise InvalidInputError(f"need at least two bidders, got n={n}")
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"p must lie in [0, 1], got {p}")
    lam = binom.pmf(np.arange(n + 1), n, p)
    # pmf is exact to a few ulps; renormalise so the simplex check is tight
    lam = lam / lam.sum()
    return PriorBySum(n=n, lam=tuple(float(v) for v in lam))


def from_mapping(data: Mapping[str, Any]) -> PriorBySum:
    """Build a prior from {"n", "lambda"} or {"bernoulli": {"n", "p"}}."""
    if not isinstance(data, Mapping):
        raise InvalidInputError("prior must be a mapping")
    if "bernoulli" in data:
        spec = data["bernoulli"]
        try:
            return from_bernoulli(int(spec["n"]), float(spec["p"]))
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"malformed bernoulli prior: {e}") from e
    try:
        n = int(data["n"])
        lam = tuple(float(v) for v in data["lambda"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"malformed prior: {e}") from e
    logger.debug("loaded prior n={} lambda={}", n, lam)
    return PriorBySum(n=n, lam=lam)


def profile_weight(prior: PriorBySum, k: int) -> float:
    """Probability of one particular outcome profile with k ones."""
    return prior[k] / float(comb(prior.n, k, exact=True))


def welfare(prior: PriorBySum) -> float:
    """Maximum attainable value: the item is clicked whenever some outcome is 1."""
    return float(sum(prior.lam[1:]))


def full_info_revenue(prior: PriorBySum) -> float:
    """Revenue of full revelation: the price is 1 iff at least two outcomes are 1."""
    return float(sum(prior.lam[2:]))
