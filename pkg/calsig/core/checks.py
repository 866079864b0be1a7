from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class CalsigError(Exception):
    """Base class for every error raised by calsig."""
    pass


class InvalidInputError(CalsigError):
    """Raised for malformed priors, distributions, sizes or files."""
    pass


class DegenerateInputError(CalsigError):
    """Raised when a prior sits on a boundary the construction cannot handle."""
    pass


class InfeasibleError(CalsigError):
    """Raised when a linear program has no feasible point."""
    pass


class UnboundedError(CalsigError):
    """Raised when a linear program is unbounded."""
    pass


class SolverError(CalsigError):
    """Raised on numerical failure inside an LP solver."""
    pass


class Verdict(str, Enum):
    """Outcome of a check."""
    PASS = "pass"
    FAIL = "fail"


@dataclass
class Violation:
    """A single failed check."""
    rule_id: str
    severity: str  # error, warning, info
    message: str
    location: Optional[str] = None
    suggested_fix: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "severity": self.severity,
            "message": self.message,
            "location": self.location,
            "suggested_fix": self.suggested_fix,
        }


@dataclass
class CheckReport:
    """Result of a numerical check: the worst residual plus what went wrong."""
    name: str
    passed: bool
    worst: float = 0.0
    tolerance: float = 0.0
    violations: list[Violation] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def verdict(self) -> Verdict:
        return Verdict.PASS if self.passed else Verdict.FAIL

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict.value,
            "worst": self.worst,
            "tolerance": self.tolerance,
            "violations": [v.to_dict() for v in self.violations],
            "details": self.details,
        }

    @classmethod
    def combine(cls, name: str, reports: list["CheckReport"]) -> "CheckReport":
        """Merge sub-reports; the result passes only if all of them pass."""
        violations = [v for r in reports for v in r.violations]
        return cls(
            name=name,
            passed=all(r.passed for r in reports),
            worst=max((r.worst for r in reports), default=0.0),
            violations=violations,
            details={r.name: r.to_dict() for r in reports},
        )
