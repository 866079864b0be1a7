import os
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Union

import yaml
from dotenv import load_dotenv

from calsig.core.checks import InvalidInputError
from calsig.solvers.lp import LpMethod

load_dotenv()


def _default_threads() -> int:
    return max(os.cpu_count() or 1, 1)


@dataclass
class Settings:
    # Workers
    threads: int = 1
    seed: int = 0

    # Tolerances
    tol: float = 1e-9
    ir_tol: float = 1e-8

    # Solver
    lp_method: LpMethod = LpMethod.SIMPLEX

    # Logging
    log_level: str = "WARNING"

    @classmethod
    def from_env(cls) -> "Settings":
        try:
            return cls(
                threads=max(int(os.getenv("CALSIG_THREADS", str(_default_threads()))), 1),
                seed=int(os.getenv("CALSIG_SEED", "0")),
                tol=float(os.getenv("CALSIG_TOL", "1e-9")),
                ir_tol=float(os.getenv("CALSIG_IR_TOL", "1e-8")),
                lp_method=LpMethod(os.getenv("CALSIG_LP_METHOD", "simplex").lower()),
                log_level=os.getenv("CALSIG_LOG_LEVEL", "WARNING").upper(),
            )
        except ValueError as e:
            raise InvalidInputError(f"bad CALSIG_* environment value: {e}") from e

    def load(self, path: Union[str, Path]) -> "Settings":
        """Overlay a YAML file holding any subset of the fields."""
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise InvalidInputError(f"cannot read settings from {path}: {e}") from e
        if not isinstance(data, dict):
            raise InvalidInputError(f"{path} must hold a mapping")
        known = {f.name for f in fields(self)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown settings: {', '.join(sorted(unknown))}")
        if "lp_method" in data:
            data["lp_method"] = LpMethod(str(data["lp_method"]).lower())
        if "threads" in data:
            data["threads"] = max(int(data["threads"]), 1)
        return replace(self, **data)

    def to_dict(self) -> dict:
        return {
            "threads": self.threads,
            "seed": self.seed,
            "tol": self.tol,
            "ir_tol": self.ir_tol,
            "lp_method": self.lp_method.value,
            "log_level": self.log_level,
        }


@lru_cache()
def get_settings() -> Settings:
    return Settings.from_env()
