"""
File I/O for priors, signaling bundles, reports and CSV tables.

Inputs are parsed with yaml.safe_load, which reads JSON as well as YAML.
Outputs are JSON with sorted plan keys, and CSV with 12 significant digits.
"""

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import yaml
from loguru import logger

from calsig.core.checks import InvalidInputError
from calsig.core.prior import PriorBySum, from_mapping
from calsig.core.signaling import CalibratedSignaling, from_bundle, to_bundle

PathLike = Union[str, Path]


def format_number(value: Any) -> str:
    if isinstance(value, bool) or isinstance(value, int):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def read_document(path: PathLike) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise InvalidInputError(f"cannot read {path}: {e}") from e
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise InvalidInputError(f"{path} is not valid JSON/YAML: {e}") from e


def write_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2))
    logger.debug("wrote {}", path)
    return path


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(v) for v in row])
    logger.debug("wrote {}", path)
    return path


def load_prior(path: PathLike) -> PriorBySum:
    data = read_document(path)
    if isinstance(data, dict) and "prior" in data:
        data = data["prior"]
    return from_mapping(data)


def save_signaling(path: PathLike, sig: CalibratedSignaling) -> Path:
    return write_json(path, to_bundle(sig))


def load_signaling(path: PathLike) -> CalibratedSignaling:
    data = read_document(path)
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path} does not hold a signaling bundle")
    return from_bundle(data)
