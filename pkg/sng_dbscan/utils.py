import logging
import math
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from sng_dbscan.errors import ParameterError

_MASK64 = (1 << 64) - 1

# counter word 2 of every Philox stream; keeps consumers of one seed apart
DOMAIN_GRAPH = 1
DOMAIN_SYNTHETIC = 2
DOMAIN_EDGE_TRIALS = 3


def _setup_logger(level=logging.INFO):
    log_format = logging.Formatter("[%(asctime)s %(levelname)s] %(message)s")
    logger = logging.getLogger()
    logger.setLevel(level)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(log_format)
    logger.handlers = [console_handler]

    return logger


def substream(seed: int, stream: int = 0, domain: int = 0) -> np.random.Generator:
    """
    Counter-based generator for (seed, domain, stream).

    The seed is the Philox key; domain and stream select disjoint counter blocks,
    so the draws of one stream never depend on how many others were consumed.
    """
    bit_generator = np.random.Philox(
        key=int(seed) & _MASK64, counter=[0, 0, int(domain), int(stream)]
    )
    return np.random.Generator(bit_generator)


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return int(seed)
    env_seed = os.environ.get("SNG_SEED")
    if env_seed is None or env_seed.strip() == "":
        return 0
    try:
        return int(env_seed)
    except ValueError:
        raise ParameterError(f"SNG_SEED must be an integer, got {env_seed!r}")


def unit_ball_volume(dim: int) -> float:
    """v_D = pi^(D/2) / Gamma(D/2 + 1)."""
    if dim < 1:
        raise ParameterError(f"dimension must be >= 1, got {dim}")
    return float(math.exp(0.5 * dim * math.log(math.pi) - gammaln(0.5 * dim + 1.0)))


def stderr(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def read_config(path: str) -> Dict[str, str]:
    """Reads `key=value` lines; `#` starts a comment."""
    config = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            config[key.strip().lower()] = value.strip()
    return config


def parse_vector(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise ParameterError(f"expected comma separated numbers, got {text!r}")


def parse_vectors(text: str) -> List[List[float]]:
    return [parse_vector(chunk) for chunk in text.split(";") if chunk.strip() != ""]


def as_list(value) -> list:
    """Fire hands over scalars, tuples or lists for grid flags."""
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        return [v for v in value.replace(";", ",").split(",") if v.strip() != ""]
    return [value]


def as_float(value, flag: str) -> float:
    """A bare flag reaches us as True; that is a missing value, not 1.0."""
    if isinstance(value, bool):
        raise ParameterError(f"--{flag.replace('_', '-')} needs a numeric value")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"--{flag.replace('_', '-')} must be a number, got {value!r}")
