import hashlib
import json
import math
import statistics
from typing import Any, Iterable, Optional, Sequence

TOOL_VERSION = "1.0.0"

UNDEFINED = "undefined"
"""Report value of a ratio whose denominator is zero."""


def canonical_json(data: Any) -> str:
    """Serializes *data* with sorted keys and fixed separators so equal data gives equal bytes."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def safe_ratio(num: float, den: float) -> Optional[float]:
    """Returns num/den, or None when den is zero."""
    if den == 0:
        return None
    return num / den


def mean_or_none(values: Iterable[float]) -> Optional[float]:
    data = list(values)
    if not data:
        return None
    return math.fsum(data) / len(data)


def median_period(times: Sequence[float]) -> float:
    """Median spacing of sorted *times*; 0.0 for fewer than two samples."""
    if len(times) < 2:
        return 0.0
    return float(statistics.median(b - a for a, b in zip(times, times[1:])))


def wrap_angle(angle: float, period: float = 2.0 * math.pi) -> float:
    """Maps *angle* into [-period/2, period/2)."""
    half = period / 2.0
    return (angle + half) % period - half
