"""Duration helpers.  Every duration inside the package is integer seconds."""

import re
from datetime import timedelta

HOUR = 3600
DAY = 86400

_UNITS = {"s": 1, "m": 60, "h": HOUR, "d": DAY}
_PATTERN = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([smhd]?)\s*$")


def to_seconds(value) -> int:
    """Accept a timedelta, a number of seconds, or a string like ``"1h"``."""
    if isinstance(value, timedelta):
        return int(value.total_seconds())
    if isinstance(value, str):
        return parse_duration(value)
    return int(value)


def parse_duration(text: str) -> int:
    match = _PATTERN.match(text)
    if not match:
        raise ValueError(f"cannot parse duration {text!r} (expected e.g. 30m, 1h, 2d)")
    number, unit = match.groups()
    seconds = float(number) * _UNITS[unit or "s"]
    if not seconds.is_integer():
        raise ValueError(f"duration {text!r} is not a whole number of seconds")
    return int(seconds)


def parse_duration_list(text: str) -> list[int]:
    return [parse_duration(part) for part in text.split(",") if part.strip()]


def format_duration(seconds: int) -> str:
    for unit in ("d", "h", "m"):
        size = _UNITS[unit]
        if seconds % size == 0:
            return f"{seconds // size}{unit}"
    return f"{seconds}s"
