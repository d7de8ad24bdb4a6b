from datetime import timedelta

import pytest

from medfund.units import DAY, HOUR, format_duration, parse_duration, parse_duration_list, to_seconds


@pytest.mark.parametrize("text, seconds", [
    ("1h", HOUR), ("30m", 1800), ("2d", 2 * DAY), ("3600s", 3600), ("45", 45), ("1.5h", 5400),
])
def test_parse_duration(text, seconds):
    assert parse_duration(text) == seconds


@pytest.mark.parametrize("bad", ["", "h", "1w", "-1h", "0.5s"])
def test_parse_duration_rejects(bad):
    with pytest.raises(ValueError):
        parse_duration(bad)


def test_duration_list_and_format_round_trip():
    windows = parse_duration_list("1d, 2d,3d")
    assert windows == [DAY, 2 * DAY, 3 * DAY]
    assert [format_duration(w) for w in windows] == ["1d", "2d", "3d"]
    assert format_duration(5400) == "90m"
    assert format_duration(61) == "61s"


def test_to_seconds_accepts_several_forms():
    assert to_seconds(timedelta(hours=2)) == 2 * HOUR
    assert to_seconds("2h") == 2 * HOUR
    assert to_seconds(7200) == 2 * HOUR
