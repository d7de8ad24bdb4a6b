import io
import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medfund.event_log import (RELATIONSHIPS, CampaignRecord, DuplicateCaseError, dump_line, format_time,
                               parse_logs, parse_time, read_logs, truncate_window, validate_campaign,
                               write_logs, write_rejects)
from medfund.units import DAY, HOUR

from conftest import T0, donate, make_profile, make_record, share, verify


def lines(*objs) -> bytes:
    return "".join(dump_line(o) + "\n" for o in objs).encode()


def profile_line(case_id, **kw):
    return make_profile(case_id, **kw).to_dict()


def share_line(user, case_id="c1", offset=0, source="F"):
    return share(user, source, offset, case_id).to_dict()


def test_time_round_trip():
    assert parse_time("2019-03-01T00:00:00Z") == T0
    assert parse_time("2019-03-01T08:00:00+08:00") == T0
    assert parse_time("2019-03-01T00:00:00.900Z") == T0
    assert format_time(T0 + 61) == "2019-03-01T00:01:01Z"


def test_groups_events_by_case():
    result = parse_logs(
        lines(profile_line("c1"), profile_line("c2")),
        lines(share_line("F"), share_line("A", offset=60), share_line("B", offset=120)),
    )
    assert result.rejects == []
    c1, c2 = result.records
    assert [s.user_id for s in c1.shares] == ["F", "A", "B"]
    assert c2.case_id == "c2"
    assert c2.shares == c2.donations == c2.verifications == ()


def test_empty_event_stream():
    result = parse_logs(lines(profile_line("c1")), b"")
    assert len(result.records) == 1
    record = result.records[0]
    assert (record.shares, record.donations, record.verifications) == ((), (), ())


def test_malformed_lines_are_rejected_and_parsing_continues():
    bad_share = share_line("A")
    del bad_share["user_id"]
    events = lines(share_line("F"), bad_share, share_line("B", offset=5)) + b"{not json\n"
    result = parse_logs(lines(profile_line("c1")), events)
    assert [s.user_id for s in result.records[0].shares] == ["F", "B"]
    assert [(r.stream, r.line_number) for r in result.rejects] == [("events", 2), ("events", 4)]
    assert "user_id" in result.rejects[0].reason


def test_unknown_case_events_go_to_rejects():
    result = parse_logs(lines(profile_line("c1")), lines(share_line("F", case_id="zzz")))
    assert result.records[0].shares == ()
    assert len(result.rejects) == 1 and "zzz" in result.rejects[0].reason


def test_duplicate_profile_is_fatal():
    with pytest.raises(DuplicateCaseError):
        parse_logs(lines(profile_line("c1"), profile_line("c1")), b"")


def test_events_sorted_by_time_ties_keep_input_order():
    events = lines(share_line("late", offset=50), share_line("tie1", offset=10), share_line("tie2", offset=10))
    record = parse_logs(lines(profile_line("c1")), events).records[0]
    assert [s.user_id for s in record.shares] == ["tie1", "tie2", "late"]


def test_absent_source_is_none():
    events = [share_line("A", source=None), {**share_line("B"), "source_id": ""}]
    missing_key = share_line("C")
    del missing_key["source_id"]
    record = parse_logs(lines(profile_line("c1")), lines(*events, missing_key)).records[0]
    assert [s.source_id for s in record.shares] == [None, None, None]


def test_blank_lines_skipped_and_rejects_written():
    result = parse_logs(b"\n" + lines(profile_line("c1")) + b"\n", b"\n\n")
    assert len(result.records) == 1 and result.rejects == []
    out = io.StringIO()
    write_rejects(parse_logs(lines(profile_line("c1")), b"[]\n").rejects, out)
    row = json.loads(out.getvalue())
    assert row["line_number"] == 1 and row["stream"] == "events"


def test_read_logs_from_files(tmp_path):
    (tmp_path / "p.jsonl").write_bytes(lines(profile_line("c1")))
    (tmp_path / "e.jsonl").write_bytes(lines(share_line("F")))
    result = read_logs(tmp_path / "p.jsonl", tmp_path / "e.jsonl")
    assert result.records[0].shares[0].user_id == "F"


# -- validation -------------------------------------------------------------------------

def test_thirty_day_period_is_valid():
    assert validate_campaign(make_record(period=30 * DAY))


def test_thirty_one_day_period_is_invalid():
    verdict = validate_campaign(make_record(period=31 * DAY))
    assert not verdict and verdict.reason == "period exceeds 30 days"


def test_one_second_over_thirty_days_is_invalid():
    assert not validate_campaign(make_record(period=30 * DAY + 1))


def test_zero_donation_is_invalid():
    verdict = validate_campaign(make_record(donations=[donate("A", 0.0, 10)]))
    assert verdict.reason == "non-positive donation"


@pytest.mark.parametrize("record, reason", [
    (make_record(period=-1), "end_time precedes start_time"),
    (make_record(target_amount=0.0), "non-positive target amount"),
    (make_record(obtained_amount=-1.0), "negative obtained amount"),
    (make_record(gender="x"), "unknown gender 'x'"),
    (make_record(shares=[share("F", None, -5)]), "event outside campaign period"),
    (make_record(shares=[share("F", None, 5, case_id="c9")]), "event references another case"),
    (make_record(verifications=[verify("A", "boss", 5)]), "unknown relationship 'boss'"),
])
def test_invariant_failures(record, reason):
    assert validate_campaign(record).reason == reason


def test_unsorted_events_are_invalid():
    record = CampaignRecord(make_profile(), (share("B", "F", 20), share("F", None, 10)))
    assert validate_campaign(record).reason == "events not sorted by time"


def test_first_failure_wins():
    record = make_record(period=31 * DAY, donations=[donate("A", -1.0, 5)])
    assert validate_campaign(record).reason == "period exceeds 30 days"


# -- window truncation -----------------------------------------------------------------

def test_truncate_keeps_events_before_window():
    record = make_record(shares=[share("F", None, 0.5 * HOUR), share("A", "F", 25 * HOUR)])
    kept = truncate_window(record, 24 * HOUR)
    assert [s.user_id for s in kept.shares] == ["F"]
    assert kept.profile == record.profile


def test_truncate_full_period_is_identity():
    record = make_record(shares=[share("F", None, 0), share("A", "F", 29 * DAY)],
                         donations=[donate("A", 5.0, 30 * DAY - 1)])
    assert truncate_window(record, 30 * DAY) == record


def test_truncate_window_is_half_open():
    record = make_record(shares=[share("F", None, HOUR)])
    assert truncate_window(record, HOUR).shares == ()
    assert truncate_window(record, "1h").donations == ()


def test_truncate_rejects_nonpositive_window():
    with pytest.raises(ValueError):
        truncate_window(make_record(), 0)


# -- properties ----------------------------------------------------------------------------

offsets = st.integers(min_value=0, max_value=30 * DAY)


@st.composite
def records(draw):
    n_users = draw(st.integers(1, 6))
    users = [f"u{i}" for i in range(n_users)]
    shares = [share(draw(st.sampled_from(users)), draw(st.sampled_from([None, "PLATFORM", *users])), draw(offsets))
              for _ in range(draw(st.integers(0, 8)))]
    donations = [donate(draw(st.sampled_from(users)), draw(st.floats(0.01, 1e5).map(lambda x: round(x, 2))),
                        draw(offsets)) for _ in range(draw(st.integers(0, 5)))]
    verifications = [verify(draw(st.sampled_from(users)), draw(st.sampled_from(RELATIONSHIPS)), draw(offsets))
                     for _ in range(draw(st.integers(0, 4)))]
    content = draw(st.text(max_size=40))
    return make_record(shares, donations, verifications, content=content,
                       obtained_amount=draw(st.floats(0, 1e6).map(lambda x: round(x, 2))))


@settings(max_examples=60, deadline=None)
@given(records())
def test_parse_is_lossless(record):
    profiles, events = io.StringIO(), io.StringIO()
    write_logs([record], profiles, events)
    parsed = parse_logs(profiles.getvalue().encode(), events.getvalue().encode())
    assert parsed.rejects == []
    assert parsed.records == [record]
    again_p, again_e = io.StringIO(), io.StringIO()
    write_logs(parsed.records, again_p, again_e)
    assert Counter(again_e.getvalue().splitlines()) == Counter(events.getvalue().splitlines())
    assert again_p.getvalue() == profiles.getvalue()


@settings(max_examples=60, deadline=None)
@given(records(), st.integers(1, 31 * DAY), st.integers(1, 31 * DAY))
def test_truncate_idempotent_and_monotone(record, t1, t2):
    t1, t2 = sorted((t1, t2))
    once = truncate_window(record, t1)
    assert truncate_window(once, t1) == once
    wider = truncate_window(record, t2)
    for name in ("shares", "donations", "verifications"):
        assert set(getattr(once, name)) <= set(getattr(wider, name))


@settings(max_examples=60, deadline=None)
@given(records())
def test_valid_campaign_events_within_period(record):
    if validate_campaign(record):
        for event in record.events():
            assert record.profile.start_time <= event.time <= record.profile.end_time
