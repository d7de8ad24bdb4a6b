"""Case profiles and share/donate/verify activity logs.

Both input files are JSON lines.  Timestamps are RFC-3339 strings on the
wire and integer POSIX seconds (UTC) in memory; window arithmetic always
uses offsets from the case's ``start_time``.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import IO, Iterable, NamedTuple, Optional, Union

from .units import to_seconds

GENDERS = ("male", "female", "unknown")
RELATIONSHIPS = ("relative", "friend", "colleague", "classmate", "neighbor", "other")
EVENT_TYPES = ("share", "donate", "verify")

MAX_PERIOD = 30 * 86400

PROFILE_FIELDS = (
    "case_id", "age", "gender", "target_amount", "obtained_amount",
    "domicile_province", "hospital_province", "title", "content",
    "start_time", "end_time",
)


class DuplicateCaseError(ValueError):
    pass


def parse_time(value: str) -> int:
    """RFC-3339 string -> POSIX seconds (sub-second part truncated)."""
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() // 1)


def format_time(seconds: int) -> str:
    return datetime.fromtimestamp(seconds, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _number(value):
    # canonical JSON form: integral amounts print without a trailing .0
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


@dataclass(frozen=True, slots=True)
class CaseProfile:
    case_id: str
    fundraiser_age: int
    gender: str
    target_amount: float
    obtained_amount: float
    domicile_province: str
    hospital_province: str
    title: str
    content: str
    start_time: int
    end_time: int

    @property
    def period(self) -> int:
        return self.end_time - self.start_time

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "age": self.fundraiser_age,
            "gender": self.gender,
            "target_amount": _number(self.target_amount),
            "obtained_amount": _number(self.obtained_amount),
            "domicile_province": self.domicile_province,
            "hospital_province": self.hospital_province,
            "title": self.title,
            "content": self.content,
            "start_time": format_time(self.start_time),
            "end_time": format_time(self.end_time),
        }


@dataclass(frozen=True, slots=True)
class ShareEvent:
    user_id: str
    source_id: Optional[str]  # None means the source is absent from the log
    time: int
    case_id: str
    channel: str = ""

    def to_dict(self) -> dict:
        return {
            "event_type": "share",
            "user_id": self.user_id,
            "source_id": self.source_id,
            "time": format_time(self.time),
            "case_id": self.case_id,
            "channel": self.channel,
        }


@dataclass(frozen=True, slots=True)
class DonateEvent:
    user_id: str
    case_id: str
    amount: float
    time: int

    def to_dict(self) -> dict:
        return {
            "event_type": "donate",
            "user_id": self.user_id,
            "case_id": self.case_id,
            "amount": _number(self.amount),
            "time": format_time(self.time),
        }


@dataclass(frozen=True, slots=True)
class VerifyEvent:
    user_id: str
    case_id: str
    time: int
    relationship: str

    def to_dict(self) -> dict:
        return {
            "event_type": "verify",
            "user_id": self.user_id,
            "case_id": self.case_id,
            "time": format_time(self.time),
            "relationship": self.relationship,
        }


Event = Union[ShareEvent, DonateEvent, VerifyEvent]


@dataclass(frozen=True, slots=True)
class CampaignRecord:
    profile: CaseProfile
    shares: tuple[ShareEvent, ...] = ()
    donations: tuple[DonateEvent, ...] = ()
    verifications: tuple[VerifyEvent, ...] = ()

    @property
    def case_id(self) -> str:
        return self.profile.case_id

    def events(self) -> list[Event]:
        return [*self.shares, *self.donations, *self.verifications]


@dataclass(frozen=True)
class Reject:
    stream: str
    line_number: int
    reason: str

    def to_dict(self) -> dict:
        return {"stream": self.stream, "line_number": self.line_number, "reason": self.reason}


class ParseResult(NamedTuple):
    records: list[CampaignRecord]
    rejects: list[Reject]


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


# -- parsing -----------------------------------------------------------------

def _require(obj: dict, key: str):
    if key not in obj:
        raise ValueError(f"missing field {key}")
    value = obj[key]
    if value is None:
        raise ValueError(f"null field {key}")
    return value


def _str_field(obj: dict, key: str) -> str:
    value = _require(obj, key)
    if not isinstance(value, str):
        raise ValueError(f"field {key} must be a string")
    return value


def _num_field(obj: dict, key: str) -> float:
    value = _require(obj, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"field {key} must be a number")
    return value


def profile_from_dict(obj: dict) -> CaseProfile:
    age = _num_field(obj, "age")
    if int(age) != age or age < 0:
        raise ValueError("field age must be a non-negative integer")
    gender = _str_field(obj, "gender")
    if gender not in GENDERS:
        raise ValueError(f"unknown gender {gender!r}")
    return CaseProfile(
        case_id=_str_field(obj, "case_id"),
        fundraiser_age=int(age),
        gender=gender,
        target_amount=_num_field(obj, "target_amount"),
        obtained_amount=_num_field(obj, "obtained_amount"),
        domicile_province=_str_field(obj, "domicile_province"),
        hospital_province=_str_field(obj, "hospital_province"),
        title=_str_field(obj, "title"),
        content=_str_field(obj, "content"),
        start_time=parse_time(_str_field(obj, "start_time")),
        end_time=parse_time(_str_field(obj, "end_time")),
    )


def event_from_dict(obj: dict) -> Event:
    kind = _require(obj, "event_type")
    if kind == "share":
        source = obj.get("source_id")
        if source is not None and not isinstance(source, str):
            raise ValueError("field source_id must be a string or null")
        if source == "":
            source = None
        channel = obj.get("channel", "")
        if not isinstance(channel, str):
            raise ValueError("field channel must be a string")
        return ShareEvent(
            user_id=_str_field(obj, "user_id"),
            source_id=source,
            time=parse_time(_str_field(obj, "time")),
            case_id=_str_field(obj, "case_id"),
            channel=channel,
        )
    if kind == "donate":
        return DonateEvent(
            user_id=_str_field(obj, "user_id"),
            case_id=_str_field(obj, "case_id"),
            amount=_num_field(obj, "amount"),
            time=parse_time(_str_field(obj, "time")),
        )
    if kind == "verify":
        return VerifyEvent(
            user_id=_str_field(obj, "user_id"),
            case_id=_str_field(obj, "case_id"),
            time=parse_time(_str_field(obj, "time")),
            relationship=_str_field(obj, "relationship"),
        )
    raise ValueError(f"unknown event_type {kind!r}")


def _lines(stream) -> Iterable[tuple[int, str]]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    for number, raw in enumerate(stream, start=1):
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if line:
            yield number, line


def _decode(line: str) -> dict:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    return obj


def parse_logs(case_stream, event_stream) -> ParseResult:
    """Group profile and event lines into one CampaignRecord per case.

    Malformed lines and events whose case has no profile are reported as
    rejects and skipped.  A case_id appearing twice among the profiles is
    fatal (``DuplicateCaseError``).  Records come back in profile order,
    with events stably sorted by time.
    """
    rejects: list[Reject] = []
    profiles: dict[str, CaseProfile] = {}
    for number, line in _lines(case_stream):
        try:
            profile = profile_from_dict(_decode(line))
        except ValueError as exc:
            rejects.append(Reject("profiles", number, str(exc)))
            continue
        if profile.case_id in profiles:
            raise DuplicateCaseError(f"duplicate case_id {profile.case_id!r} at profiles line {number}")
        profiles[profile.case_id] = profile

    buckets: dict[str, tuple[list, list, list]] = {cid: ([], [], []) for cid in profiles}
    for number, line in _lines(event_stream):
        try:
            event = event_from_dict(_decode(line))
        except ValueError as exc:
            rejects.append(Reject("events", number, str(exc)))
            continue
        bucket = buckets.get(event.case_id)
        if bucket is None:
            rejects.append(Reject("events", number, f"unknown case_id {event.case_id!r}"))
            continue
        slot = 0 if isinstance(event, ShareEvent) else 1 if isinstance(event, DonateEvent) else 2
        bucket[slot].append(event)

    records = []
    for cid, profile in profiles.items():
        shares, donations, verifications = buckets[cid]
        # sorted() is stable, so ties keep input order
        key = lambda e: e.time  # noqa: E731
        records.append(CampaignRecord(
            profile,
            tuple(sorted(shares, key=key)),
            tuple(sorted(donations, key=key)),
            tuple(sorted(verifications, key=key)),
        ))
    return ParseResult(records, rejects)


def read_logs(profiles_path, events_path) -> ParseResult:
    with open(profiles_path, "rb") as cases, open(events_path, "rb") as events:
        return parse_logs(cases, events)


def dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_logs(records: Iterable[CampaignRecord], profiles_out: IO[str], events_out: IO[str]) -> None:
    """Serialize records in the same line formats ``parse_logs`` reads."""
    for record in records:
        profiles_out.write(dump_line(record.profile.to_dict()) + "\n")
        for event in record.events():
            events_out.write(dump_line(event.to_dict()) + "\n")


def write_rejects(rejects: Iterable[Reject], out: IO[str]) -> None:
    for reject in rejects:
        out.write(dump_line(reject.to_dict()) + "\n")


# -- validation ----------------------------------------------------------------

def validate_campaign(record: CampaignRecord) -> ValidityVerdict:
    """Check the 30-day rule and the type invariants; report the first failure."""
    p = record.profile
    if p.end_time < p.start_time:
        return ValidityVerdict(False, "end_time precedes start_time")
    if p.period > MAX_PERIOD:
        return ValidityVerdict(False, "period exceeds 30 days")
    if not p.target_amount > 0:
        return ValidityVerdict(False, "non-positive target amount")
    if p.obtained_amount < 0:
        return ValidityVerdict(False, "negative obtained amount")
    if p.gender not in GENDERS:
        return ValidityVerdict(False, f"unknown gender {p.gender!r}")
    for events in (record.shares, record.donations, record.verifications):
        last = None
        for event in events:
            if event.case_id != p.case_id:
                return ValidityVerdict(False, "event references another case")
            if not p.start_time <= event.time <= p.end_time:
                return ValidityVerdict(False, "event outside campaign period")
            if last is not None and event.time < last:
                return ValidityVerdict(False, "events not sorted by time")
            last = event.time
    for donation in record.donations:
        if not donation.amount > 0:
            return ValidityVerdict(False, "non-positive donation")
    for verification in record.verifications:
        if verification.relationship not in RELATIONSHIPS:
            return ValidityVerdict(False, f"unknown relationship {verification.relationship!r}")
    return ValidityVerdict(True)


def truncate_window(record: CampaignRecord, window: int) -> CampaignRecord:
    """Keep only events with offset from start_time in ``[0, window)`` seconds."""
    window = to_seconds(window)
    if window <= 0:
        raise ValueError("window must be positive")
    cutoff = record.profile.start_time + window
    return dataclasses.replace(
        record,
        shares=tuple(e for e in record.shares if e.time < cutoff),
        donations=tuple(e for e in record.donations if e.time < cutoff),
        verifications=tuple(e for e in record.verifications if e.time < cutoff),
    )

