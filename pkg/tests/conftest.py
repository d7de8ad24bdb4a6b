import pytest

from medfund.cascade import ROOT
from medfund.event_log import CampaignRecord, CaseProfile, DonateEvent, ShareEvent, VerifyEvent
from medfund.units import DAY, HOUR

T0 = 1_551_398_400  # 2019-03-01T00:00:00Z


def make_profile(case_id="c1", start=T0, period=30 * DAY, **overrides) -> CaseProfile:
    fields = dict(
        case_id=case_id, fundraiser_age=40, gender="female", target_amount=100_000.0,
        obtained_amount=0.0, domicile_province="Hunan", hospital_province="Beijing",
        title="help my father", content="", start_time=start, end_time=start + period,
    )
    fields.update(overrides)
    return CaseProfile(**fields)


def share(user, source, offset, case_id="c1", start=T0):
    return ShareEvent(user, source, start + int(offset), case_id, "moments")


def donate(user, amount, offset, case_id="c1", start=T0):
    return DonateEvent(user, case_id, amount, start + int(offset))


def verify(user, relationship, offset, case_id="c1", start=T0):
    return VerifyEvent(user, case_id, start + int(offset), relationship)


def make_record(shares=(), donations=(), verifications=(), **profile) -> CampaignRecord:
    key = lambda e: e.time  # noqa: E731
    return CampaignRecord(
        make_profile(**profile),
        tuple(sorted(shares, key=key)),
        tuple(sorted(donations, key=key)),
        tuple(sorted(verifications, key=key)),
    )


def ten_node_record():
    """Fundraiser subtree F->{A,B}, B->C->D; platform subtree P->Q->R; S and U unresolvable."""
    shares = [
        share("F", ROOT, 0),
        share("A", "F", 1 * HOUR),
        share("B", "F", 2 * HOUR),
        share("C", "B", 3 * HOUR),
        share("D", "C", 4 * HOUR),
        share("P", ROOT, 5 * HOUR),
        share("Q", "P", 6 * HOUR),
        share("R", "Q", 7 * HOUR),
        share("S", None, 8 * HOUR),
        share("U", "ghost", 9 * HOUR),
        share("A", "P", 10 * HOUR),  # repeat share: no new node or edge
    ]
    donations = [
        donate("A", 100.0, 11 * HOUR), donate("A", 50.0, 12 * HOUR),
        donate("C", 60.0, 13 * HOUR), donate("Q", 20.0, 14 * HOUR), donate("R", 40.0, 15 * HOUR),
        donate("F", 5.0, 16 * HOUR), donate("Z", 10.0, 17 * HOUR),
    ]
    return make_record(shares, donations)


@pytest.fixture
def chain_record():
    """F shares from the platform, A from F, B from A, C with no source."""
    return make_record(shares=[
        share("F", "PLATFORM", 0),
        share("A", "F", 1 * HOUR),
        share("B", "A", 2 * HOUR),
        share("C", None, 3 * HOUR),
    ])


# -- acceptance reporting -----------------------------------------------------------------

CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
