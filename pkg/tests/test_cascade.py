import io
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medfund.cascade import (ROOT, GroupDonationStats, VerificationHistogram, build_cascade, case_statistics,
                             classify_step1, donation_group_stats, partition_groups, platform_share_counts,
                             read_edge_list, read_edge_lists, verification_histogram, write_edge_list)
from medfund.event_log import RELATIONSHIPS

from conftest import donate, make_record, share, ten_node_record, verify


def test_chain_with_absent_source(chain_record):
    graph = build_cascade(chain_record)
    assert graph.fundraiser == "F"
    assert [(p, c) for p, c, _ in graph.edges] == [(ROOT, "F"), ("F", "A"), ("A", "B"), (ROOT, "C")]
    assert graph.fallback_nodes == {"C"}
    assert graph.nodes == {ROOT, "F", "A", "B", "C"}


def test_first_share_attachment():
    record = make_record(shares=[share("F", ROOT, 0), share("A", "F", 2), share("B", "A", 5), share("A", "B", 9)])
    graph = build_cascade(record)
    assert graph.parent["A"] == "F"
    assert len(graph.edges) == 3


def test_source_must_share_earlier():
    # A names B, but B's first share comes later: A goes to the root
    record = make_record(shares=[share("F", ROOT, 0), share("A", "B", 5), share("B", "A", 9)])
    graph = build_cascade(record)
    assert graph.parent == {"F": ROOT, "A": ROOT, "B": "A"}
    assert graph.fallback_nodes == {"A"}
    for parent, child, time in graph.edges:
        if parent != ROOT:
            assert dict((c, t) for _, c, t in graph.edges)[parent] <= time


def test_self_share_goes_to_root_with_warning(caplog):
    record = make_record(shares=[share("F", ROOT, 0), share("A", "A", 5)])
    with caplog.at_level(logging.WARNING, logger="medfund.cascade"):
        graph = build_cascade(record)
    assert graph.parent["A"] == ROOT
    assert "self-share" in caplog.text


def test_drop_unresolved_flag(chain_record):
    graph = build_cascade(chain_record, drop_unresolved=True)
    assert "C" not in graph.users
    assert graph.dropped_shares == 1 and graph.fallback_nodes == frozenset()


def test_case_without_shares():
    graph = build_cascade(make_record())
    assert graph.fundraiser == "c1:fundraiser"
    assert partition_groups(graph).p_g2 == 0.0
    assert classify_step1(graph) == set()


def test_ten_node_fixture():
    record = ten_node_record()
    graph = build_cascade(record)
    assert len(graph.users) == 10
    part = partition_groups(graph)
    assert part.g1 == {"F", "A", "B", "C", "D"}
    assert part.g2 == {"P", "Q", "R", "S", "U"}
    assert part.p_g2 == 0.5
    assert classify_step1(graph) == {"A", "B"}

    stats = donation_group_stats(graph, record.donations)
    assert stats.step1 == GroupDonationStats("step1", 2, 1, 150.0)
    assert stats.step1.donor_proportion == 0.5
    assert stats.step1.mean_amount == 150.0
    assert stats.other == GroupDonationStats("other", 7, 3, 120.0)
    assert stats.other.donor_proportion == pytest.approx(3 / 7)
    assert stats.other.mean_amount == 40.0
    # the fundraiser's own gift is in neither group; Z never shared
    assert (stats.nonsharer_donors, stats.nonsharer_amount) == (1, 10.0)
    assert sorted(stats.other_amounts) == [20.0, 40.0, 60.0]


def test_partition_examples():
    record = make_record(shares=[share("F", ROOT, 0), share("A", "F", 1), share("B", "A", 2), share("X", ROOT, 3)])
    part = partition_groups(build_cascade(record))
    assert (len(part.g1), len(part.g2), part.p_g2) == (3, 1, 0.25)
    only_fundraiser_line = make_record(shares=[share("F", ROOT, 0), share("A", "F", 1), share("B", "F", 2)])
    assert partition_groups(build_cascade(only_fundraiser_line)).p_g2 == 0.0


def test_group_partition_figure_fixture():
    # platform -> fundraiser -> {A, B}, A -> C ; platform -> P -> Q ; platform -> S
    record = make_record(shares=[
        share("F", ROOT, 0), share("A", "F", 10), share("P", ROOT, 15), share("B", "F", 20),
        share("Q", "P", 25), share("C", "A", 30), share("S", ROOT, 40),
    ])
    part = partition_groups(build_cascade(record))
    assert part.g1 == {"F", "A", "B", "C"}
    assert part.g2 == {"P", "Q", "S"}
    assert part.p_g2 == pytest.approx(3 / 7)


def test_step1_examples(chain_record):
    graph = build_cascade(make_record(shares=[share("F", ROOT, 0), share("A", "F", 1), share("B", "A", 2)]))
    assert classify_step1(graph) == {"A"}
    assert graph.users - classify_step1(graph) - {graph.fundraiser} == {"B"}
    assert classify_step1(build_cascade(make_record(shares=[share("F", ROOT, 0)]))) == set()


def test_donation_figure_fixture():
    # F -> {A, B}, B -> C ; one of the two step1 users donated
    record = make_record(
        shares=[share("F", ROOT, 0), share("A", "F", 1), share("B", "F", 2), share("C", "B", 3)],
        donations=[donate("B", 30.0, 4), donate("C", 10.0, 5)],
    )
    graph = build_cascade(record)
    assert classify_step1(graph) == {"A", "B"}
    stats = donation_group_stats(graph, record.donations)
    assert stats.step1.donor_proportion == 0.5
    assert stats.other.donor_proportion == 1.0


def test_donation_examples():
    record = make_record(
        shares=[share("F", ROOT, 0), share("A", "F", 1), share("B", "A", 2), share("C", "A", 3)],
        donations=[donate("A", 100.0, 4), donate("A", 50.0, 5), donate("B", 60.0, 6)],
    )
    stats = donation_group_stats(build_cascade(record), record.donations)
    assert (stats.step1.donor_proportion, stats.step1.mean_amount) == (1.0, 150.0)
    assert (stats.other.donor_proportion, stats.other.mean_amount) == (0.5, 60.0)


def test_empty_groups_report_absent_values():
    graph = build_cascade(make_record(shares=[share("F", ROOT, 0)]))
    stats = donation_group_stats(graph, [])
    assert stats.step1.donor_proportion is None
    assert stats.step1.mean_amount is None
    assert stats.step1.to_dict()["donor_proportion"] is None


def test_verification_histogram():
    hist = verification_histogram([verify("a", "relative", 1), verify("b", "relative", 2), verify("c", "friend", 3)])
    assert hist.counts["relative"] == 2 and hist.counts["friend"] == 1 and hist.total == 3
    empty = verification_histogram([])
    assert empty.total == 0 and set(empty.counts) == set(RELATIONSHIPS)
    assert (hist + empty).counts == hist.counts
    with pytest.raises(ValueError):
        verification_histogram([verify("a", "boss", 1)])


def test_platform_share_counts_exclude_fundraiser():
    record = make_record(shares=[share("F", ROOT, 0), share("A", ROOT, 1), share("B", "A", 2), share("F", ROOT, 3)])
    assert platform_share_counts(record) == (1, 2)
    assert platform_share_counts(make_record()) == (0, 0)


def test_case_statistics_record():
    row = case_statistics(ten_node_record()).to_dict()
    assert row["p_g2"] == 0.5 and row["g1_size"] == 5 and row["g2_size"] == 5
    assert row["step1"]["donors"] == 1 and row["nonsharer_donors"] == 1


def test_edge_list_round_trip():
    graph = build_cascade(ten_node_record())
    out = io.StringIO()
    write_edge_list(graph, out)
    text = out.getvalue()
    assert text.splitlines()[0] == "# case_id=c1\tfundraiser=F\troot=PLATFORM"
    back = read_edge_list(text.splitlines(keepends=True))
    assert back.edges == graph.edges and back.parent == graph.parent and back.fundraiser == "F"
    out2 = io.StringIO()
    write_edge_list(build_cascade(make_record(shares=[share("G", ROOT, 0)], case_id="c2")), out2)
    both = read_edge_lists((text + out2.getvalue()).splitlines(keepends=True))
    assert [g.case_id for g in both] == ["c1", "c2"]


# -- properties ------------------------------------------------------------------------------

@st.composite
def share_logs(draw):
    users = [f"u{i}" for i in range(draw(st.integers(1, 12)))]
    n = draw(st.integers(1, 25))
    rows = []
    for _ in range(n):
        user = draw(st.sampled_from(users))
        source = draw(st.sampled_from([None, ROOT, "ghost", *users]))
        rows.append(share(user, source, draw(st.integers(0, 1000))))
    donors = draw(st.lists(st.sampled_from([*users, "outsider"]), max_size=10))
    donations = [donate(u, 1.0 + i, 1000 + i) for i, u in enumerate(donors)]
    return make_record(rows, donations)


@settings(max_examples=200, deadline=None)
@given(share_logs())
def test_cascade_invariants(record):
    graph = build_cascade(record)
    # tree: one edge per user node, parents precede children in time
    assert len(graph.edges) == len(graph.nodes) - 1
    assert graph.parent[graph.fundraiser] == ROOT
    first = {child: time for _, child, time in graph.edges}
    for parent, child, time in graph.edges:
        if parent != ROOT:
            assert first[parent] <= time
    distinct = {s.user_id for s in record.shares}
    assert graph.users == distinct

    part = partition_groups(graph)
    assert not (part.g1 & part.g2)
    assert part.g1 | part.g2 == graph.users
    assert 0.0 <= part.p_g2 <= 1.0

    step1 = classify_step1(graph)
    other = graph.users - step1 - {graph.fundraiser}
    assert step1 | other | {graph.fundraiser} == part.g1 | part.g2
    assert not (step1 & other)

    stats = donation_group_stats(graph, record.donations)
    donors = {d.user_id for d in record.donations}
    assert stats.step1.donors + stats.other.donors <= len(donors)
    for g in (stats.step1, stats.other):
        if g.donor_proportion is not None:
            assert 0.0 <= g.donor_proportion <= 1.0


@settings(max_examples=100, deadline=None)
@given(share_logs())
def test_all_descend_from_fundraiser_gives_zero(record):
    users = sorted({s.user_id for s in record.shares})
    chained = make_record([share(u, users[i - 1] if i else ROOT, i) for i, u in enumerate(users)])
    assert partition_groups(build_cascade(chained)).p_g2 == 0.0


def test_histogram_sum():
    a = VerificationHistogram({k: 1 for k in RELATIONSHIPS})
    assert (a + a).total == 2 * len(RELATIONSHIPS)
