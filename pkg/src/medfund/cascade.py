"""Diffusion cascades rooted at the platform, group partition and group statistics."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

from .event_log import RELATIONSHIPS, CampaignRecord, DonateEvent, VerifyEvent, format_time, parse_time

logger = logging.getLogger(__name__)

ROOT = "PLATFORM"


@dataclass(frozen=True)
class CascadeGraph:
    """A share tree.  ``parent`` maps every user node to its parent; ROOT has none."""

    case_id: str
    fundraiser: str
    parent: dict[str, str]
    edges: tuple[tuple[str, str, int], ...]
    # users attached to ROOT only because their source was absent/unresolvable
    fallback_nodes: frozenset[str] = frozenset()
    dropped_shares: int = 0
    root: str = ROOT

    @property
    def users(self) -> set[str]:
        return set(self.parent)

    @property
    def nodes(self) -> set[str]:
        return {self.root, *self.parent}

    def children(self) -> dict[str, list[str]]:
        kids: dict[str, list[str]] = defaultdict(list)
        for parent, child, _ in self.edges:
            kids[parent].append(child)
        return kids

    def descendants(self, node: str) -> set[str]:
        kids = self.children()
        seen: set[str] = set()
        stack = [node]
        while stack:
            for child in kids.get(stack.pop(), ()):
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return seen


@dataclass(frozen=True)
class GroupPartition:
    g1: frozenset[str]
    g2: frozenset[str]

    @property
    def p_g2(self) -> float:
        return len(self.g2) / (len(self.g1) + len(self.g2))


@dataclass(frozen=True)
class GroupDonationStats:
    group: str
    members: int
    donors: int
    total_amount: float

    @property
    def donor_proportion(self) -> Optional[float]:
        """Share of members who donated at least once; None for an empty group."""
        return self.donors / self.members if self.members else None

    @property
    def mean_amount(self) -> Optional[float]:
        """Mean total amount per donating member; None when nobody donated."""
        return self.total_amount / self.donors if self.donors else None

    def __add__(self, other: "GroupDonationStats") -> "GroupDonationStats":
        return GroupDonationStats(
            self.group, self.members + other.members,
            self.donors + other.donors, self.total_amount + other.total_amount,
        )

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "members": self.members,
            "donors": self.donors,
            "donor_proportion": self.donor_proportion,
            "mean_amount": self.mean_amount,
        }


@dataclass(frozen=True)
class DonationComparison:
    step1: GroupDonationStats
    other: GroupDonationStats
    nonsharer_donors: int = 0
    nonsharer_amount: float = 0.0
    # per-donor totals, kept for significance tests across a corpus
    step1_amounts: tuple[float, ...] = field(default=(), repr=False)
    other_amounts: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class VerificationHistogram:
    counts: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __add__(self, other: "VerificationHistogram") -> "VerificationHistogram":
        return VerificationHistogram({k: self.counts[k] + other.counts[k] for k in RELATIONSHIPS})


def build_cascade(record: CampaignRecord, drop_unresolved: bool = False) -> CascadeGraph:
    """Attach each sharing user at its first share, in time order.

    The earliest sharer is taken as the fundraiser and hangs off the
    platform root.  A later share whose source is ``PLATFORM`` also hangs
    off the root.  A source that is absent, or names a user with no earlier
    share, is unresolvable: the user is attached to the root as well
    (``drop_unresolved=True`` skips such shares instead).
    """
    shares = record.shares
    fundraiser = shares[0].user_id if shares else f"{record.case_id}:fundraiser"
    parent: dict[str, str] = {fundraiser: ROOT}
    first = shares[0].time if shares else record.profile.start_time
    edges = [(ROOT, fundraiser, first)]
    fallback: set[str] = set()
    dropped = 0

    for share in shares:
        user = share.user_id
        if user in parent:
            continue
        source = share.source_id
        if source == user:
            logger.warning("case %s: self-share by %s attached to platform", record.case_id, user)
            source = None
        if source == ROOT:
            attach = ROOT
        elif source is not None and source in parent:
            attach = source
        else:
            if drop_unresolved:
                dropped += 1
                continue
            attach = ROOT
            fallback.add(user)
        parent[user] = attach
        edges.append((attach, user, share.time))

    return CascadeGraph(
        case_id=record.case_id,
        fundraiser=fundraiser,
        parent=parent,
        edges=tuple(edges),
        fallback_nodes=frozenset(fallback),
        dropped_shares=dropped,
    )


def partition_groups(graph: CascadeGraph) -> GroupPartition:
    g1 = {graph.fundraiser} | graph.descendants(graph.fundraiser)
    return GroupPartition(frozenset(g1), frozenset(graph.users - g1))


def classify_step1(graph: CascadeGraph) -> set[str]:
    return set(graph.children().get(graph.fundraiser, ()))


def donation_group_stats(graph: CascadeGraph, donations: Iterable[DonateEvent]) -> DonationComparison:
    step1 = classify_step1(graph)
    other = graph.users - step1 - {graph.fundraiser}

    per_donor: dict[str, float] = defaultdict(float)
    for donation in donations:
        per_donor[donation.user_id] += donation.amount

    def group_stats(name: str, members: set[str]) -> tuple[GroupDonationStats, tuple[float, ...]]:
        amounts = tuple(per_donor[u] for u in sorted(members) if u in per_donor)
        return GroupDonationStats(name, len(members), len(amounts), float(sum(amounts))), amounts

    step1_stats, step1_amounts = group_stats("step1", step1)
    other_stats, other_amounts = group_stats("other", other)
    outsiders = [amount for user, amount in per_donor.items() if user not in graph.parent]
    return DonationComparison(
        step1_stats, other_stats, len(outsiders), float(sum(outsiders)),
        step1_amounts, other_amounts,
    )


def verification_histogram(verifications: Iterable[VerifyEvent]) -> VerificationHistogram:
    counts = Counter()
    for v in verifications:
        if v.relationship not in RELATIONSHIPS:
            raise ValueError(f"unknown relationship {v.relationship!r}")
        counts[v.relationship] += 1
    return VerificationHistogram({k: counts[k] for k in RELATIONSHIPS})


def platform_share_counts(record: CampaignRecord) -> tuple[int, int]:
    """(shares sourced from PLATFORM, all shares), both excluding the fundraiser's own."""
    shares = record.shares
    if not shares:
        return 0, 0
    fundraiser = shares[0].user_id
    rest = [s for s in shares if s.user_id != fundraiser]
    return sum(1 for s in rest if s.source_id == ROOT), len(rest)


@dataclass(frozen=True)
class CaseCascadeStats:
    case_id: str
    partition: GroupPartition
    donations: DonationComparison
    verifications: VerificationHistogram

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "p_g2": self.partition.p_g2,
            "g1_size": len(self.partition.g1),
            "g2_size": len(self.partition.g2),
            "step1": self.donations.step1.to_dict(),
            "other": self.donations.other.to_dict(),
            "nonsharer_donors": self.donations.nonsharer_donors,
            "verifications": dict(self.verifications.counts),
        }


def case_statistics(record: CampaignRecord, drop_unresolved: bool = False) -> CaseCascadeStats:
    graph = build_cascade(record, drop_unresolved=drop_unresolved)
    return CaseCascadeStats(
        record.case_id,
        partition_groups(graph),
        donation_group_stats(graph, record.donations),
        verification_histogram(record.verifications),
    )


def write_edge_list(graph: CascadeGraph, out: IO[str]) -> None:
    out.write(f"# case_id={graph.case_id}\tfundraiser={graph.fundraiser}\troot={graph.root}\n")
    for parent, child, time in graph.edges:
        out.write(f"{parent}\t{child}\t{format_time(time)}\n")


def read_edge_list(lines: Sequence[str]) -> CascadeGraph:
    header, *rows = [line.rstrip("\n") for line in lines if line.strip()]
    meta = dict(part.split("=", 1) for part in header.lstrip("# ").split("\t"))
    edges, parent = [], {}
    for row in rows:
        p, c, t = row.split("\t")
        edges.append((p, c, parse_time(t)))
        parent[c] = p
    return CascadeGraph(meta["case_id"], meta["fundraiser"], parent, tuple(edges), root=meta["root"])


def read_edge_lists(lines: Iterable[str]) -> list[CascadeGraph]:
    """Split a file of concatenated ``write_edge_list`` blocks back into graphs."""
    graphs, block = [], []
    for line in lines:
        if line.startswith("# case_id=") and block:
            graphs.append(read_edge_list(block))
            block = []
        block.append(line)
    if any(line.strip() for line in block):
        graphs.append(read_edge_list(block))
    return graphs
