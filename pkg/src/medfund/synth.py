"""Seeded synthetic campaigns: profiles plus share/donate/verify logs.

Generation runs in two passes.  The first pass simulates each case's
share cascade, donations and verifications from a latent social-capital
draw.  The second pass writes profile text and the goal amount so that the
content features carry planted correlations with the realized obtained
amount.  Each case draws from its own generator seeded by
``(seed, case_index)``, so the corpus is identical whatever the worker
count.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np

from .cascade import ROOT, build_cascade, donation_group_stats, platform_share_counts
from .event_log import (
    RELATIONSHIPS, CampaignRecord, CaseProfile, DonateEvent, ShareEvent, VerifyEvent,
)
from .features import load_terms
from .units import DAY, HOUR

EPOCH = int(datetime(2019, 3, 1, tzinfo=timezone.utc).timestamp())


class InfeasibleConfigError(ValueError):
    def __init__(self, parameter: str, message: str):
        super().__init__(f"{parameter}: {message}")
        self.parameter = parameter


@dataclass
class SynthConfig:
    n_cases: int = 2000
    seed: int = 42

    # goal amount and reported achievement
    goal_log10_mean: float = 5.131
    goal_log10_std: float = 0.327
    achieved_ratio_target: float = 0.172

    # cascade: fundraiser fan-out scaled by social capital, then Poisson offspring
    fundraiser_fanout: float = 55.0
    capital_sigma: float = 1.2
    branching_mean: float = 0.5
    platform_share_fraction: float = 0.15
    max_shares_per_case: int = 5000

    # donations
    step1_donate_prob: float = 0.647
    step1_mean_amount: float = 101.9
    other_donate_prob: float = 0.679
    other_mean_amount: float = 60.5
    nonsharer_donor_rate: float = 0.7
    nonsharer_mean_amount: float = 35.0
    min_donation: float = 1.0  # platform minimum gift

    # verifications: expected count per fundraiser child, relationship weights
    verify_rate: float = 0.3
    relationship_weights: tuple = (0.45, 0.33, 0.08, 0.06, 0.04, 0.04)

    # timing (hours)
    share_delay_median_hours: float = 10.0
    share_delay_sigma: float = 0.8
    platform_delay_factor: float = 2.5
    donate_delay_hours: float = 1.0
    age_speed_coupling: float = 0.6
    full_period_prob: float = 0.8
    min_period_days: float = 5.0
    start_span_days: float = 30.0

    # fundraiser profile
    age_mean: float = 46.96
    age_std: float = 17.02
    age_capital_corr: float = -0.25
    male_share: float = 0.613
    text_length_mean: float = 445.70
    text_length_std: float = 225.62
    title_length_mean: float = 20.18
    title_length_std: float = 4.59
    disease_mean: float = 1.50
    disease_std: float = 1.14
    province_mean: float = 1.77
    province_std: float = 0.89
    city_mean: float = 1.79
    city_std: float = 1.36
    negative_mean: float = 0.32
    negative_std: float = 0.32

    # planted correlations with the obtained amount
    r_log_target: float = 0.342
    r_text_length: float = 0.228
    r_title_length: float = 0.055
    r_disease: float = 0.145
    r_province: float = 0.084
    r_city: float = 0.120
    r_negative: float = 0.021

    def validate(self) -> None:
        def need(ok, name, message):
            if not ok:
                raise InfeasibleConfigError(name, message)

        need(self.n_cases >= 1, "n_cases", "must be at least 1")
        for name in ("step1_donate_prob", "other_donate_prob", "platform_share_fraction",
                     "full_period_prob", "male_share"):
            need(0.0 <= getattr(self, name) <= 1.0, name, "must be a probability in [0, 1]")
        for name in ("step1_mean_amount", "other_mean_amount", "nonsharer_mean_amount",
                     "goal_log10_std", "share_delay_median_hours", "donate_delay_hours",
                     "platform_delay_factor", "text_length_std", "title_length_std",
                     "min_period_days", "start_span_days", "min_donation"):
            need(getattr(self, name) > 0, name, "must be positive")
        for name in ("fundraiser_fanout", "capital_sigma", "nonsharer_donor_rate", "verify_rate",
                     "share_delay_sigma", "branching_mean"):
            need(getattr(self, name) >= 0, name, "must be non-negative")
        for name in ("r_log_target", "r_text_length", "r_title_length", "r_disease", "r_province",
                     "r_city", "r_negative", "age_capital_corr", "age_speed_coupling"):
            need(-1.0 <= getattr(self, name) <= 1.0, name, "must be a correlation in [-1, 1]")
        need(self.branching_mean < 1.0, "branching_mean",
             "offspring mean >= 1 makes cascades supercritical (runaway)")
        need(self.branching_mean + self.platform_share_fraction < 1.0, "branching_mean",
             "branching_mean + platform_share_fraction must stay below 1 "
             "for the platform-share target to be reachable")
        need(self.min_period_days <= 30, "min_period_days", "must not exceed 30 days")
        need(self.max_shares_per_case >= 1, "max_shares_per_case", "must be at least 1")
        weights = np.asarray(self.relationship_weights, dtype=float)
        need(len(weights) == len(RELATIONSHIPS) and np.all(weights >= 0) and weights.sum() > 0,
             "relationship_weights", f"need {len(RELATIONSHIPS)} non-negative weights")

    # -- key = value files ----------------------------------------------------

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise InfeasibleConfigError(key, "unknown synth parameter")
            default = known[key].default
            if isinstance(default, tuple):
                value = tuple(float(v) for v in str(raw).split(","))
            elif isinstance(raw, str):
                try:
                    value = type(default)(raw) if not isinstance(default, int) else int(raw)
                except ValueError as exc:
                    raise InfeasibleConfigError(key, f"cannot parse {raw!r}") from exc
            else:
                value = raw
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, section: str = "synth") -> "SynthConfig":
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        return cls.from_mapping(dict(parser[section]) if parser.has_section(section) else {})

    def to_text(self) -> str:
        lines = ["[synth]"]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


# -- pass 1: activity ---------------------------------------------------------------

@dataclass
class _Activity:
    index: int
    case_id: str
    start: int
    period: int
    age: int
    gender: str
    shares: list
    donations: list
    verifications: list
    obtained: float
    extra: dict = field(default_factory=dict)


def _case_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def _simulate_case(cfg: SynthConfig, index: int) -> _Activity:
    rng = _case_rng(cfg.seed, index, 0)
    case_id = f"c{index:06d}"
    capital, e_age, e_speed = rng.standard_normal(3)

    age_z = cfg.age_capital_corr * capital + math.sqrt(1 - cfg.age_capital_corr**2) * e_age
    age = int(np.clip(round(cfg.age_mean + cfg.age_std * age_z), 0, 110))
    gender = "male" if rng.random() < cfg.male_share else "female"

    k = cfg.age_speed_coupling
    speed_z = k * age_z + math.sqrt(1 - k * k) * e_speed
    delay = cfg.share_delay_median_hours * HOUR * math.exp(cfg.share_delay_sigma * speed_z)
    platform_delay = cfg.platform_delay_factor * delay

    start = EPOCH + int(rng.integers(0, int(cfg.start_span_days * DAY)))
    if rng.random() < cfg.full_period_prob:
        period = 30 * DAY
    else:
        period = int(rng.integers(int(cfg.min_period_days * DAY), 30 * DAY + 1))

    # node 0 is the fundraiser; parent -1 denotes the platform
    m = cfg.branching_mean
    budget = cfg.max_shares_per_case - 1
    f_time = rng.exponential(0.5 * HOUR)
    parents = [np.array([-1])]
    times = [np.array([f_time])]
    platform_flags = [np.array([True])]
    n_nodes = 1

    fanout = cfg.fundraiser_fanout * math.exp(cfg.capital_sigma * capital) if m > 0 else 0.0
    n_step1 = min(int(rng.poisson(fanout)), budget)
    if n_step1:
        parents.append(np.zeros(n_step1, dtype=int))
        times.append(f_time + rng.exponential(delay, n_step1))
        platform_flags.append(np.zeros(n_step1, bool))
        budget -= n_step1
        base = n_nodes
        n_nodes += n_step1
        for child_par, child_t in _grow_levels(rng, np.arange(base, n_nodes), times[-1], m, delay, budget):
            parents.append(child_par)
            times.append(child_t)
            platform_flags.append(np.zeros(len(child_par), bool))
            budget -= len(child_par)
            n_nodes += len(child_par)

    # platform-originated subtrees, sized so their root shares make up the
    # configured fraction of non-fundraiser shares in expectation
    g1_rest = n_nodes - 1
    p = cfg.platform_share_fraction
    if g1_rest and p > 0:
        expected_roots = p * (1 - m) / (1 - m - p) * g1_rest
        n_roots = min(int(rng.poisson(expected_roots)), budget)
        if n_roots:
            parents.append(np.full(n_roots, -1))
            times.append(f_time + rng.exponential(platform_delay, n_roots))
            platform_flags.append(np.ones(n_roots, bool))
            budget -= n_roots
            base = n_nodes
            n_nodes += n_roots
            for child_par, child_t in _grow_levels(rng, np.arange(base, n_nodes), times[-1], m, delay, budget):
                parents.append(child_par)
                times.append(child_t)
                platform_flags.append(np.zeros(len(child_par), bool))
                budget -= len(child_par)
                n_nodes += len(child_par)

    parent = np.concatenate(parents)
    t = np.floor(np.concatenate(times)).astype(np.int64)
    from_platform = np.concatenate(platform_flags)
    alive = t <= period  # descendants share later than ancestors, so whole subtrees drop

    ids = [f"u{j}" for j in range(n_nodes)]
    channels = ("wechat_moment", "wechat_group")
    channel_draw = rng.integers(0, 2, n_nodes)
    share_rows = []
    for j in np.flatnonzero(alive):
        source = ROOT if from_platform[j] else ids[parent[j]]
        share_rows.append((int(t[j]), j, ShareEvent(ids[j], source, start + int(t[j]), case_id,
                                                      channels[channel_draw[j]])))

    # donations by sharers, by group
    step1 = alive & (parent == 0)
    other = alive & ~step1
    other[0] = False
    donate_rows = []
    seq = 0
    for mask, prob, mean in ((step1, cfg.step1_donate_prob, cfg.step1_mean_amount),
                             (other, cfg.other_donate_prob, cfg.other_mean_amount)):
        members = np.flatnonzero(mask)
        gives = members[rng.random(len(members)) < prob]
        amounts = np.maximum(np.round(rng.exponential(mean, len(gives)), 2), cfg.min_donation)
        when = np.minimum(t[gives] + np.floor(rng.exponential(cfg.donate_delay_hours * HOUR, len(gives))),
                          period).astype(np.int64)
        for j, a, w in zip(gives, amounts, when):
            donate_rows.append((int(w), seq, DonateEvent(ids[j], case_id, float(a), start + int(w))))
            seq += 1

    n_outside = int(rng.poisson(cfg.nonsharer_donor_rate * int(alive.sum())))
    amounts = np.maximum(np.round(rng.exponential(cfg.nonsharer_mean_amount, n_outside), 2), cfg.min_donation)
    when = np.minimum(f_time + rng.exponential(platform_delay, n_outside), period).astype(np.int64)
    for j, (a, w) in enumerate(zip(amounts, when)):
        donate_rows.append((int(w), seq, DonateEvent(f"d{j}", case_id, float(a), start + int(w))))
        seq += 1

    # verifications, mostly by the fundraiser's direct contacts
    n_verify = int(rng.poisson(cfg.verify_rate * max(int(step1.sum()), 1)))
    weights = np.asarray(cfg.relationship_weights, dtype=float)
    rel = rng.choice(len(RELATIONSHIPS), n_verify, p=weights / weights.sum())
    when = np.minimum(f_time + rng.exponential(delay, n_verify), period).astype(np.int64)
    verify_rows = []
    for j, (r, w) in enumerate(zip(rel, when)):
        verify_rows.append((int(w), j, VerifyEvent(f"v{j}", case_id, start + int(w), RELATIONSHIPS[r])))

    shares = [row[2] for row in sorted(share_rows, key=lambda r: (r[0], r[1]))]
    donations = [row[2] for row in sorted(donate_rows, key=lambda r: (r[0], r[1]))]
    verifications = [row[2] for row in sorted(verify_rows, key=lambda r: (r[0], r[1]))]
    obtained = round(math.fsum(d.amount for d in donations), 2)
    return _Activity(index, case_id, start, period, age, gender, shares, donations, verifications,
                     obtained, {"capital": float(capital)})


def _grow_levels(rng, frontier_idx, frontier_t, mean, scale, budget):
    """Yield successive generations (parent indices, times) of a Poisson(mean) process."""
    next_index = int(frontier_idx[-1]) + 1 if len(frontier_idx) else 0
    while len(frontier_idx) and budget > 0 and mean > 0:
        counts = rng.poisson(mean, len(frontier_idx))
        total = min(int(counts.sum()), budget)
        if total == 0:
            return
        child_par = np.repeat(frontier_idx, counts)[:total]
        child_t = np.repeat(frontier_t, counts)[:total] + rng.exponential(scale, total)
        yield child_par, child_t
        budget -= total
        frontier_idx = np.arange(next_index, next_index + total)
        frontier_t = child_t
        next_index += total


# -- pass 2: profile text -----------------------------------------------------------

_FILLER = (
    "The family has spent every saving on treatment so far.",
    "Doctors said the next stage of therapy must start soon.",
    "Our relatives have already lent us what they could.",
    "Every bit of help from you matters to us.",
    "The hospital bills keep growing each week.",
    "We are farmers and our income is very low.",
    "The child still goes to school and needs us at home.",
    "The platform reviewed our case last week.",
    "All receipts and medical records are available.",
    "Please forward this message to your friends.",
)
_TITLE_WORDS = ("Please", "help", "my", "father", "mother", "son", "daughter", "get", "through",
                "this", "hard", "time", "urgent", "treatment", "needed", "now")


@dataclass(frozen=True)
class _Vocab:
    provinces: tuple
    cities: tuple
    diseases: tuple
    pos: tuple
    neg: tuple


def _vocab() -> _Vocab:
    from .features import load_lexicon

    lexicon = load_lexicon()
    return _Vocab(
        tuple(sorted(load_terms(name="provinces"))),
        tuple(sorted(load_terms(name="cities"))),
        tuple(sorted(load_terms(name="diseases"))),
        tuple(sorted(t for t, p in lexicon.items() if p == "pos")),
        tuple(sorted(t for t, p in lexicon.items() if p == "neg")),
    )


def _planted(rng, mean, std, r, z):
    return mean + std * (r * z + math.sqrt(1 - r * r) * rng.standard_normal())


def _compose_content(rng, vocab: _Vocab, length: int, diseases, provinces, cities, negative: float) -> str:
    parts = []
    if diseases:
        parts.append("Ill: " + ", ".join(diseases) + ".")
    if provinces:
        parts.append("Home: " + ", ".join(provinces) + ".")
    if cities:
        parts.append("In " + ", ".join(cities) + ".")
    head = " ".join(parts)
    body = []
    size = len(head)
    while size < length:
        pool = vocab.neg if rng.random() < negative else vocab.pos
        word = pool[rng.integers(0, len(pool))]
        sentence = f"We {word} through each day. " + _FILLER[rng.integers(0, len(_FILLER))]
        body.append(sentence)
        size += len(sentence) + 1
    text = (head + " " + " ".join(body)).strip()
    return text[:max(length, len(head))]


def _compose_title(rng, length: int) -> str:
    words = []
    while len(" ".join(words)) < length:
        words.append(_TITLE_WORDS[rng.integers(0, len(_TITLE_WORDS))])
    return " ".join(words)[:length]


def _profile(cfg: SynthConfig, vocab: _Vocab, act: _Activity, z: float) -> CaseProfile:
    rng = _case_rng(cfg.seed, act.index, 1)

    log_goal = _planted(rng, cfg.goal_log10_mean, cfg.goal_log10_std, cfg.r_log_target, z)
    target = round(10 ** log_goal / 100) * 100 or 100

    length = int(np.clip(round(_planted(rng, cfg.text_length_mean, cfg.text_length_std, cfg.r_text_length, z)), 60, 5000))
    title_len = int(np.clip(round(_planted(rng, cfg.title_length_mean, cfg.title_length_std, cfg.r_title_length, z)), 4, 60))

    def count(mean, std, r, pool):
        k = int(np.clip(round(_planted(rng, mean, std, r, z)), 0, len(pool)))
        return [pool[i] for i in sorted(rng.choice(len(pool), k, replace=False))]

    diseases = count(cfg.disease_mean, cfg.disease_std, cfg.r_disease, vocab.diseases)
    provinces = count(cfg.province_mean, cfg.province_std, cfg.r_province, vocab.provinces)
    cities = count(cfg.city_mean, cfg.city_std, cfg.r_city, vocab.cities)
    negative = float(np.clip(_planted(rng, cfg.negative_mean, cfg.negative_std, cfg.r_negative, z), 0, 1))

    domicile = provinces[0] if provinces else vocab.provinces[rng.integers(0, len(vocab.provinces))]
    hospital = domicile if rng.random() < 0.7 else vocab.provinces[rng.integers(0, len(vocab.provinces))]

    return CaseProfile(
        case_id=act.case_id,
        fundraiser_age=act.age,
        gender=act.gender,
        target_amount=float(target),
        obtained_amount=act.obtained,
        domicile_province=domicile,
        hospital_province=hospital,
        title=_compose_title(rng, title_len),
        content=_compose_content(rng, vocab, length, diseases, provinces, cities, negative),
        start_time=act.start,
        end_time=act.start + act.period,
    )


def _simulate_chunk(args):
    cfg, indices = args
    return [_simulate_case(cfg, i) for i in indices]


def _profile_chunk(args):
    cfg, acts, zs = args
    vocab = _vocab()
    return [_profile(cfg, vocab, a, z) for a, z in zip(acts, zs)]


def _chunks(seq, n):
    size = max(1, math.ceil(len(seq) / n))
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def generate(config: Optional[SynthConfig] = None, workers: int = 1) -> list[CampaignRecord]:
    cfg = config or SynthConfig()
    cfg.validate()
    indices = list(range(cfg.n_cases))

    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            acts = [a for chunk in pool.map(_simulate_chunk, [(cfg, c) for c in _chunks(indices, workers)]) for a in chunk]
    else:
        acts = _simulate_chunk((cfg, indices))

    obtained = np.array([a.obtained for a in acts])
    std = obtained.std()
    zs = ((obtained - obtained.mean()) / std if std > 0 else np.zeros_like(obtained)).tolist()

    if workers > 1:
        jobs = [(cfg, a, z) for a, z in zip(_chunks(acts, workers), _chunks(zs, workers))]
        with ProcessPoolExecutor(workers) as pool:
            profiles = [p for chunk in pool.map(_profile_chunk, jobs) for p in chunk]
    else:
        profiles = _profile_chunk((cfg, acts, zs))

    return [
        CampaignRecord(p, tuple(a.shares), tuple(a.donations), tuple(a.verifications))
        for p, a in zip(profiles, acts)
    ]


# -- calibration ------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationRow:
    statistic: str
    target: float
    value: float
    tolerance: float

    @property
    def abs_deviation(self) -> float:
        return self.value - self.target

    @property
    def rel_deviation(self) -> float:
        return self.abs_deviation / self.target if self.target else math.inf

    @property
    def within(self) -> bool:
        return bool(math.isfinite(self.value) and abs(self.abs_deviation) <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic, "target": self.target, "value": float(self.value),
            "abs_deviation": self.abs_deviation, "rel_deviation": self.rel_deviation,
            "tolerance": self.tolerance, "within_tolerance": self.within,
        }


@dataclass(frozen=True)
class CalibrationReport:
    n_cases: int
    rows: tuple[CalibrationRow, ...]

    def __getitem__(self, name: str) -> CalibrationRow:
        for row in self.rows:
            if row.statistic == name:
                return row
        raise KeyError(name)

    @property
    def deviations(self) -> list[str]:
        return [row.statistic for row in self.rows if not row.within]

    def to_text(self) -> str:
        lines = [f"calibration over {self.n_cases} cases",
                 f"{'statistic':<26}{'target':>12}{'value':>12}{'abs dev':>12}{'rel dev':>10}{'tol':>10}  ok"]
        for r in self.rows:
            lines.append(f"{r.statistic:<26}{r.target:>12.4f}{r.value:>12.4f}{r.abs_deviation:>12.4f}"
                         f"{r.rel_deviation:>10.3f}{r.tolerance:>10.4f}  {'yes' if r.within else 'NO'}")
        return "\n".join(lines)


def calibrate_report(corpus: Sequence[CampaignRecord], config: Optional[SynthConfig] = None) -> CalibrationReport:
    """Recompute the calibrated statistics from a corpus and compare them with the config.

    Tolerances: goal mean within two standard errors; platform share within
    0.02; donor proportions within 0.03; mean donation amounts within 10%;
    achieved ratio within 25% of target.
    """
    cfg = config or SynthConfig()
    if not corpus:
        raise ValueError("empty corpus")
    n = len(corpus)

    log_goal = np.log10([r.profile.target_amount for r in corpus])
    goal_se = log_goal.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf

    platform = shares = 0
    step1 = other = None
    ratios = []
    for record in corpus:
        a, b = platform_share_counts(record)
        platform += a
        shares += b
        comparison = donation_group_stats(build_cascade(record), record.donations)
        step1 = comparison.step1 if step1 is None else step1 + comparison.step1
        other = comparison.other if other is None else other + comparison.other
        ratios.append(record.profile.obtained_amount / record.profile.target_amount)

    def value(x):
        return math.nan if x is None else float(x)

    rows = (
        CalibrationRow("goal_log10_mean", cfg.goal_log10_mean, float(log_goal.mean()), 2 * goal_se),
        CalibrationRow("goal_log10_std", cfg.goal_log10_std,
                       float(log_goal.std(ddof=1)) if n > 1 else math.nan, 0.1 * cfg.goal_log10_std),
        CalibrationRow("platform_share_fraction", cfg.platform_share_fraction,
                       platform / shares if shares else math.nan, 0.02),
        CalibrationRow("step1_donor_proportion", cfg.step1_donate_prob, value(step1.donor_proportion), 0.03),
        CalibrationRow("other_donor_proportion", cfg.other_donate_prob, value(other.donor_proportion), 0.03),
        CalibrationRow("step1_mean_amount", cfg.step1_mean_amount, value(step1.mean_amount),
                       0.1 * cfg.step1_mean_amount),
        CalibrationRow("other_mean_amount", cfg.other_mean_amount, value(other.mean_amount),
                       0.1 * cfg.other_mean_amount),
        CalibrationRow("achieved_ratio", cfg.achieved_ratio_target, float(np.mean(ratios)),
                       0.25 * cfg.achieved_ratio_target),
    )
    return CalibrationReport(n, rows)


def replace(config: SynthConfig, **changes) -> SynthConfig:
    return dataclasses.replace(config, **changes)
