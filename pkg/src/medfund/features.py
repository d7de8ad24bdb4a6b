"""Content features, windowed activity increments, and correlation summaries."""

from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass, fields
from importlib import resources
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, TransformerMixin

from .event_log import CampaignRecord, CaseProfile
from .units import HOUR, to_seconds

logger = logging.getLogger(__name__)

Scorer = Callable[[str], float]


# -- dictionaries and sentiment ------------------------------------------------

def load_terms(path=None, *, name: Optional[str] = None) -> frozenset[str]:
    """One term per line.  ``name`` loads a bundled list (provinces, cities, diseases)."""
    text = _read_text(path, name and f"{name}.txt")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def load_lexicon(path=None) -> dict[str, str]:
    """``term<TAB>polarity`` lines with polarity ``pos`` or ``neg``."""
    lexicon = {}
    for number, line in enumerate(_read_text(path, "lexicon.tsv").splitlines(), start=1):
        if not line.strip():
            continue
        term, _, polarity = line.rstrip("\n").partition("\t")
        polarity = polarity.strip()
        if polarity not in ("pos", "neg") or not term:
            raise ValueError(f"lexicon line {number}: expected 'term<TAB>pos|neg'")
        lexicon[term] = polarity
    return lexicon


def _read_text(path, bundled: Optional[str]) -> str:
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    if bundled is None:
        raise ValueError("either a path or a bundled name is required")
    return resources.files("medfund").joinpath("data", bundled).read_text(encoding="utf-8")


class LexiconScorer:
    """Negative probability as n_neg / (n_neg + n_pos) over lexicon hits; 0.5 with no hits."""

    def __init__(self, lexicon: Optional[dict[str, str]] = None):
        self.lexicon = load_lexicon() if lexicon is None else dict(lexicon)

    def __call__(self, text: str) -> float:
        pos = neg = 0
        for term, polarity in self.lexicon.items():
            hits = text.count(term)
            if polarity == "neg":
                neg += hits
            else:
                pos += hits
        if pos + neg == 0:
            return 0.5
        return neg / (pos + neg)


def count_dictionary_mentions(text: str, dictionary: Iterable[str]) -> int:
    # distinct terms: a name repeated three times counts once
    return sum(1 for term in set(dictionary) if term and term in text)


def chunked_sentiment(text: str, scorer: Scorer, chunk_len: int = 200) -> float:
    if chunk_len <= 0:
        raise ValueError("chunk_len must be positive")
    if not text:
        return 0.5
    scores = []
    for start in range(0, len(text), chunk_len):
        chunk = text[start:start + chunk_len]
        try:
            scores.append(float(scorer(chunk)))
        except Exception as exc:  # scorer is pluggable; any failure skips the chunk
            logger.warning("sentiment scorer failed on chunk at %d: %s", start, exc)
    if not scores:
        raise RuntimeError("sentiment scorer failed on every chunk")
    return float(np.mean(scores))


# -- content features ------------------------------------------------------------

@dataclass(frozen=True)
class ContentFeatures:
    age: float
    gender_indicator: Optional[int]  # male=1, female=0, unknown=None
    log10_target: float
    text_length: int
    title_length: int
    disease_count: int
    province_mentions: int
    city_mentions: int
    negative_score: float

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_array(self) -> np.ndarray:
        values = astuple(self)
        # unknown gender sits halfway between the two codes in model inputs
        return np.array([0.5 if v is None else v for v in values], dtype=float)


@dataclass
class Dictionaries:
    provinces: frozenset[str]
    cities: frozenset[str]
    diseases: frozenset[str]
    scorer: Scorer
    chunk_len: int = 200

    @classmethod
    def default(cls) -> "Dictionaries":
        return cls(
            load_terms(name="provinces"), load_terms(name="cities"),
            load_terms(name="diseases"), LexiconScorer(),
        )


def extract_content_features(profile: CaseProfile, province_dict, city_dict, disease_dict,
                             scorer: Scorer, chunk_len: int = 200) -> ContentFeatures:
    if not profile.target_amount > 0:
        raise ValueError(f"case {profile.case_id}: target_amount must be positive")
    gender = {"male": 1, "female": 0}.get(profile.gender)
    return ContentFeatures(
        age=float(profile.fundraiser_age),
        gender_indicator=gender,
        log10_target=math.log10(profile.target_amount),
        text_length=len(profile.content),
        title_length=len(profile.title),
        disease_count=count_dictionary_mentions(profile.content, disease_dict),
        province_mentions=count_dictionary_mentions(profile.content, province_dict),
        city_mentions=count_dictionary_mentions(profile.content, city_dict),
        negative_score=chunked_sentiment(profile.content, scorer, chunk_len),
    )


class ContentFeatureExtractor(BaseEstimator, TransformerMixin):
    """Profiles (or records) -> matrix of ContentFeatures rows.  Stateless."""

    def __init__(self, dictionaries: Optional[Dictionaries] = None):
        self.dictionaries = dictionaries

    def fit(self, X=None, y=None):
        return self

    def transform_objects(self, X) -> list[ContentFeatures]:
        d = self.dictionaries or Dictionaries.default()
        out = []
        for item in X:
            profile = item.profile if isinstance(item, CampaignRecord) else item
            out.append(extract_content_features(
                profile, d.provinces, d.cities, d.diseases, d.scorer, d.chunk_len))
        return out

    def transform(self, X) -> np.ndarray:
        rows = [f.to_array() for f in self.transform_objects(X)]
        return np.vstack(rows) if rows else np.empty((0, len(ContentFeatures.names())))

    def get_feature_names_out(self, input_features=None):
        return np.array(ContentFeatures.names(), dtype=object)


# -- temporal features -----------------------------------------------------------

TEMPORAL_BLOCKS = ("Xs", "Xd", "Xdcnt", "Xv")


@dataclass(frozen=True)
class TemporalFeatures:
    share_increments: np.ndarray
    donate_amount_increments: np.ndarray
    donate_count_increments: np.ndarray
    verify_increments: np.ndarray
    delta_t: int
    window: int

    @property
    def n_bins(self) -> int:
        return self.window // self.delta_t

    def to_array(self) -> np.ndarray:
        return np.concatenate([
            self.share_increments, self.donate_amount_increments,
            self.donate_count_increments, self.verify_increments,
        ])


def _bins(delta_t, window) -> tuple[int, int, int]:
    delta_t, window = to_seconds(delta_t), to_seconds(window)
    if delta_t <= 0 or window <= 0:
        raise ValueError("delta_t and window must be positive")
    if window % delta_t:
        raise ValueError(f"window {window}s is not a multiple of delta_t {delta_t}s")
    return delta_t, window, window // delta_t


def extract_temporal_features(record: CampaignRecord, delta_t=HOUR, window=86400) -> TemporalFeatures:
    """Per-bin increments over ``[0, window)``; bin k covers ``[k*dt, (k+1)*dt)``."""
    delta_t, window, n = _bins(delta_t, window)
    start = record.profile.start_time

    def bin_index(events):
        offsets = np.fromiter((e.time - start for e in events), dtype=np.int64, count=len(events))
        keep = (offsets >= 0) & (offsets < window)
        return offsets[keep] // delta_t, keep

    share_idx, _ = bin_index(record.shares)
    donate_idx, keep = bin_index(record.donations)
    amounts = np.fromiter((d.amount for d in record.donations), dtype=float,
                          count=len(record.donations))[keep]
    verify_idx, _ = bin_index(record.verifications)
    return TemporalFeatures(
        share_increments=np.bincount(share_idx, minlength=n).astype(float),
        donate_amount_increments=np.bincount(donate_idx, weights=amounts, minlength=n).astype(float),
        donate_count_increments=np.bincount(donate_idx, minlength=n).astype(float),
        verify_increments=np.bincount(verify_idx, minlength=n).astype(float),
        delta_t=delta_t,
        window=window,
    )


class TemporalFeatureExtractor(BaseEstimator, TransformerMixin):
    """Records -> ``[Xs | Xd | Xdcnt | Xv]`` increment matrix for one window."""

    def __init__(self, window=86400, delta_t=HOUR):
        self.window = window
        self.delta_t = delta_t

    def fit(self, X=None, y=None):
        _bins(self.delta_t, self.window)
        return self

    def transform(self, X) -> np.ndarray:
        _, _, n = _bins(self.delta_t, self.window)
        rows = [extract_temporal_features(r, self.delta_t, self.window).to_array() for r in X]
        return np.vstack(rows) if rows else np.empty((0, 4 * n))

    def get_feature_names_out(self, input_features=None):
        _, _, n = _bins(self.delta_t, self.window)
        return np.array([f"{b}_{k}" for b in TEMPORAL_BLOCKS for k in range(n)], dtype=object)


def block(X: np.ndarray, name: str) -> np.ndarray:
    """Slice one increment block (``Xs``, ``Xd``, ...) out of a temporal matrix."""
    n = X.shape[1] // len(TEMPORAL_BLOCKS)
    k = TEMPORAL_BLOCKS.index(name)
    return X[:, k * n:(k + 1) * n]


# -- correlation -----------------------------------------------------------------

def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Product-moment r and its two-sided t-test p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and of equal length")
    n = len(x)
    if n < 3:
        raise ValueError("pearson needs at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt(df / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), df))


@dataclass(frozen=True)
class CorrelationRow:
    variable: str
    overall_mean: float
    overall_std: float
    top_mean: float
    top_std: float
    bottom_mean: float
    bottom_std: float
    pearson_r: Optional[float]
    p_value: Optional[float]
    note: str = ""

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def significance(self) -> str:
        return "**" if self.p_value is not None and self.p_value < 0.01 else ""


def top_bottom_summary(case_ids: Sequence[str], obtained: Sequence[float],
                       features: Sequence[ContentFeatures], fraction: float = 0.1) -> list[CorrelationRow]:
    """Overall / top-fraction / bottom-fraction statistics and r against obtained amount.

    Cases are ranked by obtained amount descending (ties by case_id).  The
    gender row reports the male share and correlates the indicator over
    cases with known gender only.
    """
    if not 0 < fraction < 0.5:
        raise ValueError("fraction must lie in (0, 0.5)")
    n = len(features)
    if n < 10:
        raise ValueError("need at least 10 cases")
    if not len(case_ids) == len(obtained) == n:
        raise ValueError("case_ids, obtained and features must align")
    k = math.ceil(fraction * n)
    order = sorted(range(n), key=lambda i: (-obtained[i], case_ids[i]))
    top, bottom = order[:k], order[-k:]
    y = np.asarray(obtained, dtype=float)

    rows = []
    for name in ContentFeatures.names():
        raw = [getattr(f, name) for f in features]
        known = np.array([v is not None for v in raw])
        values = np.array([np.nan if v is None else v for v in raw], dtype=float)

        def summary(idx):
            v = values[idx]
            v = v[~np.isnan(v)]
            if len(v) == 0:
                return math.nan, math.nan
            return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0

        mean, std = summary(np.arange(n))
        top_mean, top_std = summary(np.array(top))
        bottom_mean, bottom_std = summary(np.array(bottom))
        r = p = None
        note = ""
        try:
            r, p = pearson(values[known], y[known])
        except ValueError as exc:
            note = str(exc)
        rows.append(CorrelationRow(name, mean, std, top_mean, top_std, bottom_mean, bottom_std, r, p, note))
    return rows


def format_summary_table(rows: Sequence[CorrelationRow]) -> str:
    header = f"{'variable':<18}{'total':>22}{'top':>22}{'bottom':>22}{'R':>10}"
    lines = [header, "-" * len(header)]
    for row in rows:
        r = "n/a" if row.pearson_r is None else f"{row.pearson_r:.3f}{row.significance()}"
        lines.append(
            f"{row.variable:<18}"
            f"{row.overall_mean:>12.3f} ({row.overall_std:7.3f})"
            f"{row.top_mean:>12.3f} ({row.top_std:7.3f})"
            f"{row.bottom_mean:>12.3f} ({row.bottom_std:7.3f})"
            f"{r:>10}"
        )
    return "\n".join(lines)
