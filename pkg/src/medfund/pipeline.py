"""Train and evaluate every (model, target, window) combination on a corpus."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .event_log import CampaignRecord
from .features import (TEMPORAL_BLOCKS, ContentFeatureExtractor, ContentFeatures, Dictionaries,
                       TemporalFeatureExtractor, block)
from .predict import TARGETS, ANNRegressor, MLRegressor, SHRegressor, rse, time_split
from .units import DAY, HOUR, format_duration

MODEL_FORMAT_VERSION = 1

# name -> (estimator kind, input specification)
MODELS = {
    "ANN(X_content)": ("ANN", "content"),
    "SH(X_t)": ("SH", "temporal"),
    "ML(X_t)": ("ML", "temporal"),
    "ANN(X_t)": ("ANN", "temporal"),
    "ANN(X_t+X_content)": ("ANN", "temporal+content"),
}
DEFAULT_WINDOWS = (1 * DAY, 2 * DAY, 3 * DAY)
# increment block each linear model regresses on, per target
_LINEAR_BLOCK = {"shared": "Xs", "donated": "Xd"}


def final_target(record: CampaignRecord, target: str) -> float:
    """Campaign-end value: every share event (fundraiser's included), or total donated."""
    if target == "shared":
        return float(len(record.shares))
    if target == "donated":
        return float(math.fsum(d.amount for d in record.donations))
    raise ValueError(f"unknown target {target!r}")


@dataclass
class FittedModel:
    name: str
    target: str
    window: Optional[int]  # None for content-only models
    delta_t: int
    estimator: object
    training: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return MODELS[self.name][0]

    @property
    def input_spec(self) -> str:
        return MODELS[self.name][1]

    def to_record(self) -> dict:
        params = self.estimator.get_params() if hasattr(self.estimator, "get_params") else {}
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "name": self.name,
            "kind": self.kind,
            "input_spec": self.input_spec,
            "target": self.target,
            "window": self.window,
            "delta_t": self.delta_t,
            "config": params,
            "training": self.training,
            "state": self.estimator.get_state(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "FittedModel":
        if record.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {record.get('format_version')!r}")
        kind = record["kind"]
        estimator = {"SH": SHRegressor, "ML": MLRegressor, "ANN": ANNRegressor}[kind](**record["config"])
        estimator.set_state(record["state"])
        return cls(record["name"], record["target"], record["window"], record["delta_t"],
                   estimator, record.get("training", {}))


def save_model(model: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_record(), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        return FittedModel.from_record(json.load(fh))


# -- design matrices ---------------------------------------------------------------

@dataclass
class Split:
    records: list
    content: np.ndarray
    temporal: dict  # window -> increment matrix
    targets: dict   # target -> final values

    def inputs(self, name: str, target: str, window: Optional[int]) -> np.ndarray:
        spec = MODELS[name][1]
        if spec == "content":
            return self.content
        X = self.temporal[window]
        if MODELS[name][0] in ("SH", "ML"):
            return block(X, _LINEAR_BLOCK[target])
        if spec == "temporal":
            return X
        return np.hstack([X, self.content])


def input_groups(name: str, window: Optional[int], delta_t: int) -> list[str]:
    """Scaling group per ANN input column: one per increment block, one per content feature."""
    spec = MODELS[name][1]
    groups = []
    if spec != "content":
        groups += [b for b in TEMPORAL_BLOCKS for _ in range(window // delta_t)]
    if spec != "temporal":
        groups += ContentFeatures.names()
    return groups


def build_split(records: Sequence[CampaignRecord], windows, delta_t, dictionaries=None) -> Split:
    content = ContentFeatureExtractor(dictionaries).transform(records)
    temporal = {w: TemporalFeatureExtractor(window=w, delta_t=delta_t).transform(records) for w in windows}
    targets = {t: np.array([final_target(r, t) for r in records]) for t in TARGETS}
    return Split(list(records), content, temporal, targets)


def _positive(split: Split, target: str) -> np.ndarray:
    return split.targets[target] > 0


# -- fitting -------------------------------------------------------------------------

def derive_seed(seed: int, *parts) -> int:
    digest = hashlib.sha256(repr((seed, *parts)).encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class _Job:
    name: str
    target: str
    window: Optional[int]
    X: np.ndarray
    y: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    seed: int
    ann_config: tuple
    groups: tuple


def _fit(job: _Job):
    kind = MODELS[job.name][0]
    if kind == "SH":
        return SHRegressor().fit(job.X, job.y)
    if kind == "ML":
        return MLRegressor().fit(job.X, job.y)
    config = {"groups": list(job.groups), **dict(job.ann_config)}
    return ANNRegressor(random_state=job.seed, **config).fit(job.X, job.y, job.X_val, job.y_val)


@dataclass
class EvalEntry:
    model: str
    target: str
    window: Optional[int]
    mrse: float
    n_test: int
    excluded: int
    rse: list

    def to_dict(self) -> dict:
        return {
            "model": self.model, "target": self.target,
            "window": None if self.window is None else format_duration(self.window),
            "mrse": self.mrse, "n_test": self.n_test, "excluded": self.excluded,
        }


@dataclass
class EvalReport:
    entries: list
    split_sizes: tuple
    windows: tuple
    delta_t: int

    def get(self, model: str, target: str, window: Optional[int] = None) -> float:
        for e in self.entries:
            if e.model == model and e.target == target and (e.window is None or e.window == window):
                return e.mrse
        raise KeyError((model, target, window))

    def to_json_lines(self) -> str:
        head = {"split_sizes": list(self.split_sizes), "delta_t": format_duration(self.delta_t),
                "windows": [format_duration(w) for w in self.windows]}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(e.to_dict(), sort_keys=True) for e in self.entries]
        return "\n".join(lines) + "\n"

    def per_case_lines(self) -> str:
        lines = []
        for e in self.entries:
            w = None if e.window is None else format_duration(e.window)
            lines.append(json.dumps({"model": e.model, "target": e.target, "window": w, "rse": e.rse}))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Rows are models; columns are windows for shared counts, then donated amounts."""
        cols = [(t, w) for t in TARGETS for w in self.windows]
        header = f"{'model':<22}" + "".join(f"{t[:7] + ' ' + format_duration(w):>16}" for t, w in cols)
        lines = [header, "-" * len(header)]
        models = list(dict.fromkeys(e.model for e in self.entries))
        for name in models:
            cells = []
            for t, w in cols:
                try:
                    cells.append(f"{self.get(name, t, w):>16.4f}")
                except KeyError:
                    cells.append(f"{'-':>16}")
            lines.append(f"{name:<22}" + "".join(cells))
        n_train, n_val, n_test = self.split_sizes
        lines.append(f"split sizes: train={n_train} validation={n_val} test={n_test}")
        return "\n".join(lines)


def evaluate(models: Sequence[FittedModel], test: Split) -> list[EvalEntry]:
    entries = []
    for m in models:
        keep = _positive(test, m.target)
        if not keep.any():
            raise ValueError(f"no test cases with positive {m.target} target")
        X = test.inputs(m.name, m.target, m.window)[keep]
        y = test.targets[m.target][keep]
        errors = rse(m.estimator.predict(X), y)
        entries.append(EvalEntry(m.name, m.target, m.window, float(np.mean(errors)), int(keep.sum()),
                                 int((~keep).sum()), [float(v) for v in errors]))
    return entries


def train_eval(records: Sequence[CampaignRecord], windows=DEFAULT_WINDOWS, delta_t: int = HOUR,
               seed: int = 0, model_names: Sequence[str] = tuple(MODELS), workers: int = 1,
               dictionaries: Optional[Dictionaries] = None, ann_config: Optional[dict] = None):
    """Split chronologically, fit every model per target and window, evaluate on test.

    Returns ``(report, fitted_models)``.  Content-only models are fitted once
    per target and reported for every window.
    """
    windows = tuple(sorted(int(w) for w in windows))
    for w in windows:
        if w <= 0 or w % delta_t:
            raise ValueError(f"window {w}s must be a positive multiple of delta_t {delta_t}s")
    unknown = set(model_names) - set(MODELS)
    if unknown:
        raise ValueError(f"unknown models: {sorted(unknown)}")
    train, val, test = time_split(list(records))
    parts = [build_split(s, windows, delta_t, dictionaries) for s in (train, val, test)]
    tr, va, te = parts
    ann = tuple(sorted((ann_config or {}).items()))

    jobs = []
    for name in model_names:
        content_only = MODELS[name][1] == "content"
        for target in TARGETS:
            for w in ((None,) if content_only else windows):
                keep, keep_val = _positive(tr, target), _positive(va, target)
                jobs.append(_Job(
                    name, target, w,
                    tr.inputs(name, target, w)[keep], tr.targets[target][keep],
                    va.inputs(name, target, w)[keep_val], va.targets[target][keep_val],
                    derive_seed(seed, name, target, w), ann, tuple(input_groups(name, w, delta_t)),
                ))

    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            estimators = list(pool.map(_fit, jobs))
    else:
        estimators = [_fit(j) for j in jobs]

    fitted = []
    for job, est in zip(jobs, estimators):
        info = {"n_train": len(job.y), "n_validation": len(job.y_val), "seed": job.seed}
        fitted.append(FittedModel(job.name, job.target, job.window, delta_t, est, info))
    report = EvalReport(evaluate(fitted, te), (len(train), len(val), len(test)), windows, delta_t)
    return report, fitted
