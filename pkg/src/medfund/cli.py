"""Command-line entry point: ``medfund {validate,analyze,train-eval,synth}``.

Settings come from an INI file (``--config``) with a ``[run]`` section and
an optional ``[synth]`` section; command-line flags override the file.
Paths inside the file are resolved relative to the file's directory.

Example::

    [run]
    profiles = data/profiles.jsonl
    events = data/events.jsonl
    out = results
    seed = 42
    windows = 1d,2d,3d
    delta_t = 1h

    [synth]
    n_cases = 2000
    seed = 42
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import re
import sys
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from scipy import stats

from . import __version__
from .cascade import (GroupDonationStats, VerificationHistogram, build_cascade, case_statistics,
                      platform_share_counts, write_edge_list)
from .event_log import (RELATIONSHIPS, DuplicateCaseError, ParseResult, dump_line, read_logs,
                        validate_campaign, write_logs, write_rejects)
from .features import (ContentFeatureExtractor, ContentFeatures, Dictionaries, LexiconScorer,
                       TemporalFeatureExtractor, format_summary_table, load_lexicon, load_terms, top_bottom_summary)
from .pipeline import DEFAULT_WINDOWS, MODELS, final_target, save_model, train_eval
from .predict import TARGETS
from .synth import InfeasibleConfigError, SynthConfig, calibrate_report, generate
from .units import HOUR, format_duration, parse_duration, parse_duration_list

logger = logging.getLogger("medfund")

EXIT_OK = 0
EXIT_FAILURE = 1  # fatal data problem
EXIT_USAGE = 2    # bad configuration or arguments
MIN_TRAIN_CASES = 10


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    profiles: Optional[Path] = None
    events: Optional[Path] = None
    out: Path = Path("out")
    windows: tuple = DEFAULT_WINDOWS
    delta_t: int = HOUR
    seed: int = 0
    workers: int = 1
    models: tuple = tuple(MODELS)
    provinces: Optional[Path] = None
    cities: Optional[Path] = None
    diseases: Optional[Path] = None
    lexicon: Optional[Path] = None
    drop_unresolved: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)

    def check(self) -> None:
        if self.delta_t <= 0:
            raise ConfigError("delta_t must be positive")
        if not self.windows:
            raise ConfigError("at least one window is required")
        for w in self.windows:
            if w <= 0 or w % self.delta_t:
                raise ConfigError(f"window {format_duration(w)} is not a positive multiple of "
                                  f"delta_t {format_duration(self.delta_t)}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        unknown = sorted(set(self.models) - set(MODELS))
        if unknown:
            raise ConfigError(f"unknown models {unknown}; choose from {list(MODELS)}")

    def dictionaries(self) -> Dictionaries:
        default = Dictionaries.default()
        return Dictionaries(
            load_terms(self.provinces) if self.provinces else default.provinces,
            load_terms(self.cities) if self.cities else default.cities,
            load_terms(self.diseases) if self.diseases else default.diseases,
            LexiconScorer(load_lexicon(self.lexicon)) if self.lexicon else default.scorer,
        )


def load_config(path=None, **overrides) -> RunConfig:
    """Read ``[run]`` / ``[synth]`` from an INI file, then apply non-None overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        base = Path(path).resolve().parent
        run = parser["run"] if parser.has_section("run") else {}
        cfg = _apply_run_section(cfg, dict(run), base)
        synth_values = dict(parser["synth"]) if parser.has_section("synth") else {}
        cfg.synth = SynthConfig.from_mapping(synth_values)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def _apply_run_section(cfg: RunConfig, run: dict, base: Path) -> RunConfig:
    known = {"profiles", "events", "out", "windows", "delta_t", "seed", "workers", "models",
             "provinces", "cities", "diseases", "lexicon", "drop_unresolved"}
    unknown = sorted(set(run) - known)
    if unknown:
        raise ConfigError(f"unknown [run] keys: {unknown}")
    try:
        for key in ("profiles", "events", "out", "provinces", "cities", "diseases", "lexicon"):
            if key in run:
                setattr(cfg, key, base / run[key])
        if "windows" in run:
            cfg.windows = tuple(parse_duration_list(run["windows"]))
        if "delta_t" in run:
            cfg.delta_t = parse_duration(run["delta_t"])
        if "seed" in run:
            cfg.seed = int(run["seed"])
        if "workers" in run:
            cfg.workers = int(run["workers"])
        if "models" in run:
            cfg.models = tuple(m.strip() for m in run["models"].split(",") if m.strip())
        if "drop_unresolved" in run:
            cfg.drop_unresolved = run["drop_unresolved"].strip().lower() in ("1", "true", "yes", "on")
    except ValueError as exc:
        raise ConfigError(f"[run]: {exc}") from exc
    return cfg


# -- shared plumbing -------------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False))


def _write_jsonl(path: Path, rows) -> None:
    _write_text(path, "".join(dump_line(row) + "\n" for row in rows) or "\n")


def _read_corpus(cfg: RunConfig) -> ParseResult:
    if cfg.profiles is None or cfg.events is None:
        raise ConfigError("both profiles and events paths are required ([run] profiles/events)")
    return read_logs(cfg.profiles, cfg.events)


def _validated(cfg: RunConfig):
    """Parse, write the rejects report, and split records into valid and invalid."""
    parsed = _read_corpus(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "rejects.jsonl", "w", encoding="utf-8") as fh:
        write_rejects(parsed.rejects, fh)
    valid, invalid = [], []
    for record in parsed.records:
        verdict = validate_campaign(record)
        (valid if verdict else invalid).append((record, verdict))
    return parsed, [r for r, _ in valid], invalid


# -- validate --------------------------------------------------------------------------

def cmd_validate(cfg: RunConfig) -> int:
    parsed, valid, invalid = _validated(cfg)
    reasons = Counter(v.reason for _, v in invalid)
    summary = {
        "valid": len(valid),
        "invalid": len(invalid),
        "rejected_lines": len(parsed.rejects),
        "reasons": dict(sorted(reasons.items())),
        "invalid_cases": [{"case_id": r.case_id, "reason": v.reason} for r, v in invalid],
    }
    _write_json(cfg.out / "validation.json", summary)
    lines = [f"{len(valid)} valid, {len(invalid)} invalid, {len(parsed.rejects)} rejected lines"]
    lines += [f"  {count:6d}  {reason}" for reason, count in sorted(reasons.items())]
    lines += [f"  invalid {r.case_id}: {v.reason}" for r, v in invalid]
    text = "\n".join(lines)
    _write_text(cfg.out / "validation.txt", text)
    print(lines[0])
    return EXIT_OK


# -- analyze ---------------------------------------------------------------------------

def two_proportion_ztest(x1: int, n1: int, x2: int, n2: int) -> tuple[float, float]:
    """Pooled two-sided z test for p1 == p2.  Returns (z, p)."""
    if n1 == 0 or n2 == 0:
        return math.nan, math.nan
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        return math.nan, math.nan
    z = (x1 / n1 - x2 / n2) / se
    return z, float(2 * stats.norm.sf(abs(z)))


def _finite(x):
    return None if x is None or not math.isfinite(x) else x


def cmd_analyze(cfg: RunConfig) -> int:
    parsed, records, _ = _validated(cfg)
    if not records:
        logger.error("no valid cases to analyze")
        return EXIT_FAILURE
    out = cfg.out

    per_case, step1, other = [], GroupDonationStats("step1", 0, 0, 0.0), GroupDonationStats("other", 0, 0, 0.0)
    step1_amounts, other_amounts = [], []
    histogram = VerificationHistogram({k: 0 for k in RELATIONSHIPS})
    platform = shares_seen = 0
    fallbacks = dropped = 0
    with open(out / "cascades.edges", "w", encoding="utf-8") as edges:
        for record in records:
            graph = build_cascade(record, drop_unresolved=cfg.drop_unresolved)
            write_edge_list(graph, edges)
            fallbacks += len(graph.fallback_nodes)
            dropped += graph.dropped_shares
            stats_ = case_statistics(record, drop_unresolved=cfg.drop_unresolved)
            n_platform, n_shares = platform_share_counts(record)
            platform += n_platform
            shares_seen += n_shares
            step1 += stats_.donations.step1
            other += stats_.donations.other
            step1_amounts += stats_.donations.step1_amounts
            other_amounts += stats_.donations.other_amounts
            histogram += stats_.verifications
            row = stats_.to_dict()
            row.update(fundraiser=graph.fundraiser, fallback_nodes=len(graph.fallback_nodes),
                       platform_shares=n_platform, shares=len(record.shares),
                       donations=len(record.donations), obtained_amount=record.profile.obtained_amount)
            per_case.append(row)
    _write_jsonl(out / "cascade_stats.jsonl", per_case)

    # content-factor table and plot-ready feature export
    feats = ContentFeatureExtractor(cfg.dictionaries()).transform_objects(records)
    obtained = [r.profile.obtained_amount for r in records]
    case_ids = [r.case_id for r in records]
    table_ok = len(records) >= 10
    if table_ok:
        rows = top_bottom_summary(case_ids, obtained, feats)
        _write_text(out / "table1.txt", format_summary_table(rows))
        _write_jsonl(out / "table1.jsonl", [
            {k: _finite(v) if isinstance(v, float) else v for k, v in row.to_dict().items()} for row in rows])
    else:
        logger.warning("fewer than 10 valid cases: content-factor table skipped")
    with open(out / "features.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        names = ContentFeatures.names()
        writer.writerow(["case_id", *names, "obtained_amount", "target_amount", "shares", "p_g2",
                         "verifications"])
        for record, feat, row in zip(records, feats, per_case):
            writer.writerow([record.case_id, *("" if getattr(feat, n) is None else getattr(feat, n) for n in names),
                             record.profile.obtained_amount, record.profile.target_amount,
                             len(record.shares), row["p_g2"], len(record.verifications)])

    # model-input matrices, one per window: content columns then flattened increments
    content_matrix = [f.to_array() for f in feats]
    for window in cfg.windows:
        extractor = TemporalFeatureExtractor(window=window, delta_t=cfg.delta_t)
        temporal = extractor.transform(records)
        with open(out / f"feature_matrix_{format_duration(window)}.csv", "w", encoding="utf-8",
                  newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["case_id", *ContentFeatures.names(), *extractor.get_feature_names_out()])
            for cid, c_row, t_row in zip(case_ids, content_matrix, temporal):
                writer.writerow([cid, *(repr(float(v)) for v in c_row), *(repr(float(v)) for v in t_row)])

    total = histogram.total
    _write_json(out / "verifications.json", {
        "counts": dict(histogram.counts),
        "proportions": {k: (v / total if total else None) for k, v in histogram.counts.items()},
        "total": total,
    })

    z, p_z = two_proportion_ztest(step1.donors, step1.members, other.donors, other.members)
    if len(step1_amounts) > 1 and len(other_amounts) > 1:
        t, p_t = stats.ttest_ind(step1_amounts, other_amounts, equal_var=False)
        t, p_t = float(t), float(p_t)
    else:
        t = p_t = math.nan
    comparison = {
        "step1": step1.to_dict(),
        "other": other.to_dict(),
        "proportion_ztest": {"z": _finite(z), "p_value": _finite(p_z)},
        "amount_welch_ttest": {"t": _finite(t), "p_value": _finite(p_t)},
        "platform_share_fraction": platform / shares_seen if shares_seen else None,
        "mean_p_g2": sum(r["p_g2"] for r in per_case) / len(per_case),
        "fallback_nodes": fallbacks,
        "dropped_shares": dropped,
        "cases": len(records),
    }
    _write_json(out / "donations.json", comparison)

    lines = [
        f"cases analyzed: {len(records)}",
        f"mean P_G2: {comparison['mean_p_g2']:.4f}",
        "platform share fraction: " + ("n/a" if not shares_seen else f"{platform / shares_seen:.4f}"),
        "", f"{'group':<8}{'members':>10}{'donors':>10}{'donor prop':>12}{'mean amount':>14}",
    ]
    for g in (step1, other):
        prop = "n/a" if g.donor_proportion is None else f"{g.donor_proportion:.4f}"
        mean = "n/a" if g.mean_amount is None else f"{g.mean_amount:.2f}"
        lines.append(f"{g.group:<8}{g.members:>10}{g.donors:>10}{prop:>12}{mean:>14}")
    lines += [f"proportion z = {z:.3f} (p = {p_z:.3g}); amount Welch t = {t:.3f} (p = {p_t:.3g})",
              "", "verifications by relationship:"]
    lines += [f"  {k:<10}{v:>8}" for k, v in histogram.counts.items()]
    if table_ok:
        lines += ["", format_summary_table(rows)]
    text = "\n".join(lines)
    _write_text(out / "analysis.txt", text)
    print(text)
    return EXIT_OK


# -- train-eval ------------------------------------------------------------------------

def _model_filename(name: str, target: str, window: Optional[int]) -> str:
    slug = re.sub(r"[^A-Za-z0-9+]+", "_", name).strip("_")
    return f"{slug}__{target}__{'all' if window is None else format_duration(window)}.json"


def cmd_train_eval(cfg: RunConfig) -> int:
    _, records, _ = _validated(cfg)
    for target in TARGETS:
        positive = sum(1 for r in records if final_target(r, target) > 0)
        if positive < MIN_TRAIN_CASES:
            logger.error("only %d valid cases with positive %s target (need %d)",
                         positive, target, MIN_TRAIN_CASES)
            return EXIT_FAILURE
    try:
        report, fitted = train_eval(records, cfg.windows, cfg.delta_t, cfg.seed, cfg.models,
                                    cfg.workers, cfg.dictionaries())
    except (ValueError, FloatingPointError) as exc:
        logger.error("training failed: %s", exc)
        return EXIT_FAILURE
    models_dir = cfg.out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    for model in fitted:
        save_model(model, models_dir / _model_filename(model.name, model.target, model.window))
    _write_text(cfg.out / "eval.jsonl", report.to_json_lines())
    _write_text(cfg.out / "eval_cases.jsonl", report.per_case_lines())
    table = report.to_table()
    _write_text(cfg.out / "eval.txt", table)
    print(table)
    return EXIT_OK


# -- synth -----------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    synth_cfg = cfg.synth
    try:
        synth_cfg.validate()
    except InfeasibleConfigError as exc:
        print(f"medfund: infeasible synth config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    corpus = generate(synth_cfg, workers=cfg.workers)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "profiles.jsonl", "w", encoding="utf-8") as profiles, \
            open(out / "events.jsonl", "w", encoding="utf-8") as events:
        write_logs(corpus, profiles, events)
    report = calibrate_report(corpus, synth_cfg)
    _write_text(out / "calibration.txt", report.to_text())
    _write_jsonl(out / "calibration.jsonl", [row.to_dict() for row in report.rows])
    _write_text(out / "synth.ini", synth_cfg.to_text())
    print(report.to_text())
    if report.deviations:
        logger.warning("calibration outside tolerance: %s", ", ".join(report.deviations))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------

COMMANDS = {
    "validate": cmd_validate,
    "analyze": cmd_analyze,
    "train-eval": cmd_train_eval,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medfund", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with [run] and [synth] sections")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="master seed (synth: corpus seed)")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--windows", help="observation windows, e.g. 1d,2d,3d")
    common.add_argument("--delta-t", dest="delta_t", help="bin width, e.g. 1h")
    common.add_argument("--profiles", type=Path, help="case profile JSONL")
    common.add_argument("--events", type=Path, help="event JSONL")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _config_from_args(args) -> RunConfig:
    try:
        windows = tuple(parse_duration_list(args.windows)) if args.windows else None
        delta_t = parse_duration(args.delta_t) if args.delta_t else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = load_config(args.config, out=args.out, workers=args.workers, windows=windows,
                      delta_t=delta_t, profiles=args.profiles, events=args.events)
    if args.seed is not None:
        if args.command == "synth":
            cfg.synth = replace(cfg.synth, seed=args.seed)
        else:
            cfg.seed = args.seed
    cfg.check()
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config_from_args(args)
    except (ConfigError, InfeasibleConfigError) as exc:
        print(f"medfund: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"medfund: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DuplicateCaseError) as exc:
        print(f"medfund: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
