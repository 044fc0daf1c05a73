"""Monte-Carlo experiments: configuration, reproducible trials, sweeps, reports.

Every random draw of a trial derives from ``(base_seed, point_index,
trial_index)`` through ``trial_seeds``; sweeps are therefore a pure function
of the configuration file.
"""

from __future__ import annotations

import configparser
import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .decoder import DecodeResult, decode, decode_multilabel
from .measure import measure
from .params import (
    ParameterError,
    Params,
    ProblemSpec,
    group_spec,
    information_threshold,
    label_groups,
    make_params,
    optimal_multiplier,
)
from .scheme import attach_seed, build_scheme, sample_ground_truth

SWEEP_COLUMNS = (
    "m", "trials", "exact_recovery_rate", "mean_fp", "mean_fn", "mean_score_sep", "wall_time_mean",
)
REPORT_COLUMNS = ("theta", "k", *SWEEP_COLUMNS, "m_inf", "m_inf_times_c_theta")
SWEEP_AXES = ("m", "delta", "m_inf_multiples")

_ALLOWED = {
    "problem": {"n", "d", "theta", "delta", "k"},
    "overrides": {"ell", "s", "gamma", "m", "alpha"},
    "sweep": {"axis", "values", "trials", "seed", "threads"},
    "output": {"path"},
}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    spec: ProblemSpec
    overrides: dict = field(default_factory=dict)
    axis: str = "m"
    values: tuple[float, ...] = ()
    trials: int = 1
    base_seed: int = 0
    threads: int = 1
    output_path: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as err:
            raise ConfigError(str(err)) from err
        for section in cp.sections():
            if section not in _ALLOWED:
                raise ConfigError(f"unknown section [{section}]")
            unknown = set(cp[section]) - _ALLOWED[section]
            if unknown:
                raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        if "problem" not in cp:
            raise ConfigError("missing [problem] section")
        prob = cp["problem"]
        try:
            theta = _floats(prob["theta"])
            k = _ints(prob["k"]) if "k" in prob else None
            if "d" in prob and int(prob["d"]) != len(theta):
                raise ConfigError(f"d={prob['d']} but {len(theta)} theta values given")
            spec = ProblemSpec(n=int(prob["n"]), theta=theta, delta=float(prob.get("delta", "0.2")), explicit_k=k)
            overrides = {}
            for key, raw in cp["overrides"].items() if "overrides" in cp else []:
                overrides[key] = float(raw) if key == "alpha" else int(raw)
            sw = cp["sweep"] if "sweep" in cp else {}
            axis = sw.get("axis", "m")
            values = _floats(sw["values"]) if "values" in sw else ()
            cfg = cls(
                spec=spec,
                overrides=overrides,
                axis=axis,
                values=values,
                trials=int(sw.get("trials", "1")),
                base_seed=int(sw.get("seed", "0")),
                threads=int(sw.get("threads", "1")),
                output_path=cp["output"].get("path") if "output" in cp else None,
            )
        except KeyError as err:
            raise ConfigError(f"missing key {err}") from err
        except ValueError as err:
            if isinstance(err, (ConfigError, ParameterError)):
                raise
            raise ConfigError(str(err)) from err
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read {path}: {err}") from err
        return cls.from_text(text)

    def points(self) -> list[tuple[ProblemSpec, dict]]:
        """``(spec, overrides)`` per sweep value; a config without values is one point."""
        if not self.values:
            return [(self.spec, dict(self.overrides))]
        out = []
        for v in self.values:
            spec, manual = self.spec, dict(self.overrides)
            if self.axis == "m":
                manual["m"] = int(v)
            elif self.axis == "delta":
                spec = replace(spec, delta=float(v))
            else:
                base = make_params(spec, manual)
                manual["m"] = base.L * math.ceil(v * base.m_inf / base.L - 1e-12)
            out.append((spec, manual))
        return out

    def point_params(self, index: int) -> list[Params]:
        """Params of every scheme used at sweep point ``index`` (one per label group)."""
        spec, manual = self.points()[index]
        return [make_params(group_spec(spec, g), manual or None) for g in label_groups(spec)]


def trial_seeds(base_seed: int, point_index: int, trial_index: int, streams: int = 2) -> list[int]:
    """Independent 64-bit seeds for one trial, via ``SeedSequence`` mixing."""
    ss = np.random.SeedSequence([int(base_seed), int(point_index), int(trial_index)])
    return [int(v) for v in ss.generate_state(streams, dtype=np.uint64)]


def run_trial(config: ExperimentConfig, point_index: int, trial_index: int) -> DecodeResult:
    """Sample a truth, build the scheme(s), measure and decode."""
    return simulate(config, point_index, trial_index)[0]


def simulate(config: ExperimentConfig, point_index: int, trial_index: int) -> tuple[DecodeResult, np.ndarray]:
    """Like ``run_trial`` but also returns the bulk truth."""
    spec, _ = config.points()[point_index]
    params = config.point_params(point_index)
    groups = label_groups(spec)
    seeds = trial_seeds(config.base_seed, point_index, trial_index, 1 + len(groups))
    truth_seed, scheme_seeds = seeds[0], seeds[1:]
    first = sample_ground_truth(spec, params[0], truth_seed)
    if spec.d == 1:
        scheme = build_scheme(params[0], scheme_seeds[0])
        return decode(scheme, measure(scheme, first), params[0], truth=first), first.sigma
    schemes, measurements = [], []
    for g, (p, seed) in enumerate(zip(params, scheme_seeds)):
        truth = first if g == 0 else attach_seed(first.sigma, spec, p, seed)
        scheme = build_scheme(p, seed)
        schemes.append(scheme)
        measurements.append(measure(scheme, truth))
    result = decode_multilabel(schemes, measurements, spec, params, truth_sigma=first.sigma)
    return result, first.sigma


def score_separation(result: DecodeResult, truth_sigma: np.ndarray) -> float:
    """Mean score of non-zero items minus that of zero items (first label for ``d >= 2``)."""
    scores = result.scores if result.scores.ndim == 1 else result.scores[0]
    pos = np.asarray(truth_sigma) == 1
    if not pos.any() or pos.all():
        return float("nan")
    return float(scores[pos].mean() - scores[~pos].mean())


@dataclass(frozen=True)
class TrialSummary:
    exact: bool
    fp: int
    fn: int
    score_sep: float
    wall_time: float


def summarize_trial(args) -> TrialSummary:
    config, point_index, trial_index = args
    result, sigma = simulate(config, point_index, trial_index)
    return TrialSummary(
        exact=bool(result.exact_recovery),
        fp=result.false_positives,
        fn=result.false_negatives,
        score_sep=score_separation(result, sigma),
        wall_time=result.wall_time,
    )


def aggregate(m: int, summaries: Sequence[TrialSummary]) -> dict:
    seps = [t.score_sep for t in summaries if not math.isnan(t.score_sep)]
    return {
        "m": m,
        "trials": len(summaries),
        "exact_recovery_rate": sum(t.exact for t in summaries) / len(summaries),
        "mean_fp": sum(t.fp for t in summaries) / len(summaries),
        "mean_fn": sum(t.fn for t in summaries) / len(summaries),
        "mean_score_sep": sum(seps) / len(seps) if seps else float("nan"),
        "wall_time_mean": sum(t.wall_time for t in summaries) / len(summaries),
    }


@dataclass
class SweepTable:
    theta: float
    k: int
    rows: list[dict]


def sweep(config: ExperimentConfig, out_path: str | Path | None = None, threads: int | None = None) -> SweepTable:
    """Run every point for ``config.trials`` trials; rows follow the sweep order.

    When an output path is known, each point's row is written and flushed as
    soon as it is complete.
    """
    out_path = out_path or config.output_path
    threads = threads or config.threads
    n_points = len(config.points())
    for i in range(n_points):
        config.point_params(i)  # fail fast on invalid points
    table = SweepTable(theta=config.spec.theta_max, k=config.spec.k, rows=[])
    fh = writer = None
    if out_path:
        fh = open(out_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        fh.flush()
    pool = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for i in range(n_points):
            jobs = [(config, i, t) for t in range(config.trials)]
            summaries = list(pool.map(summarize_trial, jobs)) if pool else [summarize_trial(j) for j in jobs]
            row = aggregate(config.point_params(i)[0].m, summaries)
            table.rows.append(row)
            if writer:
                writer.writerow(row)
                fh.flush()
    finally:
        if pool:
            pool.shutdown()
        if fh:
            fh.close()
    return table


def read_sweep(path: str | Path, theta: float, k: int) -> SweepTable:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise ValueError(f"{path}: expected columns {SWEEP_COLUMNS}")
        rows = [{k_: (int(v) if k_ in ("m", "trials") else float(v)) for k_, v in r.items()} for r in reader]
    return SweepTable(theta=theta, k=k, rows=rows)


def report(tables: Iterable[SweepTable]) -> list[dict]:
    """Merge sweep tables and attach the two reference test counts per row."""
    out = []
    for table in tables:
        m_inf = information_threshold(table.theta, table.k)
        for row in table.rows:
            if set(row) != set(SWEEP_COLUMNS):
                raise ValueError(f"row does not follow the sweep schema: {sorted(row)}")
            out.append({
                "theta": table.theta,
                "k": table.k,
                **row,
                "m_inf": m_inf,
                "m_inf_times_c_theta": optimal_multiplier(table.theta) * m_inf,
            })
    return out


def write_report(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
