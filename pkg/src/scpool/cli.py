"""Command-line entry point.

Exit codes: 0 success, 1 failed oracle check, 2 invalid configuration,
3 infeasible parameters.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import checks
from .decoder import decode, write_result
from .harness import (
    ConfigError,
    ExperimentConfig,
    report,
    simulate,
    sweep,
    trial_seeds,
    write_report,
)
from .measure import measure, read_measurements, write_measurements
from .params import ParameterError
from .scheme import build_scheme, read_edge_list, sample_ground_truth, write_edge_list

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _single_params(cfg: ExperimentConfig, point: int = 0):
    if cfg.spec.d != 1:
        raise ConfigError("this command handles one non-zero label; use `trial` or `sweep` for d >= 2")
    return cfg.point_params(point)[0]


def cmd_derive(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    for g, params in enumerate(cfg.point_params(0)):
        prefix = f"[scheme {g}] " if cfg.spec.d > 1 else ""
        for key, value in params.as_dict().items():
            print(f"{prefix}{key} = {value}")
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    params = _single_params(cfg)
    scheme = build_scheme(params, args.seed)
    write_edge_list(scheme, args.out)
    if args.measurements:
        truth = sample_ground_truth(cfg.spec, params, args.seed)
        write_measurements(scheme, measure(scheme, truth), args.measurements)
        if args.truth:
            np.savetxt(args.truth, truth.sigma, fmt="%d")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    params = _single_params(cfg)
    scheme = read_edge_list(args.scheme)
    ms = read_measurements(args.measurements)
    if ms.d != 1:
        ms = ms.binary(1)
    result = decode(scheme, ms, params)
    write_result(scheme, result, args.out)
    return EXIT_OK


def cmd_trial(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = _reseed(cfg, args.seed)
    result, sigma = simulate(cfg, args.point, args.index)
    if args.out:
        if cfg.spec.d == 1:
            params = cfg.point_params(args.point)[0]
            scheme = build_scheme(params, trial_seeds(cfg.base_seed, args.point, args.index)[1])
            write_result(scheme, result, args.out, truth=sigma)
        else:
            raise ConfigError("--out for trial supports d = 1 only")
    print(
        f"exact_recovery={int(result.exact_recovery)} fp={result.false_positives} "
        f"fn={result.false_negatives} wall_time={result.wall_time:.4f}"
    )
    return EXIT_OK


def _reseed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, base_seed=seed)


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = _reseed(cfg, args.seed)
    out = args.out or cfg.output_path
    if not out:
        raise ConfigError("no output path: pass --out or set [output] path")
    table = sweep(cfg, out, threads=args.threads)
    if args.report:
        write_report(report([table]), args.report)
    for row in table.rows:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    ok = True
    for name, passed, detail in checks.run_all(seed=args.seed or 0):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scpool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, config=True):
        p = sub.add_parser(name, help=help_)
        if config:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=_u64, default=None, help="64-bit seed")
        p.add_argument("--threads", type=int, default=None, help="worker processes")
        p.set_defaults(func=func)
        return p

    add("derive", cmd_derive, "print the parameters of a configuration")
    p = add("build", cmd_build, "sample a scheme and write its edge list")
    p.add_argument("--out", required=True)
    p.add_argument("--measurements", help="also sample a truth and write its measurements here")
    p.add_argument("--truth", help="with --measurements, write the bulk labels here")
    p = add("decode", cmd_decode, "decode measurements against a stored scheme")
    p.add_argument("--scheme", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", required=True)
    p = add("trial", cmd_trial, "run one Monte-Carlo trial")
    p.add_argument("--point", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p = add("sweep", cmd_sweep, "run a sweep and write the success table")
    p.add_argument("--out")
    p.add_argument("--report", help="also write the table with reference test counts")
    add("oracle-check", cmd_oracle_check, "run the built-in oracle validations", config=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "build" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterError as err:
        print(f"infeasible parameters: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
