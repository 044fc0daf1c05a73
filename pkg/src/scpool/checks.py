"""Quick self-validation run by ``scpool oracle-check``.

Each check yields ``(name, passed, detail)``.  The sizes are small enough to
finish in a few seconds; the test suite runs the full-scale versions.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .decoder import decode, score_units
from .measure import measure
from .oracle import (
    HypergeometricSpec,
    brute_force_decode,
    conditional_mean_var_U,
    ideal_score_units,
    resample_unexplained,
    residual_gap_units,
)
from .params import ProblemSpec, validate_overrides
from .scheme import build_scheme, sample_ground_truth

TINY_OVERRIDES = {"ell": 4, "s": 2, "Gamma": 4, "m": 200}


def check_pmf(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        N = int(rng.integers(1, 300))
        h = HypergeometricSpec(N, int(rng.integers(0, N + 1)), int(rng.integers(0, N + 1)))
        worst = max(worst, abs(float(sum(h.pmf(j) for j in h.support)) - 1.0))
    return worst <= 1e-12, f"max |sum pmf - 1| = {worst:.2e}"


def check_moments(seed: int) -> tuple[bool, str]:
    spec = ProblemSpec(n=20000, theta=(0.5,), explicit_k=(200,))
    params = validate_overrides(spec, {"ell": 10, "s": 3, "Gamma": 300, "m": 1200})
    scheme = build_scheme(params, seed)
    truth = sample_ground_truth(spec, params, seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in rng.choice(np.arange(scheme.n_prime, scheme.n_items), 5, replace=False):
        j = int(rng.integers(0, scheme.s))
        mean, var = conditional_mean_var_U(scheme, truth, int(x), j)
        u = resample_unexplained(scheme, truth, int(x), j, 4000, rng)
        if var > 0:
            worst = max(worst, abs(u.mean() - float(mean)) / math.sqrt(float(var) / len(u)))
    return worst < 4.0, f"largest mean deviation {worst:.2f} standard errors"


def check_gap(seed: int) -> tuple[bool, str]:
    spec = ProblemSpec(n=4000, theta=(0.5,), explicit_k=(60,))
    params = validate_overrides(spec, {"ell": 8, "s": 3, "Gamma": 90, "m": 500})
    scheme = build_scheme(params, seed)
    truth = sample_ground_truth(spec, params, seed)
    ms = measure(scheme, truth)
    history = (truth.labels == 1).astype(np.int64)
    rng = np.random.default_rng(seed)
    bad = 0
    for x in rng.choice(np.arange(scheme.n_prime, scheme.n_items), 10, replace=False):
        gap = ideal_score_units(scheme, truth, int(x)) - score_units(scheme, ms, history, int(x))
        bad += gap != residual_gap_units(scheme, int(x), int(history[x]))
    return bad == 0, f"{bad} of 10 items break the closed-form gap"


def check_brute_force(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    agree = total = 0
    for _ in range(20):
        n, k = int(rng.integers(12, 25)), int(rng.integers(1, 3))
        spec = ProblemSpec(n=n, theta=(0.3,), explicit_k=(k,))
        params = validate_overrides(spec, TINY_OVERRIDES)
        scheme = build_scheme(params, int(rng.integers(2**63)))
        truth = sample_ground_truth(spec, params, int(rng.integers(2**63)))
        ms = measure(scheme, truth)
        found = brute_force_decode(scheme, ms, k)
        if len(found) == 1:
            total += 1
            agree += np.array_equal(decode(scheme, ms, params).sigma_hat, found[0])
    return total > 0 and agree >= 0.95 * total, f"decode matches exhaustive search on {agree}/{total}"


CHECKS = {
    "hypergeometric-normalisation": check_pmf,
    "conditional-mean-U": check_moments,
    "residual-gap-identity": check_gap,
    "exhaustive-agreement": check_brute_force,
}


def run_all(seed: int = 0) -> Iterator[tuple[str, bool, str]]:
    for name, fn in CHECKS.items():
        passed, detail = fn(seed)
        yield name, bool(passed), detail
