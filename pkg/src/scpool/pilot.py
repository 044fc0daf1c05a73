"""Pilot run that tunes layout overrides and the threshold for an end-to-end check.

Under a perfect history the decoder classifies every item correctly exactly
when all label-0 scores sit at or below the threshold and all label-1 scores
above it.  A pilot therefore records, per trial, the largest label-0 score
and the smallest label-1 score, and afterwards picks the threshold that the
most trials would have passed.

Run ``python3 -m scpool.pilot`` to reproduce the frozen overrides used by the
acceptance suite.
"""

from __future__ import annotations

import argparse
import functools
import math
from dataclasses import dataclass

import numpy as np

from .decoder import decode
from .harness import trial_seeds
from .measure import measure
from .params import Params, ProblemSpec, validate_overrides
from .scheme import build_scheme, sample_ground_truth

# (ell, s, fraction of a compartment drawn per window slot)
DEFAULT_CANDIDATES = (
    (40, 10, 0.35),
    (40, 10, 0.40),
    (40, 13, 0.35),
    (40, 20, 0.35),
    (40, 30, 0.35),
    (60, 20, 0.35),
)


@dataclass(frozen=True)
class PilotOutcome:
    overrides: dict
    extremes: np.ndarray  # (trials, 2): largest label-0 score, smallest label-1 score
    threshold: float
    success: float

    @property
    def alpha(self) -> float:
        m, k, s = self.overrides["m"], self.overrides["k_scale"], self.overrides["s"]
        return self.threshold / (math.sqrt(m / k) * math.log(s))


def candidate_params(spec: ProblemSpec, ell: int, s: int, fraction: float, m_inf_multiple: float) -> Params:
    draws = max(1, round(fraction * (spec.n // ell)))
    L = ell + s - 1
    base = validate_overrides(spec, {"ell": ell, "s": s, "Gamma": draws * s, "m": L})
    m = L * math.ceil(m_inf_multiple * base.m_inf / L - 1e-12)
    return validate_overrides(spec, {"ell": ell, "s": s, "Gamma": draws * s, "m": m})


def score_extremes(spec: ProblemSpec, params: Params, seed: int, point: int, trials: int) -> np.ndarray:
    out = np.empty((trials, 2))
    for t in range(trials):
        truth_seed, scheme_seed = trial_seeds(seed, point, t)
        truth = sample_ground_truth(spec, params, truth_seed)
        scheme = build_scheme(params, scheme_seed)
        history = (truth.labels == 1).astype(np.int64)
        scores = decode(scheme, measure(scheme, truth), params, history=history).scores
        zero, one = scores[truth.sigma == 0], scores[truth.sigma == 1]
        out[t] = (zero.max() if zero.size else -np.inf, one.min() if one.size else np.inf)
    return out


def best_threshold(extremes: np.ndarray) -> tuple[float, float]:
    """Threshold passing the most trials, centred in the widest such interval."""
    points = np.unique(extremes[np.isfinite(extremes)])
    if points.size == 0:
        return 0.0, 1.0
    mids = np.concatenate([[points[0] - 1.0], (points[:-1] + points[1:]) / 2, [points[-1] + 1.0]])
    passed = np.array([np.mean((extremes[:, 0] <= t) & (t < extremes[:, 1])) for t in mids])
    best = passed.max()
    # among tied midpoints prefer the widest gap between neighbouring breakpoints
    edges = np.concatenate([[points[0] - 2.0], points, [points[-1] + 2.0]])
    widths = np.diff(edges)
    choice = int(np.argmax(np.where(passed == best, widths, -np.inf)))
    return float(mids[choice]), float(best)


def run_pilot(
    spec: ProblemSpec,
    candidates=DEFAULT_CANDIDATES,
    trials: int = 40,
    seed: int = 20240,
    m_inf_multiple: float = 10.0,
    log=functools.partial(print, flush=True),
) -> list[PilotOutcome]:
    outcomes = []
    for point, (ell, s, fraction) in enumerate(candidates):
        params = candidate_params(spec, ell, s, fraction, m_inf_multiple)
        extremes = score_extremes(spec, params, seed, point, trials)
        threshold, success = best_threshold(extremes)
        overrides = {"ell": ell, "s": s, "Gamma": params.Gamma, "m": params.m, "k_scale": params.k_scale}
        outcome = PilotOutcome(overrides, extremes, threshold, success)
        outcomes.append(outcome)
        log(
            f"ell={ell} s={s} Gamma={params.Gamma} m={params.m} "
            f"success={success:.3f} threshold={threshold:.4f} alpha={outcome.alpha:.6f}"
        )
    return outcomes


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="tune end-to-end overrides by perfect-history trials")
    parser.add_argument("--n", type=int, default=100_000)
    parser.add_argument("--theta", type=float, default=0.3)
    parser.add_argument("--trials", type=int, default=40)
    parser.add_argument("--seed", type=int, default=20240)
    parser.add_argument("--multiple", type=float, default=10.0, help="m as a multiple of m_inf")
    args = parser.parse_args(argv)
    spec = ProblemSpec(n=args.n, theta=(args.theta,))
    outcomes = run_pilot(spec, trials=args.trials, seed=args.seed, m_inf_multiple=args.multiple)
    best = max(outcomes, key=lambda o: o.success)
    print(f"chosen: {best.overrides} alpha={best.alpha!r} pilot success={best.success:.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
