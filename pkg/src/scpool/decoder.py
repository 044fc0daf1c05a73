"""One-stage neighbourhood thresholding decoder.

Bulk compartments are decoded in order.  For an item ``x`` in compartment
``c`` and window offset ``j``, the unexplained sum adds, over the pools of
pool compartment ``c + j`` that contain ``x``, the pool count minus the mass
already attributed to the decoded compartments ``c - s + j + 1 .. c - 1``.
Centering removes the expected contribution of the other items, and the
normalised score is compared with ``T_alpha``.

The vectorised ``decode`` keeps, per pool and window offset, the label-1
mass of the corresponding compartment under the current estimate, so each
compartment costs one pass over its incident edges.  ``compute_unexplained``,
``compute_centering`` and ``compute_score`` evaluate single items directly
from the definitions and serve as reference implementations.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .measure import MeasurementSet
from .params import Params, ProblemSpec, label_groups
from .scheme import GroundTruth, PoolingScheme, pools_of


@dataclass
class DecodeResult:
    """Decoder output on the bulk items.

    ``errors_by_compartment[b] = (false positives, false negatives)`` for bulk
    compartment ``b``; both it and ``exact_recovery`` are ``None`` unless a
    truth was supplied.
    """

    sigma_hat: np.ndarray
    scores: np.ndarray
    wall_time: float
    errors_by_compartment: np.ndarray | None = None
    exact_recovery: bool | None = None
    conflicts: int = 0
    bulk_sizes: np.ndarray | None = field(default=None, repr=False)

    @property
    def false_positives(self) -> int:
        return int(self.errors_by_compartment[:, 0].sum())

    @property
    def false_negatives(self) -> int:
        return int(self.errors_by_compartment[:, 1].sum())


def _evaluate(result: DecodeResult, sigma: np.ndarray) -> None:
    sigma = np.asarray(sigma)
    wrong = result.sigma_hat != sigma
    fp = wrong & (result.sigma_hat != 0)
    fn = wrong & (sigma != 0)
    comp = np.repeat(np.arange(len(result.bulk_sizes)), result.bulk_sizes)
    ell = len(result.bulk_sizes)
    result.errors_by_compartment = np.stack(
        [np.bincount(comp[fp], minlength=ell), np.bincount(comp[fn], minlength=ell)], axis=1
    )
    result.exact_recovery = bool(not wrong.any()) and result.conflicts == 0


def centering_coefficients(scheme: PoolingScheme, counts: np.ndarray, c: int) -> np.ndarray:
    """``M^j_x / Delta_x[j]`` for every offset ``j``, for items of compartment ``c``."""
    s, L, D = scheme.s, scheme.L, scheme.draws
    coef = np.empty(s)
    acc = 0.0
    for r in range(s):
        cr = (c + r) % L
        if r == 0:
            acc += (D - 1) * counts[cr] / (scheme.sizes[cr] - 1)
        else:
            acc += D * counts[cr] / scheme.sizes[cr]
        coef[r] = acc
    return coef


class _State:
    """Per-pool explained mass, one column per window offset."""

    def __init__(self, scheme: PoolingScheme, labels: np.ndarray):
        self.scheme = scheme
        self.mass = np.zeros((scheme.m, scheme.s), dtype=np.int64)
        for c in range(scheme.s - 1):
            self.explain(c, labels[scheme.starts[c] : scheme.starts[c + 1]])

    def explain(self, c: int, values: np.ndarray) -> None:
        sch = self.scheme
        values = np.asarray(values, dtype=np.int64)
        for j in range(sch.s):
            sl = sch.pool_slice((c + j) % sch.L)
            t = sch.s - 1 - j
            self.mass[sl, t] = values[sch.members[sl, t]].sum(axis=1)

    def unexplained(self, counts: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray]:
        """``(U, Delta)``: arrays of shape ``(|V[c]|, s)`` for compartment ``c``."""
        sch = self.scheme
        size = int(sch.sizes[c])
        U = np.empty((size, sch.s), dtype=np.int64)
        deg = np.empty((size, sch.s), dtype=np.int64)
        for j in range(sch.s):
            sl = sch.pool_slice((c + j) % sch.L)
            t = sch.s - 1 - j
            resid = counts[sl] - self.mass[sl, :t].sum(axis=1)
            idx = sch.members[sl, t].ravel()
            U[:, j] = np.rint(
                np.bincount(idx, weights=np.repeat(resid, sch.draws).astype(float), minlength=size)
            ).astype(np.int64)
            deg[:, j] = np.bincount(idx, minlength=size)
        return U, deg


def compartment_scores(
    scheme: PoolingScheme, params: Params, counts_L: np.ndarray, U: np.ndarray, deg: np.ndarray, c: int
) -> np.ndarray:
    coef = centering_coefficients(scheme, counts_L, c)
    weights = 1.0 / (np.arange(1, scheme.s + 1) * params.score_scale)
    return ((U - deg * coef) * weights).sum(axis=1)


def decode(
    scheme: PoolingScheme,
    measurements: MeasurementSet,
    params: Params,
    *,
    truth: GroundTruth | None = None,
    history: np.ndarray | None = None,
) -> DecodeResult:
    """Run the thresholding decoder on two-label measurements.

    ``history`` (a label-1 indicator over all items, seed first) replaces the
    decoder's own decisions when explaining finished compartments, i.e. it
    enforces a perfect history.  ``truth`` only feeds the error statistics.
    """
    if measurements.d != 1:
        raise ValueError("decode expects two-label measurements; use MeasurementSet.binary")
    _check_match(scheme, measurements, params)
    t0 = time.perf_counter()
    counts_L = measurements.compartment_counts(scheme.n, scheme.ell, scheme.s)
    y = measurements.counts.astype(np.int64)
    seed = (measurements.seed_labels == 1).astype(np.int64)
    state = _State(scheme, seed if history is None else np.asarray(history, dtype=np.int64))
    threshold = params.T_alpha
    sigma_hat = np.zeros(scheme.n, dtype=np.int8)
    scores = np.zeros(scheme.n)
    n_prime = scheme.n_prime
    for c in scheme.bulk_compartments:
        U, deg = state.unexplained(y, c)
        score = compartment_scores(scheme, params, counts_L, U, deg, c)
        decision = (score > threshold).astype(np.int8)
        lo, hi = int(scheme.starts[c]) - n_prime, int(scheme.starts[c + 1]) - n_prime
        sigma_hat[lo:hi] = decision
        scores[lo:hi] = score
        if history is None:
            state.explain(c, decision)
        else:
            state.explain(c, np.asarray(history[scheme.starts[c] : scheme.starts[c + 1]]))
    result = DecodeResult(
        sigma_hat=sigma_hat,
        scores=scores,
        wall_time=time.perf_counter() - t0,
        bulk_sizes=scheme.sizes[scheme.s - 1 :],
    )
    if truth is not None:
        _evaluate(result, (np.asarray(truth.sigma) == 1).astype(np.int8))
    return result


def _check_match(scheme: PoolingScheme, ms: MeasurementSet, params: Params) -> None:
    if ms.histograms.shape[0] != scheme.m or ms.local_histograms.shape[0] != scheme.ell:
        raise ValueError("measurements do not match the scheme")
    if ms.seed_labels.shape[0] != scheme.n_prime:
        raise ValueError("seed labels do not match the scheme")
    if (params.n, params.ell, params.s, params.m, params.Gamma) != (
        scheme.n, scheme.ell, scheme.s, scheme.m, scheme.Gamma,
    ):
        raise ValueError("params do not describe this scheme")


# -- single-item reference evaluation ----------------------------------------

def _bulk_item(scheme: PoolingScheme, x: int, j: int) -> int:
    c = scheme.compartment_of(x)
    if c < scheme.s - 1:
        raise ValueError(f"item {x} is a seed item")
    if not 0 <= j < scheme.s:
        raise ValueError(f"window offset {j} outside 0..{scheme.s - 1}")
    return c


def compute_unexplained(
    scheme: PoolingScheme, measurements: MeasurementSet, sigma_tilde: np.ndarray, x: int, j: int
) -> int:
    """Unexplained label-1 mass of item ``x`` in pool compartment ``c(x) + j``.

    ``sigma_tilde`` is a label-1 indicator over all items (seed first).
    """
    c = _bulk_item(scheme, x, j)
    decoded = [(c - r) % scheme.L for r in range(1, scheme.s - j)]
    sigma_tilde = np.asarray(sigma_tilde, dtype=np.int64)
    total = 0
    for a in pools_of(scheme, x, j):
        members = scheme.pool_members(a)
        comps = np.searchsorted(scheme.starts, members, side="right") - 1
        explained = int(sigma_tilde[members[np.isin(comps, decoded)]].sum())
        total += int(measurements.counts[a]) - explained
    return total


def compute_centering(scheme: PoolingScheme, counts_L: Sequence[int], x: int, j: int) -> Fraction:
    """Expected mass from items other than ``x``, as an exact fraction."""
    c = _bulk_item(scheme, x, j)
    deg = len(pools_of(scheme, x, j))
    D = scheme.draws
    total = Fraction(0)
    for r in range(j + 1):
        cr = (c + r) % scheme.L
        size = int(scheme.sizes[cr]) - (r == 0)
        if size <= 0:
            raise ValueError(f"compartment {cr} too small to exclude the item")
        total += Fraction((D - (r == 0)) * int(counts_L[cr]), size)
    return deg * total


def score_units(
    scheme: PoolingScheme, measurements: MeasurementSet, sigma_tilde: np.ndarray, x: int
) -> Fraction:
    """``sum_j (U^j - M^j) / (j + 1)`` exactly; the score is this over ``params.score_scale``."""
    counts_L = measurements.compartment_counts(scheme.n, scheme.ell, scheme.s)
    return sum(
        (
            (compute_unexplained(scheme, measurements, sigma_tilde, x, j)
             - compute_centering(scheme, counts_L, x, j)) / (j + 1)
            for j in range(scheme.s)
        ),
        Fraction(0),
    )


def compute_score(
    scheme: PoolingScheme, measurements: MeasurementSet, sigma_tilde: np.ndarray, params: Params, x: int
) -> float:
    return float(score_units(scheme, measurements, sigma_tilde, x)) / params.score_scale


# -- several labels ----------------------------------------------------------

def decode_multilabel(
    schemes: Sequence[PoolingScheme],
    measurements: Sequence[MeasurementSet],
    spec: ProblemSpec,
    params_per_scheme: Sequence[Params],
    *,
    truth_sigma: np.ndarray | None = None,
) -> DecodeResult:
    """Decode ``d >= 2`` labels one round per label.

    ``schemes[g]`` serves the labels of ``label_groups(spec)[g]``.  Each round
    folds every other non-zero label into label ``0`` and runs ``decode``;
    rounds do not see each other's output.  An item claimed by two labels is
    a conflict and makes the decode fail.
    """
    groups = label_groups(spec)
    if not len(schemes) == len(measurements) == len(params_per_scheme) == len(groups):
        raise ValueError(f"expected {len(groups)} schemes for label groups {groups}")
    t0 = time.perf_counter()
    sigma_hat = np.zeros(spec.n, dtype=np.int8)
    scores = np.zeros((spec.d, spec.n))
    claimed = np.zeros(spec.n, dtype=np.int64)
    for scheme, ms, params, labels in zip(schemes, measurements, params_per_scheme, groups):
        for label in labels:
            res = decode(scheme, ms.binary(label), params)
            hit = res.sigma_hat == 1
            sigma_hat[hit] = label
            claimed += hit
            scores[label - 1] = res.scores
    result = DecodeResult(
        sigma_hat=sigma_hat,
        scores=scores,
        wall_time=time.perf_counter() - t0,
        conflicts=int((claimed > 1).sum()),
        bulk_sizes=schemes[0].sizes[schemes[0].s - 1 :],
    )
    if truth_sigma is not None:
        _evaluate(result, truth_sigma)
    return result


# -- CSV ---------------------------------------------------------------------

def write_result(
    scheme: PoolingScheme, result: DecodeResult, path: str | Path, truth: np.ndarray | None = None
) -> None:
    """One row per bulk item, then a summary row."""
    comp = np.repeat(np.arange(scheme.s - 1, scheme.L), scheme.sizes[scheme.s - 1 :])
    scores = result.scores if result.scores.ndim == 1 else result.scores.max(axis=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "compartment", "score", "decision", "truth"])
        for b in range(scheme.n):
            w.writerow([
                scheme.n_prime + b,
                int(comp[b]),
                repr(float(scores[b])),
                int(result.sigma_hat[b]),
                "" if truth is None else int(truth[b]),
            ])
        fp = "" if result.errors_by_compartment is None else result.false_positives
        fn = "" if result.errors_by_compartment is None else result.false_negatives
        exact = "" if result.exact_recovery is None else int(result.exact_recovery)
        w.writerow(["summary", f"exact_recovery={exact}", f"fp={fp}", f"fn={fn}",
                    f"wall_time={result.wall_time:.6f}"])
