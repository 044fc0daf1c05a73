"""Independent reference machinery for validating the decoder.

* closed-form conditional moments of the unexplained sums,
* a resampler that redraws the pools around one item,
* exhaustive decoding of tiny instances,
* tail bounds used to size test tolerances.

Nothing here is imported by the decoder itself.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .measure import MeasurementSet
from .params import Params
from .scheme import GroundTruth, PoolingScheme, pools_of

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True)
class HypergeometricSpec:
    """Number of successes when drawing ``K`` of ``N`` items, ``M`` of them successes."""

    N: int
    M: int
    K: int

    def __post_init__(self):
        if not (0 <= self.M <= self.N and 0 <= self.K <= self.N):
            raise ValueError(f"invalid hypergeometric parameters {self}")

    @property
    def support(self) -> range:
        return range(max(0, self.K - (self.N - self.M)), min(self.K, self.M) + 1)

    def pmf(self, j: int) -> Fraction:
        if j not in self.support:
            return Fraction(0)
        return Fraction(
            math.comb(self.M, j) * math.comb(self.N - self.M, self.K - j), math.comb(self.N, self.K)
        )

    @property
    def mean(self) -> Fraction:
        return Fraction(self.K * self.M, self.N) if self.N else Fraction(0)

    @property
    def var(self) -> Fraction:
        N, M, K = self.N, self.M, self.K
        if N <= 1:
            return Fraction(0)
        p = Fraction(M, N)
        return K * p * (1 - p) * (1 - Fraction(K - 1, N - 1))


# -- conditional moments -------------------------------------------------------

def _locate(scheme: PoolingScheme, x: int) -> int:
    c = scheme.compartment_of(x)
    if c < scheme.s - 1:
        raise ValueError(f"item {x} is a seed item")
    return c


def hypergeometric_triples(
    scheme: PoolingScheme, counts_L: Sequence[int], c: int, sigma_x: int, j: int
) -> list[HypergeometricSpec]:
    """Draw distributions of the other items' mass, for ``r = 0..j``."""
    out = []
    for r in range(j + 1):
        cr = (c + r) % scheme.L
        if r == 0:
            spec = HypergeometricSpec(int(scheme.sizes[cr]) - 1, int(counts_L[cr]) - sigma_x, scheme.draws - 1)
        else:
            spec = HypergeometricSpec(int(scheme.sizes[cr]), int(counts_L[cr]), scheme.draws)
        if spec.N <= 1:
            raise ValueError(f"population of compartment {cr} is too small")
        out.append(spec)
    return out


def conditional_mean_var_U(
    scheme: PoolingScheme, truth: GroundTruth, x: int, j: int, label: int = 1
) -> tuple[Fraction, Fraction]:
    """Mean and variance of the ideal unexplained sum given the pools of ``x`` and all counts."""
    c = _locate(scheme, x)
    sigma_x = int(truth.labels[x] == label)
    deg = len(pools_of(scheme, x, j))
    triples = hypergeometric_triples(scheme, truth.counts[label], c, sigma_x, j)
    mean = deg * sigma_x + deg * sum((h.mean for h in triples), Fraction(0))
    var = deg * sum((h.var for h in triples), Fraction(0))
    return mean, var


def conditional_mean_N_terms(params: Params, delta_profile: Sequence[int], sigma_x: int) -> list[float]:
    """Per-offset conditional means of the ideal normalised score."""
    root = math.sqrt(params.k_scale / params.m)
    per_window = params.Delta / params.s
    return [deg * sigma_x / (per_window * (j + 1) * root) for j, deg in enumerate(delta_profile)]


def conditional_mean_N(params: Params, delta_profile: Sequence[int], sigma_x: int) -> float:
    return math.fsum(conditional_mean_N_terms(params, delta_profile, sigma_x))


def expected_defective_score(params: Params) -> float:
    """``sqrt(m / k) * H_s``: the score of a label-1 item averaged over degrees."""
    return math.sqrt(params.m / params.k_scale) * sum(1.0 / j for j in range(1, params.s + 1))


# -- ideal scores under full knowledge -----------------------------------------

def ideal_unexplained(scheme: PoolingScheme, truth: GroundTruth, x: int, j: int, label: int = 1) -> int:
    """Label-``label`` mass of compartments ``c(x) .. c(x) + j`` inside the pools of ``x`` in ``F[c(x) + j]``."""
    c = _locate(scheme, x)
    window = [(c + r) % scheme.L for r in range(j + 1)]
    labels = truth.labels
    total = 0
    for a in pools_of(scheme, x, j):
        members = scheme.pool_members(a)
        comps = np.searchsorted(scheme.starts, members, side="right") - 1
        total += int((labels[members[np.isin(comps, window)]] == label).sum())
    return total


def ideal_score_units(scheme: PoolingScheme, truth: GroundTruth, x: int, label: int = 1) -> Fraction:
    """``sum_j (U^j - E[U^j | E_x] + Delta_x[j] sigma_x) / (j + 1)`` exactly.

    Dividing by ``params.score_scale`` gives the ideal score ``N_x``.
    """
    sigma_x = int(truth.labels[x] == label)
    total = Fraction(0)
    for j in range(scheme.s):
        mean, _ = conditional_mean_var_U(scheme, truth, x, j, label)
        deg = len(pools_of(scheme, x, j))
        total += (ideal_unexplained(scheme, truth, x, j, label) - mean + deg * sigma_x) / Fraction(j + 1)
    return total


def residual_gap_units(scheme: PoolingScheme, x: int, sigma_x: int) -> Fraction:
    """Closed form of ``(N_x - algorithmic score) * score_scale`` under a perfect history."""
    c = _locate(scheme, x)
    size = int(scheme.sizes[c])
    return sum(
        (Fraction(len(pools_of(scheme, x, j)) * (scheme.draws - 1) * sigma_x, (size - 1) * (j + 1))
         for j in range(scheme.s)),
        Fraction(0),
    )


# -- resampling ----------------------------------------------------------------

def _selection_counts(rng: np.random.Generator, size: int, marked: int, draws: int, reps: int) -> np.ndarray:
    """Marked items in a uniform ``draws``-subset of ``size`` items, ``reps`` times.

    Selection sampling over a population listed marked-first: item ``t`` is
    taken with probability ``(draws - taken) / (size - t)``.  Only the first
    ``marked`` steps matter for the count.
    """
    taken = np.zeros(reps, dtype=np.int64)
    for t in range(marked):
        p = (draws - taken) / (size - t)
        taken += rng.random(reps) < p
    return taken


def resample_unexplained(
    scheme: PoolingScheme,
    truth: GroundTruth,
    x: int,
    j: int,
    n_resamples: int,
    rng: np.random.Generator,
    method: str = "urn",
    label: int = 1,
) -> np.ndarray:
    """Ideal unexplained sums with the pools of ``x`` redrawn around it.

    The number of pools of ``x`` in ``F[c + j]``, the label of ``x`` and all
    compartment counts stay fixed; each such pool redraws its other members
    in ``V[c] .. V[c + j]`` uniformly.  ``"explicit"`` samples member sets and
    recounts; ``"urn"`` does the equivalent selection sampling on counts only.
    """
    c = _locate(scheme, x)
    labels = truth.labels
    sigma_x = int(labels[x] == label)
    deg = len(pools_of(scheme, x, j))
    out = np.full(n_resamples, deg * sigma_x, dtype=np.int64)
    D = scheme.draws
    for r in range(j + 1):
        cr = (c + r) % scheme.L
        lo, hi = int(scheme.starts[cr]), int(scheme.starts[cr + 1])
        comp_marked = labels[lo:hi] == label
        if r == 0:
            keep = np.ones(hi - lo, dtype=bool)
            keep[x - lo] = False
            pop, draws = comp_marked[keep], D - 1
        else:
            pop, draws = comp_marked, D
        if method == "urn":
            marked = int(pop.sum())
            for _ in range(deg):
                out += _selection_counts(rng, len(pop), marked, draws, n_resamples)
        elif method == "explicit":
            for i in range(n_resamples):
                for _ in range(deg):
                    out[i] += int(pop[rng.choice(len(pop), draws, replace=False)].sum())
        else:
            raise ValueError(f"unknown resampling method {method!r}")
    return out


# -- exhaustive decoding -------------------------------------------------------

def _check_size(count: int) -> None:
    if count > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{count} candidates exceed the exhaustive-search limit {BRUTE_FORCE_LIMIT}")


def _observation_matrix(scheme: PoolingScheme) -> tuple[np.ndarray, np.ndarray]:
    """Bulk columns of the pools plus one row per local pool, and the seed block."""
    A = scheme.incidence.toarray().astype(np.int64)
    bulk = A[:, scheme.n_prime :]
    local = np.zeros((scheme.ell, scheme.n), dtype=np.int64)
    for b, c in enumerate(scheme.bulk_compartments):
        local[b, scheme.starts[c] - scheme.n_prime : scheme.starts[c + 1] - scheme.n_prime] = 1
    return np.vstack([bulk, local]), A[:, : scheme.n_prime]


def brute_force_decode(scheme: PoolingScheme, measurements: MeasurementSet, k: int, label: int = 1) -> list[np.ndarray]:
    """All bulk 0/1 vectors with ``k`` ones that reproduce the label-``label`` counts.

    Candidates are enumerated as sorted index tuples in lexicographic order.
    """
    n = scheme.n
    _check_size(math.comb(n, k))
    obs, seed_block = _observation_matrix(scheme)
    seed = (measurements.seed_labels == label).astype(np.int64)
    target = np.concatenate([
        measurements.histograms[:, label] - seed_block @ seed,
        measurements.local_histograms[:, label],
    ])
    found = []
    batch = 65536
    combos = itertools.combinations(range(n), k)
    while True:
        chunk = list(itertools.islice(combos, batch))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.int64).reshape(len(chunk), k)
        sums = obs[:, idx].sum(axis=2) if k else np.zeros((obs.shape[0], len(chunk)), dtype=np.int64)
        ok = np.flatnonzero((sums == target[:, None]).all(axis=0))
        for i in ok:
            v = np.zeros(n, dtype=np.int8)
            v[idx[i]] = 1
            found.append(v)
    return found


def _labelled_vectors(n: int, counts: Sequence[int]):
    """Every vector over ``{0..d}^n`` with exactly ``counts[i - 1]`` entries equal to ``i``."""
    def rec(free: tuple[int, ...], label: int):
        if label > len(counts):
            yield {}
            return
        for pos in itertools.combinations(free, counts[label - 1]):
            rest = tuple(p for p in free if p not in pos)
            for tail in rec(rest, label + 1):
                yield {label: pos, **tail}

    for assignment in rec(tuple(range(n)), 1):
        v = np.zeros(n, dtype=np.int8)
        for label, pos in assignment.items():
            v[list(pos)] = label
        yield v


def brute_force_multilabel(
    schemes: Sequence[PoolingScheme], measurements: Sequence[MeasurementSet], counts: Sequence[int]
) -> list[np.ndarray]:
    """All bulk label vectors with the given per-label counts matching every histogram."""
    n = schemes[0].n
    total, remaining = 1, n
    for k in counts:
        total *= math.comb(remaining, k)
        remaining -= k
    _check_size(total)
    prepared = []
    for scheme, ms in zip(schemes, measurements):
        obs, seed_block = _observation_matrix(scheme)
        targets = []
        for w in range(1, ms.d + 1):
            seed = (ms.seed_labels == w).astype(np.int64)
            targets.append(np.concatenate([ms.histograms[:, w] - seed_block @ seed, ms.local_histograms[:, w]]))
        prepared.append((obs, targets))
    found = []
    for v in _labelled_vectors(n, counts):
        if all(
            np.array_equal(obs @ (v == w).astype(np.int64), targets[w - 1])
            for obs, targets in prepared
            for w in range(1, len(targets) + 1)
        ):
            found.append(v)
    return found


# -- tail bounds -----------------------------------------------------------------

def chernoff_binomial(mean: float, eps: float, tail: str = "upper") -> float:
    """Bound on ``P(X >= (1 + eps) E X)`` (upper) or ``P(X <= (1 - eps) E X)`` (lower), ``X`` binomial."""
    if mean < 0 or eps < 0:
        raise ValueError("mean and eps must be non-negative")
    if tail == "upper":
        return math.exp(-eps**2 / (2 + 2 * eps / 3) * mean)
    if tail == "lower":
        return math.exp(-eps**2 / 2 * mean)
    raise ValueError(f"unknown tail {tail!r}")


def chernoff_hypergeometric(N: int, M: int, K: int, t: float, tail: str = "upper") -> float:
    """Bound on ``P(X - E X >= t)`` or ``P(X - E X <= -t)`` for ``X ~ Hyp(N, M, K)``."""
    HypergeometricSpec(N, M, K)
    if t < 0:
        raise ValueError("t must be non-negative")
    mu = K * M / N
    if tail == "upper":
        return math.exp(-(t**2) / (2 * (mu + t / 3)))
    if tail == "lower":
        if mu == 0:
            raise ValueError("lower tail needs a positive mean")
        return math.exp(-(t**2) / (2 * mu))
    raise ValueError(f"unknown tail {tail!r}")


def bernstein(n: int, eps: float, variance: float, z: float) -> float:
    """Bound on ``P(sum X_i >= eps n)`` for centred ``|X_i| <= z`` with mean variance ``variance``."""
    if n < 1 or eps <= 0 or z <= 0 or variance < 0:
        raise ValueError("need n >= 1, eps > 0, z > 0, variance >= 0")
    return math.exp(-n * eps**2 / (2 * variance + 2 * z * eps / 3))


_BOUNDS = {
    "chernoff-bin": chernoff_binomial,
    "chernoff-hyp": chernoff_hypergeometric,
    "bernstein": bernstein,
}


def bound(kind: str, **kwargs) -> float:
    if kind not in _BOUNDS:
        raise ValueError(f"unknown bound {kind!r}; choose from {sorted(_BOUNDS)}")
    return _BOUNDS[kind](**kwargs)
