"""Noiseless measurements: pool label histograms, local counts, and the
single-pool positional code."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .scheme import GroundTruth, PoolingScheme, compartment_sizes


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Everything the decoder observes.

    ``histograms[a, w]`` counts label-``w`` members of pool ``a``;
    ``local_histograms[b, w]`` counts label ``w`` in bulk compartment
    ``s - 1 + b`` (the local pool).  ``seed_labels`` are the known seed labels.
    """

    histograms: np.ndarray
    local_histograms: np.ndarray
    seed_labels: np.ndarray
    d: int

    @property
    def counts(self) -> np.ndarray:
        """Scalar label-1 pool counts (the ``d = 1`` measurement)."""
        return self.histograms[:, 1]

    @property
    def local_counts(self) -> np.ndarray:
        return self.local_histograms[:, 1]

    def binary(self, label: int) -> "MeasurementSet":
        """Two-label view in which every label other than ``0`` and ``label`` reads as ``0``."""
        if not 1 <= label <= self.d:
            raise ValueError(f"label {label} not in 1..{self.d}")

        def fold(h):
            out = np.empty((h.shape[0], 2), dtype=h.dtype)
            out[:, 1] = h[:, label]
            out[:, 0] = h.sum(axis=1) - h[:, label]
            return out

        seed = (self.seed_labels == label).astype(np.int8)
        return MeasurementSet(fold(self.histograms), fold(self.local_histograms), seed, 1)

    def compartment_counts(self, n: int, ell: int, s: int, label: int = 1) -> np.ndarray:
        """Label counts for all ``L`` compartments: seed from its labels, bulk from local pools."""
        sizes = compartment_sizes(n, ell, s)
        seed_comp = np.repeat(np.arange(s - 1), sizes[: s - 1])
        seed = np.bincount(seed_comp[self.seed_labels == label], minlength=s - 1)
        return np.concatenate([seed, self.local_histograms[:, label]]).astype(np.int64)


def measure(scheme: PoolingScheme, truth: GroundTruth) -> MeasurementSet:
    labels = truth.labels
    if labels.shape[0] != scheme.n_items:
        raise ValueError(
            f"truth covers {labels.shape[0]} items but the scheme has {scheme.n_items}"
        )
    sizes = scheme.sizes
    if truth.counts.shape[1] != scheme.L or not np.array_equal(truth.counts.sum(axis=0), sizes):
        raise ValueError("truth and scheme disagree on the compartment layout")
    d = truth.d
    s = scheme.s
    hist = np.zeros((scheme.m, d + 1), dtype=np.int64)
    for f in range(scheme.L):
        sl = scheme.pool_slice(f)
        for t, c in enumerate(scheme.window(f)):
            comp_labels = labels[scheme.starts[c] : scheme.starts[c + 1]].astype(np.int64)
            picked = comp_labels[scheme.members[sl, t]]  # (ppc, D)
            for w in range(1, d + 1):
                hist[sl, w] += (picked == w).sum(axis=1)
    hist[:, 0] = scheme.Gamma - hist[:, 1:].sum(axis=1)
    local = truth.counts[:, s - 1 :].T.copy()
    return MeasurementSet(
        histograms=hist,
        local_histograms=local,
        seed_labels=truth.sigma_prime.copy(),
        d=d,
    )


def pool_histograms(pools: Sequence[Sequence[int]], labels: Sequence[int], d: int) -> np.ndarray:
    """Histograms of arbitrary pools given as lists of 0-based item ids."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(pools), d + 1), dtype=np.int64)
    for a, pool in enumerate(pools):
        out[a] = np.bincount(labels[np.asarray(pool, dtype=np.int64)], minlength=d + 1)
    return out


# -- single pool with multiplicities ----------------------------------------

def _fits_int64(n: int, d: int) -> bool:
    return (d + 1) ** n <= 2**63


def single_pool_encode(labels: Sequence[int], d: int) -> int:
    """``sum_i (d + 1) ** i * labels[i]`` as an exact integer.

    One pool that contains item ``i`` with multiplicity ``(d + 1) ** i``
    returns this sum; radix ``d + 1`` makes the code bijective on ``{0..d}^n``.
    """
    values = [int(v) for v in labels]
    if values and not 0 <= min(values) <= max(values) <= d:
        raise ValueError(f"labels must lie in 0..{d}")
    if _fits_int64(len(values), d):
        return int(single_pool_encode_many(np.array([values], dtype=np.int64).reshape(1, -1), d)[0])
    code = 0
    for value in reversed(values):
        code = code * (d + 1) + value
    return code


def single_pool_decode(code: int, n: int, d: int) -> np.ndarray:
    """Inverse of ``single_pool_encode`` for a vector of length ``n``."""
    code = int(code)
    if code < 0:
        raise ValueError("code must be non-negative")
    radix = d + 1
    if code >= radix**n:
        raise ValueError(f"code needs more than {n} base-{radix} digits")
    if _fits_int64(n, d):
        return single_pool_decode_many(np.array([code], dtype=np.int64), n, d)[0]
    digits = [0] * n
    for i in range(n):
        code, digits[i] = divmod(code, radix)
    return np.array(digits, dtype=np.int64)


def single_pool_encode_many(labels: np.ndarray, d: int) -> np.ndarray:
    """Row-wise ``single_pool_encode`` for codes below ``2**63``."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[1]
    if not _fits_int64(n, d):
        raise ValueError(f"codes of {n} base-{d + 1} digits overflow 64 bits")
    powers = (d + 1) ** np.arange(n, dtype=np.int64)
    return labels @ powers


def single_pool_decode_many(codes: np.ndarray, n: int, d: int) -> np.ndarray:
    """Row-wise ``single_pool_decode`` for codes below ``2**63``."""
    if not _fits_int64(n, d):
        raise ValueError(f"codes of {n} base-{d + 1} digits overflow 64 bits")
    powers = (d + 1) ** np.arange(n, dtype=np.int64)
    return (np.asarray(codes, dtype=np.int64)[:, None] // powers) % (d + 1)


# -- CSV ---------------------------------------------------------------------

def write_measurements(scheme: PoolingScheme, ms: MeasurementSet, path: str | Path) -> None:
    """Pool rows, then local-pool rows, then one row per seed item.

    Seed rows carry a one-hot histogram of the item's known label so that a
    file alone is enough to run the decoder.
    """
    cols = [f"h{w}" for w in range(ms.d + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id", "compartment", *cols])
        for a in range(scheme.m):
            w.writerow(["pool", a, scheme.pool_compartment(a), *ms.histograms[a].tolist()])
        for b, c in enumerate(scheme.bulk_compartments):
            w.writerow(["local", b, c, *ms.local_histograms[b].tolist()])
        for x, lab in enumerate(ms.seed_labels):
            onehot = [0] * (ms.d + 1)
            onehot[int(lab)] = 1
            w.writerow(["seed", x, scheme.compartment_of(x), *onehot])


def read_measurements(path: str | Path) -> MeasurementSet:
    pools, local, seed = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 4
        for row in reader:
            kind, vals = row[0], [int(v) for v in row[3:]]
            if kind == "pool":
                pools.append(vals)
            elif kind == "local":
                local.append(vals)
            elif kind == "seed":
                seed.append(int(np.argmax(vals)))
            else:
                raise ValueError(f"unknown row kind {kind!r}")
    width = d + 1
    return MeasurementSet(
        histograms=np.array(pools, dtype=np.int64).reshape(-1, width),
        local_histograms=np.array(local, dtype=np.int64).reshape(-1, width),
        seed_labels=np.array(seed, dtype=np.int8),
        d=d,
    )
