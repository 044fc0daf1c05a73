"""Spatially coupled pooling design on a ring of compartments.

Items live in ``L = ell + s - 1`` compartments.  The first ``s - 1`` are the
seed, whose labels are known; the remaining ``ell`` form the bulk.  Pool
compartment ``f`` draws ``Gamma / s`` items from each of the item
compartments ``f - s + 1, ..., f`` (indices mod ``L``).

Indices are 0-based throughout: compartment ``c`` is ``V[c + 1]`` in the
1-based notation, seed items have ids ``[0, n')`` and bulk items
``[n', n' + n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .params import Params, ProblemSpec

TRUTH_STREAM = 2


def compartment_sizes(n: int, ell: int, s: int) -> np.ndarray:
    """Sizes of all ``ell + s - 1`` item compartments, seed first.

    Seed compartments hold ``ceil(n / ell)`` items; the first ``n mod ell``
    bulk compartments hold ``ceil(n / ell)`` and the rest ``floor(n / ell)``.
    """
    hi, lo = math.ceil(n / ell), n // ell
    bulk = np.full(ell, lo, dtype=np.int64)
    bulk[: n % ell] = hi
    return np.concatenate([np.full(s - 1, hi, dtype=np.int64), bulk])


def _index_dtype(max_size: int):
    return np.uint16 if max_size <= np.iinfo(np.uint16).max else np.uint32


@dataclass(frozen=True, eq=False)
class PoolingScheme:
    """Compartmented bipartite pooling graph.

    ``members[a, t]`` lists (sorted, 0-based) positions inside item
    compartment ``window(f)[t]`` chosen by pool ``a`` of pool compartment
    ``f``.  Offset ``t = s - 1`` is the pool's own compartment.  Local pools
    (one per bulk compartment, containing all of it) are implicit.
    """

    n: int
    ell: int
    s: int
    m: int
    Gamma: int
    rng_seed: int
    members: np.ndarray

    @cached_property
    def sizes(self) -> np.ndarray:
        return compartment_sizes(self.n, self.ell, self.s)

    @cached_property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def L(self) -> int:
        return self.ell + self.s - 1

    @property
    def n_prime(self) -> int:
        return (self.s - 1) * math.ceil(self.n / self.ell)

    @property
    def n_items(self) -> int:
        return self.n_prime + self.n

    @property
    def draws(self) -> int:
        return self.Gamma // self.s

    @property
    def pools_per_compartment(self) -> int:
        return self.m // self.L

    @property
    def bulk_compartments(self) -> range:
        return range(self.s - 1, self.L)

    def window(self, f: int) -> list[int]:
        """Item compartments feeding pool compartment ``f``, oldest first."""
        return [(f - self.s + 1 + t) % self.L for t in range(self.s)]

    def pool_slice(self, f: int) -> slice:
        ppc = self.pools_per_compartment
        return slice(f * ppc, (f + 1) * ppc)

    def pool_compartment(self, a: int) -> int:
        return a // self.pools_per_compartment

    def compartment_of(self, x: int) -> int:
        if not 0 <= x < self.n_items:
            raise IndexError(f"unknown item id {x}")
        return int(np.searchsorted(self.starts, x, side="right") - 1)

    def item_range(self, c: int) -> range:
        return range(int(self.starts[c]), int(self.starts[c + 1]))

    def pool_members(self, a: int) -> np.ndarray:
        f = self.pool_compartment(a)
        ids = [self.starts[c] + self.members[a, t].astype(np.int64) for t, c in enumerate(self.window(f))]
        return np.sort(np.concatenate(ids))

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Pool-major 0/1 incidence matrix of the regular pools (``m x n_items``)."""
        D = self.draws
        offsets = np.empty((self.m, self.s), dtype=np.int64)
        for f in range(self.L):
            offsets[self.pool_slice(f)] = self.starts[self.window(f)]
        cols = (self.members.astype(np.int64) + offsets[:, :, None]).reshape(self.m, -1)
        cols.sort(axis=1)
        indptr = np.arange(0, self.m * self.Gamma + 1, self.Gamma)
        data = np.ones(self.m * self.Gamma, dtype=np.int8)
        return sp.csr_matrix((data, cols.ravel(), indptr), shape=(self.m, self.n_items))

    @cached_property
    def item_index(self) -> sp.csc_matrix:
        """Item-major view of ``incidence``: column ``x`` lists the pools of ``x``."""
        return self.incidence.tocsc()

    def neighbourhood(self, x: int) -> np.ndarray:
        col = self.item_index
        return col.indices[col.indptr[x] : col.indptr[x + 1]]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Bulk labels ``sigma``, seed labels ``sigma_prime`` and per-compartment counts.

    ``counts[w, c]`` is the number of items of label ``w`` in compartment ``c``.
    """

    sigma: np.ndarray
    sigma_prime: np.ndarray
    counts: np.ndarray
    d: int

    @property
    def labels(self) -> np.ndarray:
        """Labels of all items indexed by global id (seed first)."""
        return np.concatenate([self.sigma_prime, self.sigma])

    def recount(self, n: int, ell: int, s: int) -> np.ndarray:
        return _count_labels(self.labels, compartment_sizes(n, ell, s), self.d)


def _count_labels(labels: np.ndarray, sizes: np.ndarray, d: int) -> np.ndarray:
    comp = np.repeat(np.arange(len(sizes)), sizes)
    out = np.zeros((d + 1, len(sizes)), dtype=np.int64)
    np.add.at(out, (labels.astype(np.int64), comp), 1)
    return out


def seed_counts(params: Params, k_i) -> list[int]:
    """Per-label seed counts ``ceil((s - 1) k_i / ell)``."""
    return [math.ceil((params.s - 1) * k / params.ell) for k in k_i]


def _shuffled_labels(rng: np.random.Generator, size: int, counts) -> np.ndarray:
    base = np.zeros(size, dtype=np.int8)
    pos = 0
    for label, c in enumerate(counts, start=1):
        base[pos : pos + c] = label
        pos += c
    if pos > size:
        raise ValueError(f"{pos} labelled items do not fit into {size} slots")
    return rng.permutation(base)


def sample_ground_truth(spec: ProblemSpec, params: Params, rng_seed: int) -> GroundTruth:
    """Uniform bulk labels with exactly ``k_i`` items of label ``i``, plus a seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), TRUTH_STREAM]))
    sigma = _shuffled_labels(rng, spec.n, spec.k_i)
    return attach_seed(sigma, spec, params, rng)


def attach_seed(sigma: np.ndarray, spec: ProblemSpec, params: Params, rng) -> GroundTruth:
    """Ground truth for ``params``' layout with bulk labels ``sigma`` and a fresh seed.

    ``rng`` is a Generator or an integer seed.  Used directly when one bulk
    vector is measured by several schemes.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(np.random.SeedSequence([int(rng), TRUTH_STREAM, 1]))
    sigma_prime = _shuffled_labels(rng, params.n_prime, seed_counts(params, spec.k_i))
    sigma = np.asarray(sigma, dtype=np.int8)
    counts = _count_labels(
        np.concatenate([sigma_prime, sigma]), compartment_sizes(spec.n, params.ell, params.s), spec.d
    )
    return GroundTruth(sigma=sigma, sigma_prime=sigma_prime, counts=counts, d=spec.d)


def _draw_key(rng_seed: int, pool: int, compartment: int) -> np.ndarray:
    return np.array([rng_seed, (pool << 32) | compartment], dtype=np.uint64)


def draw_members(rng_seed: int, pool: int, compartment: int, size: int, draws: int) -> np.ndarray:
    """Sorted ``draws`` positions out of ``size``, from the (seed, pool, compartment) stream."""
    gen = np.random.Generator(np.random.Philox(key=_draw_key(rng_seed, pool, compartment)))
    return np.sort(gen.choice(size, draws, replace=False, shuffle=False))


def build_scheme(params: Params, rng_seed: int) -> PoolingScheme:
    """Sample the pooling graph; fully determined by ``(params, rng_seed)``."""
    rng_seed = int(rng_seed) & 0xFFFFFFFFFFFFFFFF
    sizes = compartment_sizes(params.n, params.ell, params.s)
    L, s, D, ppc = params.L, params.s, params.draws, params.pools_per_compartment
    members = np.empty((params.m, s, D), dtype=_index_dtype(int(sizes.max())))
    for a in range(params.m):
        f = a // ppc
        for t in range(s):
            c = (f - s + 1 + t) % L
            members[a, t] = draw_members(rng_seed, a, c, int(sizes[c]), D)
    members.setflags(write=False)
    return PoolingScheme(
        n=params.n,
        ell=params.ell,
        s=params.s,
        m=params.m,
        Gamma=params.Gamma,
        rng_seed=rng_seed,
        members=members,
    )


def degree_profiles(scheme: PoolingScheme, c: int) -> np.ndarray:
    """``(|V[c]|, s)`` array of ``Delta_x[j]`` for every item of compartment ``c``."""
    s, L = scheme.s, scheme.L
    out = np.empty((int(scheme.sizes[c]), s), dtype=np.int64)
    for j in range(s):
        sl = scheme.pool_slice((c + j) % L)
        out[:, j] = np.bincount(scheme.members[sl, s - 1 - j].ravel(), minlength=out.shape[0])
    return out


def pools_of(scheme: PoolingScheme, x: int, j: int) -> np.ndarray:
    """Pools of compartment ``F[i + j]`` containing ``x`` (where ``x`` is in ``V[i]``)."""
    c = scheme.compartment_of(x)
    local = x - int(scheme.starts[c])
    sl = scheme.pool_slice((c + j) % scheme.L)
    hit = (scheme.members[sl, scheme.s - 1 - j] == local).any(axis=1)
    return np.flatnonzero(hit) + sl.start


def item_degree_profile(scheme: PoolingScheme, x: int) -> tuple[np.ndarray, int]:
    """``(Delta_x[0..s-1], Delta_x)`` for bulk item ``x``."""
    c = scheme.compartment_of(x)
    if c < scheme.s - 1:
        raise ValueError(f"item {x} is a seed item")
    profile = np.array([len(pools_of(scheme, x, j)) for j in range(scheme.s)], dtype=np.int64)
    return profile, int(profile.sum())


# -- edge-list persistence ---------------------------------------------------

_HEADER_KEYS = ("n", "n_prime", "ell", "s", "m", "Gamma", "rng_seed")


def write_edge_list(scheme: PoolingScheme, path: str | Path) -> None:
    """Header line of ``key=value`` pairs, then one line of member ids per pool."""
    with open(path, "w") as fh:
        fh.write(" ".join(f"{k}={getattr(scheme, k)}" for k in _HEADER_KEYS) + "\n")
        for a in range(scheme.m):
            fh.write(" ".join(map(str, scheme.pool_members(a))) + "\n")


def read_edge_list(path: str | Path) -> PoolingScheme:
    with open(path) as fh:
        header = dict(tok.split("=", 1) for tok in fh.readline().split())
        missing = set(_HEADER_KEYS) - set(header)
        if missing:
            raise ValueError(f"edge list header lacks {sorted(missing)}")
        n, ell, s, m, gamma = (int(header[k]) for k in ("n", "ell", "s", "m", "Gamma"))
        rows = [np.array(line.split(), dtype=np.int64) for line in fh if line.strip()]
    if len(rows) != m:
        raise ValueError(f"expected {m} pools, found {len(rows)}")
    sizes = compartment_sizes(n, ell, s)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    if int(header["n_prime"]) != starts[s - 1]:
        raise ValueError("n_prime does not match the compartment layout")
    L, D = ell + s - 1, gamma // s
    ppc = m // L
    members = np.empty((m, s, D), dtype=_index_dtype(int(sizes.max())))
    for a, ids in enumerate(rows):
        f = a // ppc
        comp = np.searchsorted(starts, ids, side="right") - 1
        for t in range(s):
            c = (f - s + 1 + t) % L
            local = ids[comp == c] - starts[c]
            if len(local) != D:
                raise ValueError(f"pool {a} has {len(local)} members in compartment {c}, expected {D}")
            members[a, t] = np.sort(local)
    members.setflags(write=False)
    return PoolingScheme(n=n, ell=ell, s=s, m=m, Gamma=gamma, rng_seed=int(header["rng_seed"]), members=members)
