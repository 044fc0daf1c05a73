from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from scpool.params import ProblemSpec, validate_overrides
from scpool.scheme import (
    build_scheme,
    compartment_sizes,
    degree_profiles,
    item_degree_profile,
    read_edge_list,
    sample_ground_truth,
    write_edge_list,
)

from .strategies import small_instances


def small(n=2000, k=100, ell=10, s=3, gamma=30, m=120):
    spec = ProblemSpec(n=n, theta=(0.5,), explicit_k=(k,))
    return spec, validate_overrides(spec, {"ell": ell, "s": s, "Gamma": gamma, "m": m})


class TestLayout:
    def test_sizes_follow_remainder_rule(self):
        sizes = compartment_sizes(103, 10, 3)
        assert sizes.tolist() == [11, 11, 11, 11, 11, 10, 10, 10, 10, 10, 10, 10]
        assert sizes[2:].sum() == 103

    def test_exact_division(self):
        assert compartment_sizes(100, 10, 4).tolist() == [10] * 13


def check_structure(params, scheme):
    L, s, D = params.L, params.s, params.draws
    assert scheme.members.shape == (params.m, s, D)
    inc = scheme.incidence
    # every pool has Gamma distinct members
    assert np.all(np.diff(inc.indptr) == params.Gamma)
    for a in range(params.m):
        row = inc.indices[inc.indptr[a] : inc.indptr[a + 1]]
        assert len(np.unique(row)) == params.Gamma
    # pool compartments are equal-sized and contiguous
    assert params.m // L * L == params.m
    comps = np.searchsorted(scheme.starts, inc.indices, side="right") - 1
    per_pool = comps.reshape(params.m, params.Gamma)
    for f in range(L):
        window = {(f - s + 1 + t) % L for t in range(s)}
        block = per_pool[scheme.pool_slice(f)]
        assert block.shape[0] == params.m // L
        # ring closure: exactly the window, Gamma / s from each compartment
        for row in block:
            vals, counts = np.unique(row, return_counts=True)
            assert set(vals.tolist()) == window
            assert np.all(counts == D)
    # positions stay inside their compartment
    for t in range(s):
        for f in range(L):
            c = (f - s + 1 + t) % L
            assert scheme.members[scheme.pool_slice(f), t].max() < scheme.sizes[c]


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_instances(), st.integers(0, 2**64 - 1))
def test_structural_invariants(instance, seed):
    _, params = instance
    check_structure(params, build_scheme(params, seed))


class TestBuild:
    def test_deterministic(self):
        _, p = small()
        a, b = build_scheme(p, 99), build_scheme(p, 99)
        assert np.array_equal(a.members, b.members)
        assert not np.array_equal(a.members, build_scheme(p, 100).members)

    def test_no_neighbours_outside_window(self):
        _, p = small()
        sch = build_scheme(p, 3)
        for x in (sch.n_prime, sch.n_prime + 777, sch.n_items - 1):
            c = sch.compartment_of(x)
            pools = sch.neighbourhood(x)
            allowed = {(c + j) % sch.L for j in range(sch.s)}
            assert {sch.pool_compartment(int(a)) for a in pools} <= allowed

    def test_profile_sums_to_degree(self):
        _, p = small()
        sch = build_scheme(p, 4)
        for x in range(sch.n_prime, sch.n_items, 97):
            profile, total = item_degree_profile(sch, x)
            assert total == profile.sum() == len(sch.neighbourhood(x))

    def test_profile_matches_bulk_computation(self):
        _, p = small()
        sch = build_scheme(p, 5)
        c = sch.s + 1
        bulk = degree_profiles(sch, c)
        for local in (0, 17, 150):
            x = int(sch.starts[c]) + local
            assert item_degree_profile(sch, x)[0].tolist() == bulk[local].tolist()

    def test_seed_item_rejected(self):
        _, p = small()
        with pytest.raises(ValueError):
            item_degree_profile(build_scheme(p, 1), 0)
        with pytest.raises(IndexError):
            build_scheme(p, 1).compartment_of(10**9)

    def test_mean_degree_matches_identity(self):
        # with n divisible by ell every bulk compartment has n / ell items and
        # receives exactly (m / L) * Gamma / s edges per window slot
        _, p = small(n=2000, ell=10, gamma=30, m=1200)
        sch = build_scheme(p, 11)
        deg = np.concatenate([degree_profiles(sch, c).sum(axis=1) for c in sch.bulk_compartments])
        assert deg.mean() == pytest.approx(p.Gamma * p.m / (p.L * (p.n // p.ell)), rel=1e-12)

    def test_mean_degree_uneven_sizes(self):
        # n not divisible by ell: the identity holds within 3 standard errors
        _, p = small(n=2005, ell=10, gamma=30, m=1200)
        sch = build_scheme(p, 12)
        deg = np.concatenate([degree_profiles(sch, c).sum(axis=1) for c in sch.bulk_compartments])
        prob = p.draws / p.bulk_floor
        se = math.sqrt(p.s * (p.m // p.L) * prob * (1 - prob) / len(deg))
        assert abs(deg.mean() - p.Delta) < 3 * se

    def test_window_degree_is_binomial_mean(self):
        # Delta_x[j] ~ Bin(m / L, (Gamma / s) / |V|) across builds
        _, p = small(n=500, k=20, ell=10, s=3, gamma=15, m=240)
        x = 0
        samples = []
        for seed in range(400):
            sch = build_scheme(p, seed)
            x = sch.n_prime + 3
            samples.append(item_degree_profile(sch, x)[0])
        samples = np.array(samples)
        trials, prob = p.m // p.L, p.draws / p.bulk_floor
        se = math.sqrt(trials * prob * (1 - prob) / len(samples))
        for j in range(p.s):
            assert abs(samples[:, j].mean() - p.Delta / p.s) < 3 * se

    def test_degree_concentration(self):
        _, p = small(n=20_000, k=500, ell=10, s=3, gamma=1500, m=2400)
        assert p.Delta / p.s >= 50
        sch = build_scheme(p, 21)
        prof = np.concatenate([degree_profiles(sch, c) for c in sch.bulk_compartments])
        mu = p.Delta / p.s
        assert np.mean(np.abs(prof - mu) > 5 * math.sqrt(mu)) < 1e-3

    def test_edge_list_round_trip(self, tmp_path):
        _, p = small(n=300, k=10, ell=6, s=3, gamma=9, m=48)
        sch = build_scheme(p, 8)
        path = tmp_path / "scheme.txt"
        write_edge_list(sch, path)
        back = read_edge_list(path)
        assert np.array_equal(back.members, sch.members)
        assert (back.n, back.ell, back.s, back.m, back.Gamma, back.rng_seed) == (
            sch.n, sch.ell, sch.s, sch.m, sch.Gamma, sch.rng_seed,
        )
        first = path.read_text().splitlines()[1].split()
        assert [int(v) for v in first] == sch.pool_members(0).tolist()


class TestGroundTruth:
    def test_exact_counts_and_recount(self):
        spec, p = small()
        for seed in range(20):
            tr = sample_ground_truth(spec, p, seed)
            assert int((tr.sigma == 1).sum()) == 100
            assert int((tr.sigma_prime == 1).sum()) == p.k_prime
            assert np.array_equal(tr.recount(p.n, p.ell, p.s), tr.counts)

    def test_all_zero(self):
        spec = ProblemSpec(n=200, theta=(0.5,), explicit_k=(0,))
        p = validate_overrides(spec, {"ell": 5, "s": 2, "Gamma": 4, "m": 30})
        tr = sample_ground_truth(spec, p, 0)
        assert not tr.sigma.any() and not tr.counts[1:].any()

    def test_multilabel_counts(self):
        spec = ProblemSpec(n=600, theta=(0.5, 0.4), explicit_k=(20, 7))
        p = validate_overrides(spec, {"ell": 6, "s": 2, "Gamma": 10, "m": 70})
        tr = sample_ground_truth(spec, p, 5)
        assert [(tr.sigma == w).sum() for w in (1, 2)] == [20, 7]
        assert np.array_equal(tr.counts.sum(axis=0), compartment_sizes(600, 6, 2))

    def test_compartment_count_mean(self):
        # k[c] ~ Hyp(n, k, |V[c]|) for bulk compartments
        spec, p = small(n=2000, k=100, ell=10, s=3)
        R = 10_000
        counts = np.array([sample_ground_truth(spec, p, seed).counts[1] for seed in range(R)])
        n, k = p.n, 100
        for c in range(p.s - 1, p.L):
            V = int(compartment_sizes(n, p.ell, p.s)[c])
            mean = V * k / n
            var = V * (k / n) * (1 - k / n) * (n - V) / (n - 1)
            assert abs(counts[:, c].mean() - mean) < 3 * math.sqrt(var / R)

    def test_count_concentration(self):
        spec = ProblemSpec(n=100_000, theta=(0.5,), explicit_k=(5000,))
        p = validate_overrides(spec, {"ell": 10, "s": 3, "Gamma": 30, "m": 120})
        assert p.k / p.ell >= 50
        mu = p.k / p.ell
        counts = np.array([sample_ground_truth(spec, p, seed).counts[1] for seed in range(200)])
        assert np.mean(np.abs(counts - mu) > 5 * math.sqrt(mu)) < 1e-2
