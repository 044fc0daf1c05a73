from __future__ import annotations

import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest

from scpool.decoder import (
    compute_centering,
    compute_score,
    compute_unexplained,
    decode,
    decode_multilabel,
    score_units,
    write_result,
)
from scpool.measure import measure
from scpool.oracle import ideal_score_units, ideal_unexplained, residual_gap_units
from scpool.params import Params, ProblemSpec, derive_parameters, group_spec, label_groups, validate_overrides
from scpool.scheme import (
    GroundTruth,
    attach_seed,
    build_scheme,
    compartment_sizes,
    item_degree_profile,
    sample_ground_truth,
)


def setup(n=3000, k=60, ell=10, s=3, gamma=45, m=360, seed=0):
    spec = ProblemSpec(n=n, theta=(0.5,), explicit_k=(k,))
    p = validate_overrides(spec, {"ell": ell, "s": s, "Gamma": gamma, "m": m})
    sch = build_scheme(p, seed)
    tr = sample_ground_truth(spec, p, seed + 1)
    return spec, p, sch, tr, measure(sch, tr)


def history(tr):
    return (tr.labels == 1).astype(np.int64)


def truth_from(sigma, sigma_prime, n, ell, s):
    labels = np.concatenate([sigma_prime, sigma])
    comp = np.repeat(np.arange(ell + s - 1), compartment_sizes(n, ell, s))
    counts = np.zeros((2, ell + s - 1), dtype=np.int64)
    np.add.at(counts, (labels, comp), 1)
    return GroundTruth(sigma=sigma.astype(np.int8), sigma_prime=sigma_prime.astype(np.int8), counts=counts, d=1)


class TestUnexplained:
    def test_all_zero(self):
        spec = ProblemSpec(n=600, theta=(0.5,), explicit_k=(0,))
        p = validate_overrides(spec, {"ell": 6, "s": 3, "Gamma": 15, "m": 80})
        sch = build_scheme(p, 2)
        tr = sample_ground_truth(spec, p, 2)
        ms = measure(sch, tr)
        zero = np.zeros(sch.n_items, dtype=np.int64)
        for x in range(sch.n_prime, sch.n_items, 37):
            for j in range(p.s):
                assert compute_unexplained(sch, ms, zero, x, j) == 0
        res = decode(sch, ms, p, truth=tr)
        assert not res.sigma_hat.any() and res.exact_recovery
        assert np.all(res.scores == 0.0)

    def test_perfect_history_equals_recount(self):
        _, p, sch, tr, ms = setup()
        rng = np.random.default_rng(0)
        for x in rng.choice(np.arange(sch.n_prime, sch.n_items), 25, replace=False):
            for j in range(p.s):
                assert compute_unexplained(sch, ms, history(tr), int(x), j) == ideal_unexplained(sch, tr, int(x), j)

    def test_isolated_defective(self):
        spec = ProblemSpec(n=3000, theta=(0.5,), explicit_k=(1,))
        p = validate_overrides(spec, {"ell": 10, "s": 3, "Gamma": 45, "m": 360})
        sch = build_scheme(p, 4)
        x_local = 5  # first bulk compartment: its window never wraps into the seed
        sigma = np.zeros(p.n, dtype=np.int8)
        sigma[x_local] = 1
        tr = truth_from(sigma, np.zeros(sch.n_prime, dtype=np.int8), p.n, p.ell, p.s)
        ms = measure(sch, tr)
        x = sch.n_prime + x_local
        profile, _ = item_degree_profile(sch, x)
        for j in range(p.s):
            assert compute_unexplained(sch, ms, history(tr), x, j) == profile[j]


class TestCentering:
    def test_zero_counts(self):
        _, p, sch, _, _ = setup()
        zeros = np.zeros(sch.L, dtype=np.int64)
        assert compute_centering(sch, zeros, sch.n_prime + 3, 2) == 0

    def test_j0_closed_form(self):
        _, p, sch, tr, _ = setup()
        x = sch.n_prime + 10
        c = sch.compartment_of(x)
        K, V = int(tr.counts[1, c]), int(sch.sizes[c])
        D0 = item_degree_profile(sch, x)[0][0]
        assert compute_centering(sch, tr.counts[1], x, 0) == Fraction(int(D0) * (p.draws - 1) * K, V - 1)

    def test_general_j_reimplementation(self):
        _, p, sch, tr, _ = setup()
        for x in (sch.n_prime + 1, sch.n_items - 2):
            c = sch.compartment_of(x)
            prof = item_degree_profile(sch, x)[0]
            for j in range(p.s):
                ref = Fraction(0)
                for r in range(j + 1):
                    cc = (c + r) % sch.L
                    size = int(sch.sizes[cc]) - (1 if r == 0 else 0)
                    draws = p.Gamma // p.s - (1 if r == 0 else 0)
                    ref += Fraction(draws * int(tr.counts[1, cc]), size)
                assert compute_centering(sch, tr.counts[1], x, j) == int(prof[j]) * ref

    def test_linear_in_degree(self):
        # within a compartment the centering per unit degree is the same for every item
        _, p, sch, tr, _ = setup()
        c = sch.s
        ratios = set()
        for x in range(int(sch.starts[c]), int(sch.starts[c]) + 40):
            deg = item_degree_profile(sch, x)[0][1]
            if deg:
                ratios.add(compute_centering(sch, tr.counts[1], x, 1) / int(deg))
        assert len(ratios) == 1


class TestDecode:
    def test_vectorised_scores_match_reference(self):
        _, p, sch, tr, ms = setup()
        res = decode(sch, ms, p, history=history(tr))
        rng = np.random.default_rng(3)
        for x in rng.choice(np.arange(sch.n_prime, sch.n_items), 30, replace=False):
            ref = compute_score(sch, ms, history(tr), p, int(x))
            assert res.scores[x - sch.n_prime] == pytest.approx(ref, rel=1e-12, abs=1e-9)

    def test_without_history_uses_own_estimate(self):
        _, p, sch, tr, ms = setup(m=720)
        res = decode(sch, ms, p)
        own = np.concatenate([(tr.sigma_prime == 1).astype(np.int64), res.sigma_hat.astype(np.int64)])
        x = sch.n_items - 5
        assert res.scores[x - sch.n_prime] == pytest.approx(compute_score(sch, ms, own, p, x), rel=1e-12, abs=1e-9)

    def test_deterministic(self):
        _, p, sch, tr, ms = setup()
        a, b = decode(sch, ms, p), decode(sch, ms, p)
        assert np.array_equal(a.sigma_hat, b.sigma_hat)
        assert np.array_equal(a.scores, b.scores)

    def test_threshold_is_strict(self):
        _, p, sch, tr, ms = setup()
        res = decode(sch, ms, p, history=history(tr))
        i = int(np.argmax(res.scores))
        top = float(res.scores[i])

        class Pinned(Params):
            @property
            def T_alpha(self):
                return top

        pinned = Pinned(**dataclasses.asdict(p))
        out = decode(sch, ms, pinned, history=history(tr))
        assert out.scores[i] == top
        assert out.sigma_hat[i] == 0

    def test_errors_by_compartment(self):
        _, p, sch, tr, ms = setup(m=60)
        res = decode(sch, ms, p, truth=tr)
        wrong = res.sigma_hat != tr.sigma
        assert res.false_positives + res.false_negatives == int(wrong.sum())
        assert res.errors_by_compartment.shape == (p.ell, 2)
        assert res.exact_recovery == (not wrong.any())

    def test_rejects_multilabel_measurements(self):
        spec = ProblemSpec(n=1200, theta=(0.5, 0.5), explicit_k=(10, 10))
        p = validate_overrides(group_spec(spec, (1, 2)), {"ell": 8, "s": 3, "Gamma": 30, "m": 100})
        sch = build_scheme(p, 0)
        ms = measure(sch, sample_ground_truth(spec, p, 0))
        with pytest.raises(ValueError):
            decode(sch, ms, p)

    def test_result_csv(self, tmp_path):
        _, p, sch, tr, ms = setup()
        res = decode(sch, ms, p, truth=tr)
        write_result(sch, res, tmp_path / "r.csv", truth=tr.sigma)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "id,compartment,score,decision,truth"
        assert len(lines) == p.n + 2
        assert lines[1].startswith(f"{sch.n_prime},{p.s - 1},")
        assert lines[-1].startswith("summary,exact_recovery=")


class TestResidualGap:
    def test_closed_form(self):
        _, p, sch, tr, ms = setup()
        rng = np.random.default_rng(5)
        ones = np.flatnonzero(tr.sigma == 1)[:10] + sch.n_prime
        items = np.concatenate([ones, rng.choice(np.arange(sch.n_prime, sch.n_items), 10, replace=False)])
        for x in items:
            x = int(x)
            gap = ideal_score_units(sch, tr, x) - score_units(sch, ms, history(tr), x)
            assert gap == residual_gap_units(sch, x, int(tr.labels[x]))

    @pytest.mark.xfail(strict=True, reason="the gap is about q * H_s * sqrt(m/k), comparable to the threshold itself")
    def test_gap_below_tenth_of_threshold_at_derived_parameters(self):
        spec = ProblemSpec(n=100_000, theta=(0.3,), delta=0.2)
        p = derive_parameters(spec)
        sch = build_scheme(p, 0)
        tr = sample_ground_truth(spec, p, 0)
        x = int(np.flatnonzero(tr.sigma == 1)[0]) + sch.n_prime
        gap = float(residual_gap_units(sch, x, 1)) / p.score_scale
        assert gap < p.T_alpha / 10


def multilabel_instance(n, theta, k, manual, seed):
    spec = ProblemSpec(n=n, theta=theta, explicit_k=k)
    groups = label_groups(spec)
    params = [validate_overrides(group_spec(spec, g), manual) for g in groups]
    first = sample_ground_truth(spec, params[0], seed)
    schemes, ms = [], []
    for g, p in enumerate(params):
        tr = first if g == 0 else attach_seed(first.sigma, spec, p, seed + g)
        sch = build_scheme(p, seed * 10 + g)
        schemes.append(sch)
        ms.append(measure(sch, tr))
    return spec, params, schemes, ms, first


class TestMultilabel:
    manual = {"ell": 8, "s": 3, "Gamma": 60, "m": 500}

    def test_zero_second_label_matches_single_label(self):
        spec, params, schemes, ms, tr = multilabel_instance(2000, (0.5, 0.5), (40, 0), self.manual, 3)
        multi = decode_multilabel(schemes, ms, spec, params, truth_sigma=tr.sigma)
        single = decode(schemes[0], ms[0].binary(1), params[0])
        assert np.array_equal(multi.sigma_hat, single.sigma_hat)
        assert np.array_equal(multi.scores[0], single.scores)

    def test_equal_theta_rounds_match_binary_problems(self):
        spec, params, schemes, ms, tr = multilabel_instance(2000, (0.5, 0.5), (40, 30), self.manual, 4)
        assert len(schemes) == 1
        multi = decode_multilabel(schemes, ms, spec, params, truth_sigma=tr.sigma)
        alone = [decode(schemes[0], ms[0].binary(label), params[0]) for label in (1, 2)]
        both = (alone[0].sigma_hat == 1) & (alone[1].sigma_hat == 1)
        assert multi.conflicts == int(both.sum())
        for label, res in zip((1, 2), alone):
            assert np.array_equal(multi.scores[label - 1], res.scores)
            assert np.array_equal((multi.sigma_hat == label)[~both], (res.sigma_hat == 1)[~both])

    def test_distinct_theta_uses_two_schemes(self):
        spec, params, schemes, ms, tr = multilabel_instance(2000, (0.5, 0.3), (40, 10), self.manual, 5)
        assert len(schemes) == 2 and params[1].k == 10
        multi = decode_multilabel(schemes, ms, spec, params, truth_sigma=tr.sigma)
        second = decode(schemes[1], ms[1].binary(2), params[1])
        assert np.array_equal(multi.scores[1], second.scores)

    def test_conflict_is_failure(self):
        spec, params, schemes, ms, tr = multilabel_instance(2000, (0.5, 0.5), (40, 30), self.manual, 6)
        loose = [dataclasses.replace(p, alpha=1e-9) for p in params]
        res = decode_multilabel(schemes, ms, spec, loose, truth_sigma=tr.sigma)
        assert res.conflicts > 0
        assert res.exact_recovery is False
