import json
import math

import numpy as np
import pytest

from gwn import common_info as ci
from gwn.errors import ValidationError
from gwn.pmf import JointPmf, conditional_mutual_information, mutual_information
from gwn.rate_distortion import DistortionMatrix

D3 = DistortionMatrix.squared_error(np.arange(3.0))
D2M = DistortionMatrix.squared_error(np.arange(2.0))


def h2(x):
    return -(x * math.log2(x) + (1 - x) * math.log2(1 - x))


def dsbs(a0):
    return JointPmf(np.array([[(1 - a0) / 2, a0 / 2], [a0 / 2, (1 - a0) / 2]]))


DSBS_CLOSED_FORM = 1 + h2(0.1) - 2 * h2((1 - math.sqrt(1 - 2 * 0.1)) / 2)


class TestGacsKorner:
    def test_product_distribution_is_zero(self):
        j = JointPmf(np.outer([0.3, 0.7], [0.4, 0.6]))
        res = ci.gk_common_information_lossless(j)
        assert res.value_bits == 0.0
        assert res.aux_alphabet_size == 1

    def test_copy_source(self):
        n = 5
        res = ci.gk_common_information_lossless(JointPmf(np.eye(n) / n))
        assert res.value_bits == pytest.approx(math.log2(n), abs=1e-12)
        assert res.aux_alphabet_size == n

    def test_two_uniform_blocks(self):
        t = np.zeros((4, 4))
        t[:2, :2] = 0.125
        t[2:, 2:] = 0.125
        res = ci.gk_common_information_lossless(JointPmf(t))
        assert res.value_bits == pytest.approx(1.0, abs=1e-12)
        assert res.aux_alphabet_size == 2

    def test_witness_marginalizes_back(self):
        rng = np.random.default_rng(0)
        t = rng.random((3, 4))
        j = JointPmf(t / t.sum())
        res = ci.gk_common_information_lossless(j)
        assert np.allclose(res.witness.marginal((0, 1)), j.probs, atol=1e-9)

    def test_witness_markov_conditions(self):
        # V is a common function of either source: I(X2;V|X1) = I(X1;V|X2) = 0
        t = np.zeros((4, 4))
        t[:2, :2] = np.array([[0.1, 0.2], [0.15, 0.05]])
        t[2:, 2:] = np.array([[0.2, 0.1], [0.1, 0.1]])
        res = ci.gk_common_information_lossless(JointPmf(t))
        w = res.witness
        assert conditional_mutual_information(w, 1, 2, 0) <= 1e-9
        assert conditional_mutual_information(w, 0, 2, 1) <= 1e-9

    def test_sandwich_below_mutual_information(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            t = rng.random((3, 3))
            t[rng.random((3, 3)) < 0.5] = 0.0
            if t.sum() == 0:
                continue
            j = JointPmf(t / t.sum())
            res = ci.gk_common_information_lossless(j)
            assert res.value_bits <= mutual_information(j, 0, 1) + 1e-9


class TestWyner:
    def test_independent_sources(self):
        j = JointPmf(np.full((2, 2), 0.25))
        res = ci.wyner_common_information_lossless(j, restarts=8, seed=0)
        assert res.feasible
        assert res.value_bits == pytest.approx(0.0, abs=1e-6)

    def test_copy_source(self):
        n = 3
        res = ci.wyner_common_information_lossless(JointPmf(np.eye(n) / n), seed=0)
        assert res.feasible
        assert res.value_bits == pytest.approx(math.log2(n), abs=1e-9)

    def test_dsbs_closed_form(self):
        res = ci.wyner_common_information_lossless(dsbs(0.1), aux_size=2, seed=1)
        assert res.feasible
        assert res.value_bits == pytest.approx(DSBS_CLOSED_FORM, abs=1e-3)

    def test_grid_certification(self):
        res = ci.wyner_common_information_grid(dsbs(0.1), grid=32)
        # the lattice optimum upper-bounds the true value at grid resolution
        assert res.value_bits >= DSBS_CLOSED_FORM - 1e-9
        assert res.value_bits - DSBS_CLOSED_FORM < 0.2
        assert res.method == "exhaustive"

    def test_witness_conditions_and_marginalization(self):
        j = dsbs(0.2)
        res = ci.wyner_common_information_lossless(j, aux_size=2, tol=1e-6, seed=2)
        assert res.feasible
        assert np.allclose(res.witness.marginal((0, 1)), j.probs, atol=1e-9)
        assert conditional_mutual_information(res.witness, 0, 1, 2) < 1e-6

    def test_certified_value_dominates_mutual_information(self):
        rng = np.random.default_rng(3)
        for k in range(10):
            t = rng.random((3, 3))
            j = JointPmf(t / t.sum())
            res = ci.wyner_common_information_lossless(j, restarts=4, seed=k)
            assert res.value_bits >= mutual_information(j, 0, 1) - 1e-12

    def test_infeasible_aux_flagged(self):
        res = ci.wyner_common_information_lossless(
            JointPmf(np.eye(3) / 3), aux_size=1, restarts=2, seed=0
        )
        assert not res.feasible
        assert res.value_bits == pytest.approx(math.log2(3), abs=1e-9)


class TestTupleEnumeration:
    def test_lossless_copy_contains_identity(self):
        j = JointPmf(np.eye(3) / 3)
        sets = ci.lossy_tuple_enumeration(j, D3, D3, 0.0, 0.0, grid=8)
        ident = np.einsum("ik,jl->ijkl", np.eye(3), np.eye(3))
        mass = (j.probs > 0)[:, :, None, None]
        assert any(np.allclose(c * mass, ident * mass, atol=1e-12) for c in sets.transmit)
        assert any(np.allclose(c * mass, ident * mass, atol=1e-12) for c in sets.receive)

    def test_independent_transmit_tuples_have_zero_ii(self):
        j = JointPmf(np.full((2, 2), 0.25))
        sets = ci.lossy_tuple_enumeration(j, D2M, D2M, 0.0, 0.0, grid=8)
        for c in sets.transmit:
            assert ci._tuple_ii(j, c) == pytest.approx(0.0, abs=1e-9)

    def test_degenerate_source_grid_one_singletons(self):
        t = np.zeros((2, 2))
        t[0, 0] = 1.0
        sets = ci.lossy_tuple_enumeration(JointPmf(t), D2M, D2M, 0.0, 0.0, grid=1)
        assert len(sets.transmit) == 1
        assert len(sets.receive) == 1

    def test_impossible_tolerance_reports_error(self):
        j = JointPmf(np.array([[0.4, 0.1], [0.1, 0.4]]))
        with pytest.raises(Exception, match="coarser tol"):
            ci.lossy_tuple_enumeration(j, D2M, D2M, 0.05, 0.05, grid=2, tol=1e-12)


class TestTheorem1:
    def test_copy_uniform_three_all_equal(self):
        rep = ci.check_theorem1(JointPmf(np.eye(3) / 3), D3, D3)
        target = math.log2(3)
        assert rep.ordering_satisfied
        for value in (rep.gk_value, rep.max_receive_ii, rep.min_transmit_ii):
            assert value == pytest.approx(target, abs=1e-9)
        assert rep.wyner_value == pytest.approx(target, abs=1e-6)

    def test_independent_bits_all_zero(self):
        rep = ci.check_theorem1(JointPmf(np.full((2, 2), 0.25)), D2M, D2M)
        assert rep.ordering_satisfied
        assert rep.gk_value == 0.0
        assert rep.max_receive_ii == pytest.approx(0.0, abs=1e-9)
        assert rep.min_transmit_ii == pytest.approx(0.0, abs=1e-9)
        assert rep.wyner_value == pytest.approx(0.0, abs=1e-6)

    def test_random_trials_ordering(self):
        rng = np.random.default_rng(7)
        for k in range(10):
            t = rng.random((3, 3))
            rep = ci.check_theorem1(JointPmf(t / t.sum()), D3, D3, seed=k)
            assert rep.ordering_satisfied

    def test_json_export(self):
        rep = ci.check_theorem1(JointPmf(np.eye(2) / 2), D2M, D2M)
        payload = json.loads(rep.to_json())
        assert payload["ordering_satisfied"] is True
        assert "receive_ii_histogram" in payload
        assert payload["enumerated_tuples"] == rep.enumerated_tuples


class TestGWObjective:
    def test_fully_dependent_three_symbols(self):
        T, mappings = ci.gw_objective_discrete(
            JointPmf(np.eye(3) / 3), D3, D3, 0.0, 0.0, 1.0, 1.0, (3, 3, 3)
        )
        assert T == pytest.approx(math.log2(3), abs=1e-12)
        assert len(set(mappings["f0"][:: 3 + 1])) == 3  # diagonal cells separated

    def test_independent_three_symbols(self):
        T, _ = ci.gw_objective_discrete(
            JointPmf(np.full((3, 3), 1 / 9)), D3, D3, 0.0, 0.0, 1.0, 1.0, (3, 3, 3)
        )
        assert T == pytest.approx(2 * math.log2(3), abs=1e-12)

    def test_forced_trivial_common_channel(self):
        for table in (np.eye(3) / 3, np.full((3, 3), 1 / 9)):
            j = JointPmf(table)
            T, _ = ci.gw_objective_discrete(j, D3, D3, 0.0, 0.0, 1.0, 1.0, (1, 3, 3))
            p1 = j.probs.sum(axis=1)
            p2 = j.probs.sum(axis=0)
            h_sum = -(p1 * np.log2(p1)).sum() - (p2 * np.log2(p2)).sum()
            assert T == pytest.approx(h_sum, abs=1e-12)

    def test_matches_plain_loop_oracle(self):
        import itertools

        rng = np.random.default_rng(5)
        t = rng.random((2, 2))
        j = JointPmf(t / t.sum())
        T, _ = ci.gw_objective_discrete(j, D2M, D2M, 0.0, 0.0, 1.0, 1.0, (4, 2, 2))

        def entropy_of(t):
            t = t[t > 0]
            return -(t * np.log2(t)).sum()

        best = math.inf
        p = j.probs
        for f0 in itertools.product(range(4), repeat=4):
            for f1 in itertools.product(range(2), repeat=2):
                for f2 in itertools.product(range(2), repeat=2):
                    t0 = np.zeros(4)
                    t01 = np.zeros((4, 2))
                    t02 = np.zeros((4, 2))
                    ok1 = {}
                    ok2 = {}
                    feasible = True
                    for i in range(2):
                        for jj in range(2):
                            if p[i, jj] <= 0:
                                continue
                            c = i * 2 + jj
                            t0[f0[c]] += p[i, jj]
                            t01[f0[c], f1[i]] += p[i, jj]
                            t02[f0[c], f2[jj]] += p[i, jj]
                            if ok1.setdefault((f0[c], f1[i]), i) != i:
                                feasible = False
                            if ok2.setdefault((f0[c], f2[jj]), jj) != jj:
                                feasible = False
                    if not feasible:
                        continue
                    val = (
                        entropy_of(t0)
                        + (entropy_of(t01) - entropy_of(t0))
                        + (entropy_of(t02) - entropy_of(t0))
                    )
                    best = min(best, val)
        assert T == pytest.approx(best, abs=1e-12)

    def test_never_exceeds_sum_of_marginal_entropies(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            t = rng.random((2, 2))
            j = JointPmf(t / t.sum())
            T, _ = ci.gw_objective_discrete(j, D2M, D2M, 0.0, 0.0, 1.0, 1.0, (4, 2, 2))
            p1 = j.probs.sum(axis=1)
            p2 = j.probs.sum(axis=0)
            h_sum = -(p1 * np.log2(p1)).sum() - (p2 * np.log2(p2)).sum()
            assert T <= h_sum + 1e-9

    def test_alpha_domain_enforced(self):
        j = JointPmf(np.full((2, 2), 0.25))
        with pytest.raises(ValidationError):
            ci.gw_objective_discrete(j, D2M, D2M, 0.0, 0.0, 0.4, 0.4, (2, 2, 2))
        with pytest.raises(ValidationError):
            ci.gw_objective_discrete(j, D2M, D2M, 0.0, 0.0, 1.2, 1.0, (2, 2, 2))

    def test_infeasible_targets_named(self):
        # alphabet of size 1 for Y1 cannot reconstruct a 2-symbol source at D=0
        j = JointPmf(np.full((2, 2), 0.25))
        with pytest.raises(ValidationError, match="infeasible"):
            ci.gw_objective_discrete(j, D2M, D2M, 0.0, 0.0, 1.0, 1.0, (1, 1, 2))

    def test_annealing_path_smoke(self):
        # (4,3,3) on a 3x3 source exceeds the exhaustive cap and must anneal
        j = JointPmf(np.eye(3) / 3)
        T, _ = ci.gw_objective_discrete(
            j, D3, D3, 0.0, 0.0, 1.0, 1.0, (4, 3, 3), seed=0, anneal_steps=3000
        )
        assert T >= math.log2(3) - 1e-9
        assert T <= math.log2(3) + 1.5
        T_again, _ = ci.gw_objective_discrete(
            j, D3, D3, 0.0, 0.0, 1.0, 1.0, (4, 3, 3), seed=0, anneal_steps=3000
        )
        assert T == T_again
