"""Unit tests for the building blocks of the nested-rule optimizer."""

import math

import numpy as np
import pytest

from nestquad.errors import (
    ConvergenceError,
    NumericalError,
    ParameterError,
    UnsupportedFamilyError,
)
from nestquad.gauss import QuadratureRule, gauss_rule, verify_rule
from nestquad.nested_optimizer import (
    NestedRulePair,
    OptimizerConfig,
    ProblemDims,
    assemble_jacobian,
    assemble_residual,
    initialize,
    newton_decrement,
    penalty_coefficient,
    penalty_terms,
    prune_negligible,
    select_lambda,
    tikhonov_step,
)
from nestquad.orthopoly import (
    chebyshev1,
    generalized_hermite,
    generalized_laguerre,
    jacobi,
    legendre,
    recurrence_coefficients,
)

from oracles import eval_orthonormal_oracle, oracle_recurrence, stieltjes_recurrence, family_moments
from refdata import gauss_kronrod_15


def table_for(family, capacity):
    return recurrence_coefficients(family, capacity + 1)


class TestProblemDims:
    def test_counts(self):
        dims = ProblemDims(3, 7, 5, 11, (1, 3, 5))
        assert dims.n_unknowns == 3 + 14
        assert dims.n_moments == 5 + 11 + 2
        assert dims.n_penalties == 14 + 3

    def test_subset_must_be_increasing(self):
        with pytest.raises(ParameterError):
            ProblemDims(2, 5, 3, 7, (3, 1))

    def test_subset_length_and_range(self):
        with pytest.raises(ParameterError):
            ProblemDims(2, 5, 3, 7, (1,))
        with pytest.raises(ParameterError):
            ProblemDims(2, 5, 3, 7, (1, 5))

    def test_degrees_must_order(self):
        with pytest.raises(ParameterError):
            ProblemDims(2, 5, 7, 7, (1, 3))


class TestOptimizerConfig:
    def test_defaults(self):
        config = OptimizerConfig()
        assert config.epsilon == 1e-12
        assert config.A == 1e3
        assert config.weight_floor == 1e-6
        assert config.max_iterations == 5000
        assert config.lambda_update_period == 40
        assert config.stall_tol == config.epsilon

    def test_family_defaults_relax_floor_on_unbounded(self):
        assert OptimizerConfig.defaults_for(legendre()).weight_floor == 1e-6
        assert OptimizerConfig.defaults_for(
            generalized_hermite(0.0)).weight_floor == 1e-13
        assert OptimizerConfig.defaults_for(
            generalized_laguerre(0.0)).weight_floor == 1e-13

    def test_explicit_floor_wins(self):
        config = OptimizerConfig.defaults_for(generalized_hermite(0.0),
                                              weight_floor=1e-8)
        assert config.weight_floor == 1e-8

    def test_invalid(self):
        with pytest.raises(ParameterError):
            OptimizerConfig(epsilon=0.0)
        with pytest.raises(ParameterError):
            OptimizerConfig(A=0.5)
        with pytest.raises(ParameterError):
            OptimizerConfig(weight_floor=-1e-6)
        with pytest.raises(ParameterError):
            OptimizerConfig(max_iterations=0)


class TestAssembleResidual:
    def test_uniform_weights_zero_mass_rows(self):
        table = table_for(legendre(), 12)
        d, dims = initialize(2, table)
        r = assemble_residual(d, table, dims)
        assert r.shape == (dims.n_moments,)
        # both mass rows vanish for uniform weights
        assert abs(r[0]) < 1e-15
        assert abs(r[dims.alpha1 + 1]) < 1e-15
        assert np.max(np.abs(r)) > 1e-3

    def test_matches_high_precision_evaluation(self):
        fam = legendre()
        table = table_for(fam, 12)
        d, dims = initialize(2, table)
        r = assemble_residual(d, table, dims)
        x2 = d[:dims.n2]
        w1 = d[dims.n2:dims.n2 + dims.n1]
        w2 = d[dims.n2 + dims.n1:]
        x1 = x2[list(dims.subset_map)]
        moments = family_moments(fam.kind, fam.params, 2 * dims.alpha2 + 4)
        _, _, polys, norms2 = stieltjes_recurrence(moments, dims.alpha2 + 1)
        cols1 = [eval_orthonormal_oracle(polys, norms2, dims.alpha1, x)
                 for x in x1]
        cols2 = [eval_orthonormal_oracle(polys, norms2, dims.alpha2, x)
                 for x in x2]
        expected = []
        for j in range(dims.alpha1 + 1):
            acc = sum(float(c[j]) * w for c, w in zip(cols1, w1))
            expected.append(acc - (1.0 if j == 0 else 0.0))
        for j in range(dims.alpha2 + 1):
            acc = sum(float(c[j]) * w for c, w in zip(cols2, w2))
            expected.append(acc - (1.0 if j == 0 else 0.0))
        np.testing.assert_allclose(r, expected, atol=1e-12)

    def test_published_kronrod_pair_is_a_root(self):
        nodes, weights, coarse_w, subset = gauss_kronrod_15()
        table = table_for(legendre(), 23)
        dims = ProblemDims(7, 15, 13, 23, tuple(subset))
        d = np.concatenate([nodes, coarse_w, weights])
        r = assemble_residual(d, table, dims)
        assert np.linalg.norm(r) <= 1e-12

    def test_wrong_subset_spikes_coarse_rows(self):
        nodes, weights, coarse_w, _ = gauss_kronrod_15()
        table = table_for(legendre(), 23)
        dims = ProblemDims(7, 15, 13, 23, tuple(range(7)))
        d = np.concatenate([nodes, coarse_w, weights])
        r = assemble_residual(d, table, dims)
        assert np.linalg.norm(r[:14]) > 1e-2

    def test_rejects_wrong_length(self):
        table = table_for(legendre(), 12)
        _, dims = initialize(2, table)
        with pytest.raises(ParameterError):
            assemble_residual(np.zeros(3), table, dims)


class TestPenaltyTerms:
    def setup_method(self):
        self.config = OptimizerConfig()
        self.dims = ProblemDims(1, 3, 1, 5, (1,))

    def test_node_violation_squared(self):
        d = np.array([-0.5, 0.0, 1.1, 0.5, 0.2, 0.2, 0.2])
        p = penalty_terms(d, self.dims, legendre().domain, self.config)
        assert p.shape == (2 * 3 + 1,)
        assert p[0] == 0.0 and p[1] == 0.0
        assert p[2] == (1.1 - 1.0) ** 2

    def test_weight_floor_violation_squared(self):
        d = np.array([-0.5, 0.0, 0.5, 0.5, 0.2, -0.02, 0.2])
        p = penalty_terms(d, self.dims, legendre().domain, self.config)
        # w2 block follows the n2 node entries
        assert p[3 + 1] == (0.02 + 1e-6) ** 2
        assert p[3 + 0] == 0.0 and p[3 + 2] == 0.0

    def test_coarse_weight_block_is_last(self):
        d = np.array([-0.5, 0.0, 0.5, -1.0, 0.2, 0.2, 0.2])
        p = penalty_terms(d, self.dims, legendre().domain, self.config)
        assert p[6] == (1.0 + 1e-6) ** 2
        assert np.all(p[:6] == 0.0)

    def test_feasible_point_is_all_zero(self):
        d = np.array([-0.5, 0.0, 0.5, 0.5, 0.2, 0.2, 0.2])
        p = penalty_terms(d, self.dims, legendre().domain, self.config)
        assert np.all(p == 0.0)

    def test_unbounded_domain_has_no_node_penalty(self):
        d = np.array([-50.0, 0.0, 50.0, 0.5, 0.2, 0.2, 0.2])
        p = penalty_terms(d, self.dims, generalized_hermite(0.0).domain,
                          self.config)
        assert np.all(p[:3] == 0.0)

    def test_half_line_penalizes_below_only(self):
        d = np.array([-0.5, 1.0, 1e9, 0.5, 0.2, 0.2, 0.2])
        p = penalty_terms(d, self.dims, generalized_laguerre(0.0).domain,
                          self.config)
        assert p[0] == 0.25 and p[1] == 0.0 and p[2] == 0.0

    def test_allow_negative_disables_weight_floor(self):
        config = OptimizerConfig(allow_negative_weights=True)
        d = np.array([-0.5, 0.0, 0.5, -1.0, 0.2, -0.5, 0.2])
        p = penalty_terms(d, self.dims, legendre().domain, config)
        assert np.all(p == 0.0)


class TestPenaltyCoefficient:
    def test_large_residual_uses_floor(self):
        assert penalty_coefficient(10.0, OptimizerConfig()) == 1e3

    def test_small_residual_grows(self):
        assert penalty_coefficient(1e-9, OptimizerConfig()) == pytest.approx(
            1e9, rel=1e-15)

    def test_zero_residual_caps(self):
        assert penalty_coefficient(0.0, OptimizerConfig()) == 1e16
        assert penalty_coefficient(1e-20, OptimizerConfig()) == 1e16

    def test_rejects_negative(self):
        with pytest.raises(ParameterError):
            penalty_coefficient(-1.0, OptimizerConfig())
        with pytest.raises(ParameterError):
            penalty_coefficient(math.nan, OptimizerConfig())


def _fd_jacobian(d, table, dims, c_k, config, h=1e-7):
    def augmented(v):
        r = assemble_residual(v, table, dims)
        p = penalty_terms(v, dims, table.family.domain, config)
        return np.concatenate([r, c_k * p])

    cols = []
    for j in range(d.size):
        e = np.zeros_like(d)
        e[j] = h
        cols.append((augmented(d + e) - augmented(d - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


class TestAssembleJacobian:
    def test_shape(self):
        table = table_for(legendre(), 8)
        dims = ProblemDims(1, 3, 1, 3, (1,))
        d = np.array([-0.5, 0.1, 0.5, 1.0, 0.4, 0.3, 0.3])
        J = assemble_jacobian(d, table, dims, 1e3, OptimizerConfig())
        assert J.shape == (dims.n_moments + dims.n_penalties, dims.n_unknowns)

    @pytest.mark.parametrize("family", [
        legendre(),
        chebyshev1(),
        jacobi(0.0, 0.3),
        generalized_hermite(0.0),
        generalized_laguerre(0.5),
    ], ids=lambda f: f.kind)
    def test_matches_finite_differences(self, family):
        rng = np.random.default_rng(42)
        table = table_for(family, 12)
        config = OptimizerConfig.defaults_for(family)
        dims = ProblemDims(2, 5, 3, 7, (1, 3))
        dom = family.domain
        lo = dom.lo if dom.bounded_below else -3.0
        hi = dom.hi if dom.bounded_above else 3.0
        for _ in range(20):
            # keep every coordinate at least 1e-3 away from a penalty kink
            x2 = np.sort(rng.uniform(lo + 1e-3, hi - 1e-3, size=5))
            w1 = rng.uniform(1e-3, 0.8, size=2)
            w2 = rng.uniform(1e-3, 0.8, size=5)
            d = np.concatenate([x2, w1, w2])
            c_k = 10.0 ** rng.uniform(0, 4)
            J = assemble_jacobian(d, table, dims, c_k, config)
            J_fd = _fd_jacobian(d, table, dims, c_k, config)
            err = np.max(np.abs(J - J_fd)) / max(1.0, np.max(np.abs(J)))
            assert err <= 1e-6

    def test_finite_differences_with_active_penalties(self):
        family = legendre()
        table = table_for(family, 12)
        config = OptimizerConfig()
        dims = ProblemDims(2, 5, 3, 7, (1, 3))
        rng = np.random.default_rng(7)
        for _ in range(10):
            x2 = np.sort(rng.uniform(-0.9, 0.9, size=5))
            x2[-1] = 1.0 + rng.uniform(0.01, 0.2)  # outside the domain
            w1 = rng.uniform(0.1, 0.8, size=2)
            w2 = rng.uniform(0.1, 0.8, size=5)
            w2[0] = -rng.uniform(0.01, 0.2)  # below the floor
            d = np.concatenate([x2, w1, w2])
            c_k = 1e3
            J = assemble_jacobian(d, table, dims, c_k, config)
            J_fd = _fd_jacobian(d, table, dims, c_k, config)
            err = np.max(np.abs(J - J_fd)) / max(1.0, np.max(np.abs(J)))
            assert err <= 1e-6

    def test_coarse_rows_accumulate_through_subset(self):
        # moving a non-shared fine node must not touch coarse rows
        table = table_for(legendre(), 8)
        dims = ProblemDims(1, 3, 1, 3, (1,))
        d = np.array([-0.5, 0.1, 0.5, 1.0, 0.4, 0.3, 0.3])
        J = assemble_jacobian(d, table, dims, 1e3, OptimizerConfig())
        coarse_rows = J[:dims.alpha1 + 1]
        assert np.all(coarse_rows[:, 0] == 0.0)  # x2[0] not in subset
        assert np.any(coarse_rows[:, 1] != 0.0)  # x2[1] shared
        # fine weight columns never feed coarse rows
        assert np.all(coarse_rows[:, dims.n2 + dims.n1:] == 0.0)


class TestSelectLambda:
    def test_cliff_spectrum(self):
        s = [1.0, 0.9, 0.8, 1e-9, 1e-10]
        assert select_lambda(s) == 1e-9

    def test_smooth_spectrum_falls_back(self):
        s = np.logspace(0, -12, 20)
        assert select_lambda(s) == pytest.approx(1e-10, rel=1e-12)

    def test_late_cliff(self):
        s = [5.0, 4.0, 3.0, 2.0, 1e-13, 1e-14]
        assert select_lambda(s) == 1e-13

    def test_needs_three_values(self):
        with pytest.raises(ParameterError):
            select_lambda([1.0, 0.5])

    def test_degenerate_spectrum(self):
        with pytest.raises(NumericalError):
            select_lambda([0.0, 0.0, 0.0])

    def test_accepts_unsorted_input(self):
        assert select_lambda([1e-10, 1.0, 0.8, 0.9, 1e-9]) == 1e-9


class TestTikhonovStep:
    def test_diagonal_filter_values(self):
        J = np.diag([1.0, 1e-8])
        r = np.array([1.0, 1.0])
        step = tikhonov_step(J, r, 1e-4)
        # sigma/(sigma^2 + lambda^2) against each component
        expected = np.array([1.0 / (1.0 + 1e-8), 1e-8 / (1e-16 + 1e-8)])
        np.testing.assert_allclose(step, expected, rtol=1e-15)

    def test_near_root_shifted_form(self):
        J = np.diag([1.0, 1e-8])
        r = np.array([1e-9, 1e-9])
        step = tikhonov_step(J, r, 1e-4, near_root=True)
        expected = np.array([1e-9 / (1.0 + 1e-4), 1e-9 / (1e-8 + 1e-4)])
        np.testing.assert_allclose(step, expected, rtol=1e-15)

    def test_zero_lambda_recovers_least_squares(self):
        rng = np.random.default_rng(3)
        J = rng.normal(size=(6, 3))
        z = rng.normal(size=3)
        step = tikhonov_step(J, J @ z, 0.0)
        np.testing.assert_allclose(step, z, rtol=1e-10)

    def test_exact_zero_directions_are_dropped(self):
        J = np.diag([1.0, 0.0])
        step = tikhonov_step(J, np.array([1.0, 1.0]), 0.0)
        np.testing.assert_allclose(step, [1.0, 0.0], atol=1e-15)

    def test_rejects_negative_lambda(self):
        with pytest.raises(ParameterError):
            tikhonov_step(np.eye(2), np.ones(2), -1.0)

    def test_nan_jacobian_raises(self):
        J = np.full((2, 2), np.nan)
        with pytest.raises(NumericalError):
            tikhonov_step(J, np.ones(2), 1e-4)


class TestNewtonDecrement:
    def test_zero_step(self):
        assert newton_decrement(np.zeros(3), np.eye(3), np.ones(3)) == 0.0

    def test_exact_step_on_consistent_system(self):
        rng = np.random.default_rng(11)
        J = rng.normal(size=(8, 4))
        z = rng.normal(size=4)
        r = J @ z
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        eta = newton_decrement(step, J, r)
        assert eta == pytest.approx(float(np.linalg.norm(r)), rel=1e-10)
        assert eta == pytest.approx(float(np.linalg.norm(J @ step)), rel=1e-10)


class TestInitialize:
    def test_legendre_interlaced(self):
        table = table_for(legendre(), 12)
        d, dims = initialize(2, table)
        assert dims == ProblemDims(2, 5, 3, 8, (1, 3))
        np.testing.assert_array_equal(d[:5], gauss_rule(table, 5).nodes)
        np.testing.assert_array_equal(d[5:7], [0.5, 0.5])
        np.testing.assert_array_equal(d[7:], [0.2] * 5)

    def test_single_coarse_node_is_center(self):
        table = table_for(legendre(), 8)
        _, dims = initialize(1, table)
        assert dims.subset_map == (1,)

    def test_unbounded_nodes_are_shrunk(self):
        table = table_for(generalized_hermite(0.0), 16)
        d, dims = initialize(3, table, 11)
        full = gauss_rule(table, 7).nodes
        ratio = np.max(np.abs(gauss_rule(table, 6).nodes)) / np.max(np.abs(full))
        assert ratio < 1.0
        np.testing.assert_allclose(d[:7], full * ratio, rtol=1e-15)
        # physicists' Hermite cross-check of the shrink ratio
        h6 = np.polynomial.hermite.hermgauss(6)[0]
        h7 = np.polynomial.hermite.hermgauss(7)[0]
        assert ratio == pytest.approx(np.max(np.abs(h6)) / np.max(np.abs(h7)),
                                      abs=1e-12)

    def test_bounded_nodes_are_not_shrunk(self):
        table = table_for(legendre(), 16)
        d, _ = initialize(3, table, 11)
        np.testing.assert_array_equal(d[:7], gauss_rule(table, 7).nodes)

    def test_rejects_bad_n1(self):
        table = table_for(legendre(), 8)
        with pytest.raises(ParameterError):
            initialize(0, table)


class TestPruneNegligible:
    def _rule_with_spurious_node(self):
        table = table_for(legendre(), 9)
        base = gauss_rule(table, 5)
        nodes = np.sort(np.append(base.nodes, 0.1234567))
        k = int(np.searchsorted(base.nodes, 0.1234567))
        weights = np.insert(base.weights, k, 1e-15)
        rule = QuadratureRule(legendre(), nodes, weights, 9, 1e-14,
                              weight_floor_relaxed=True)
        return rule, table

    def test_drops_negligible_node(self):
        rule, table = self._rule_with_spurious_node()
        pruned = prune_negligible(rule, table)
        assert pruned.n == 5
        assert 0.1234567 not in pruned.nodes
        check = verify_rule(pruned, table, 9)
        assert check.norm <= 1e-11

    def test_untouched_rule_returned_as_is(self):
        table = table_for(legendre(), 9)
        rule = gauss_rule(table, 5)
        assert prune_negligible(rule, table) is rule

    def test_refuses_when_verification_fails(self):
        table = table_for(legendre(), 9)
        base = gauss_rule(table, 5)
        # a load-bearing weight scaled to threshold size: pruning it breaks
        # the moment conditions, so the original must come back
        weights = base.weights.copy()
        weights[2] = 1e-14
        weights /= weights.sum()
        bad = QuadratureRule(legendre(), base.nodes, weights, 4, 1.0,
                             weight_floor_relaxed=True)
        assert prune_negligible(bad, table) is bad
