"""Objective tests: loss identities, gradient checks, Adam behavior."""

import numpy as np
import pytest

from graphsim.errors import ValidationError
from graphsim.objective import AdamState, LossConfig, adam_step, global_loss, l2_penalty

from oracles import central_difference, relative_error

CFG = LossConfig(margin=0.6, lambda_weight=0.35, l2_coeff=0.005)


class TestGlobalLoss:
    def test_perfect_separation_zero_loss(self):
        s = np.array([1.0, 1.0, 0.0, 0.0])
        flags = np.array([True, True, False, False])
        loss, _ = global_loss(s, flags, CFG)
        assert loss == 0.0

    def test_single_pair_each_no_gap(self):
        loss, _ = global_loss([0.5, 0.5], [True, False], CFG)
        assert loss == pytest.approx(0.21, abs=1e-12)

    def test_two_pairs_each_worked_example(self):
        loss, _ = global_loss([0.8, 0.6, 0.3, 0.1], [1, 1, 0, 0], CFG)
        assert loss == pytest.approx(0.055, abs=1e-12)

    def test_nonnegative_and_zero_only_when_separated(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            s = rng.random(n)
            flags = np.zeros(n, dtype=bool)
            flags[: int(rng.integers(1, n))] = True
            loss, _ = global_loss(s, flags, CFG)
            assert loss >= 0.0
            mu_gap = s[flags].mean() - s[~flags].mean()
            var_sum = s[flags].var() + s[~flags].var()
            if loss == 0.0:
                assert var_sum == 0.0 and mu_gap >= CFG.margin

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(0.05, 0.95, 9)
        flags = np.array([True] * 4 + [False] * 5)
        # keep the instance away from the hinge kink
        assert abs((s[flags].mean() - s[~flags].mean()) - CFG.margin) > 1e-3
        _, grad = global_loss(s, flags, CFG)
        numeric = central_difference(lambda x: global_loss(x, flags, CFG)[0], s)
        assert np.max(relative_error(grad, numeric)) <= 1e-7

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        s = rng.random(8)
        flags = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=bool)
        loss_a, _ = global_loss(s, flags, CFG)
        perm = rng.permutation(8)
        loss_b, _ = global_loss(s[perm], flags[perm], CFG)
        assert loss_a == pytest.approx(loss_b, rel=1e-14)

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(0.1, 0.5, 6)
        flags = np.array([1, 1, 1, 0, 0, 0], dtype=bool)
        loss_a, _ = global_loss(s, flags, CFG)
        loss_b, _ = global_loss(s + 0.3, flags, CFG)
        assert loss_a == pytest.approx(loss_b, abs=1e-12)

    def test_single_class_batch_rejected(self):
        with pytest.raises(ValidationError):
            global_loss([0.5, 0.6], [True, True], CFG)

    def test_hinge_boundary_uses_inactive_branch(self):
        # mu gap exactly equals the margin: subgradient of the hinge is 0
        s = np.array([0.8, 0.2])
        flags = np.array([True, False])
        loss, grad = global_loss(s, flags, CFG)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros(2))


class TestL2Penalty:
    def test_zero_weights(self):
        val, grad = l2_penalty(np.zeros(5), 0.005)
        assert val == 0.0
        np.testing.assert_array_equal(grad, np.zeros(5))

    def test_hand_value(self):
        val, grad = l2_penalty(np.array([1.0, -1.0]), 0.005)
        assert val == pytest.approx(0.01, abs=1e-15)
        np.testing.assert_allclose(grad, [0.01, -0.01], atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal(7)
        _, grad = l2_penalty(w, 0.005)
        numeric = central_difference(lambda x: l2_penalty(x, 0.005)[0], w, h=1e-6)
        assert np.max(relative_error(grad, numeric, floor=1e-10)) <= 1e-8


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, 2.0])]
        state = AdamState.for_params(p)
        out = adam_step(p, [np.zeros(2)], state)
        np.testing.assert_array_equal(out[0], p[0])

    def test_first_step_moves_by_learning_rate(self):
        p = [np.array(0.0)]
        state = AdamState.for_params(p, learning_rate=0.001)
        out = adam_step(p, [np.array(1.0)], state)
        assert out[0] == pytest.approx(-0.001, rel=1e-6)

    def test_descends_quadratic(self):
        x = np.array(1.0)
        state = AdamState.for_params([x], learning_rate=0.01)
        for _ in range(100):
            (x,) = adam_step([x], [2.0 * x], state)
        assert abs(x) < 0.9

    def test_shape_mismatch_rejected(self):
        p = [np.zeros(3)]
        state = AdamState.for_params(p)
        with pytest.raises(ValidationError):
            adam_step(p, [np.zeros(4)], state)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        g = rng.standard_normal(4)
        p = [np.ones(4)]
        s1 = AdamState.for_params(p)
        s2 = AdamState.for_params(p)
        np.testing.assert_array_equal(adam_step(p, [g], s1)[0], adam_step(p, [g], s2)[0])
