import math

import numpy as np
import pytest

from mtlgrad.toybench import (
    DEFAULT_BOUNDS,
    ToyObjective,
    ToyWeighting,
    grid_oracle,
    init_points,
    init_points_small,
    load_oracle_fixtures,
    oracle_loss,
    toy_gradients,
    toy_losses,
    weight_presets,
)


class TestToyLosses:
    def test_origin(self):
        assert toy_losses((0.0, 0.0)) == (0.0, 0.0)

    def test_upper_region(self):
        L1, L2 = toy_losses((0.0, 8.0))
        assert L1 == pytest.approx(7.4989, abs=1e-3)
        assert L2 == pytest.approx(6.9115, abs=1e-3)

    def test_lower_region(self):
        L1, L2 = toy_losses((0.0, -8.0))
        expect = math.tanh(4.0) * (49.0 / 10.0 - 20.0)
        assert L1 == pytest.approx(expect, abs=1e-4)
        assert L2 == pytest.approx(L1, abs=1e-12)

    def test_upper_half_is_log_branch_only(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            t1 = float(rng.uniform(-10, 10))
            t2 = float(rng.uniform(0.1, 10))
            L1, L2 = toy_losses((t1, t2))
            c1 = math.tanh(0.5 * t2)
            f1 = math.log(max(abs(-0.5 * t1 - 3.5 - math.tanh(t2)), 5e-6)) + 6
            f2 = math.log(max(abs(-0.5 * t1 + 3.5 - math.tanh(t2)), 5e-6)) + 6
            assert L1 == pytest.approx(c1 * f1, abs=1e-12)
            assert L2 == pytest.approx(c1 * f2, abs=1e-12)

    def test_lower_half_is_quadratic_branch_only(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t1 = float(rng.uniform(-10, 10))
            t2 = float(rng.uniform(-10, -0.1))
            L1, _ = toy_losses((t1, t2))
            c2 = math.tanh(-0.5 * t2)
            g1 = ((-t1 + 7.0) ** 2 + 0.1 * (-t2 - 8.0) ** 2) / 10.0 - 20.0
            assert L1 == pytest.approx(c2 * g1, abs=1e-12)

    def test_continuity_across_gating_kink(self):
        step = 1e-6
        for t1 in (-8.0, -3.0, 0.0, 4.0, 9.0):
            above = np.array(toy_losses((t1, step)))
            below = np.array(toy_losses((t1, -step)))
            assert np.max(np.abs(above - below)) <= 1e-3

    def test_continuity_across_log_kink(self):
        # |u1| = 0 locus at theta1 = -7 - 2 tanh(theta2)
        t2 = 2.0
        t1 = -7.0 - 2.0 * math.tanh(t2)
        step = 1e-7
        a = np.array(toy_losses((t1 - step, t2)))
        b = np.array(toy_losses((t1 + step, t2)))
        assert np.max(np.abs(a - b)) <= 1e-3


class TestToyGradients:
    def test_origin_structure(self):
        G = toy_gradients((0.0, 0.0))
        # gating factors vanish at the crossover, killing the theta1 channel
        assert G.rows[0, 0] == 0.0
        assert G.rows[1, 0] == 0.0
        # the gating derivatives keep the theta2 channel alive
        assert G.rows[0, 1] != 0.0
        assert G.rows[1, 1] != 0.0

    def test_hand_chain_rule_point(self):
        G = toy_gradients((0.0, 8.0))
        c1 = math.tanh(4.0)
        expect = c1 * 0.5 / abs(-3.5 - math.tanh(8.0))
        assert G.rows[0, 0] == pytest.approx(expect, abs=1e-6)
        assert G.rows[0, 0] == pytest.approx(0.11104, abs=1e-4)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        h = 1e-6
        checked = 0
        while checked < 20:
            t1, t2 = rng.uniform(-10.0, 10.0, size=2)
            if abs(t2) < 1e-3:
                continue
            u1 = -0.5 * t1 - 3.5 - math.tanh(t2)
            u2 = -0.5 * t1 + 3.5 - math.tanh(t2)
            if min(abs(u1), abs(u2)) < 1e-3:
                continue
            checked += 1
            analytic = toy_gradients((t1, t2)).rows
            numeric = np.zeros((2, 2))
            for j, e in enumerate(((h, 0.0), (0.0, h))):
                lp = np.array(toy_losses((t1 + e[0], t2 + e[1])))
                lm = np.array(toy_losses((t1 - e[0], t2 - e[1])))
                numeric[:, j] = (lp - lm) / (2.0 * h)
            scale = np.maximum(np.abs(numeric), 1.0)
            assert np.max(np.abs(analytic - numeric) / scale) < 1e-4


class TestCatalogs:
    def test_init_points(self):
        assert init_points() == [(-8.5, 7.5), (-8.5, 5.0), (0.0, 0.0),
                                 (9.0, 9.0), (10.0, -8.0)]

    def test_small_subset(self):
        assert init_points_small() == [(-8.5, 7.5), (0.0, 8.0), (5.0, 9.0)]

    def test_weight_presets(self):
        presets = [(w.a1, w.a2) for w in weight_presets()]
        assert presets == [(0.1, 0.9), (0.3, 0.7), (0.5, 0.5), (0.7, 0.3),
                           (0.9, 0.1)]
        for w in weight_presets():
            assert w.a1 + w.a2 == pytest.approx(1.0)

    def test_weighting_validation(self):
        with pytest.raises(ValueError):
            ToyWeighting(-0.1, 1.1)
        with pytest.raises(ValueError):
            ToyWeighting(0.5, 0.6)


class TestGridOracle:
    def test_fixture_matches_recompute(self):
        fixtures = load_oracle_fixtures()
        w = ToyWeighting(0.5, 0.5)
        fresh = grid_oracle(w)
        assert fixtures[(0.5, 0.5)].loss_star == pytest.approx(
            fresh.loss_star, abs=1e-9)

    def test_all_presets_frozen(self):
        fixtures = load_oracle_fixtures()
        assert set(fixtures) == {(0.1, 0.9), (0.3, 0.7), (0.5, 0.5),
                                 (0.7, 0.3), (0.9, 0.1)}

    def test_symmetric_weightings_mirror(self):
        fixtures = load_oracle_fixtures()
        a = fixtures[(0.9, 0.1)]
        b = fixtures[(0.1, 0.9)]
        assert a.loss_star == pytest.approx(b.loss_star, abs=1e-6)
        assert a.theta_star[0] == pytest.approx(-b.theta_star[0], abs=1e-6)
        assert a.theta_star[1] == pytest.approx(b.theta_star[1], abs=1e-6)

    def test_oracle_below_init_losses(self):
        for w in weight_presets():
            star = oracle_loss(w)
            for p in init_points():
                L1, L2 = toy_losses(p)
                assert star <= w.a1 * L1 + w.a2 * L2 + 1e-12

    def test_refinement_monotone(self):
        w = ToyWeighting(0.5, 0.5)
        coarse = grid_oracle(w, step=0.04)
        fine = grid_oracle(w, step=0.02)
        assert fine.loss_star <= coarse.loss_star + 1e-12

    def test_result_inside_bounds(self):
        r = grid_oracle(ToyWeighting(0.3, 0.7), step=0.05)
        x_lo, x_hi, y_lo, y_hi = DEFAULT_BOUNDS
        assert x_lo <= r.theta_star[0] <= x_hi
        assert y_lo <= r.theta_star[1] <= y_hi


class TestToyObjective:
    def test_weighted_losses(self):
        obj = ToyObjective(ToyWeighting(0.9, 0.1))
        L = obj.losses((0.0, 8.0))
        raw = toy_losses((0.0, 8.0))
        np.testing.assert_allclose(L, [0.9 * raw[0], 0.1 * raw[1]])

    def test_weighted_gradients(self):
        obj = ToyObjective(ToyWeighting(0.9, 0.1))
        G = obj.gradients((1.0, 2.0))
        raw = toy_gradients((1.0, 2.0))
        np.testing.assert_allclose(G.rows[0], 0.9 * raw.rows[0])
        np.testing.assert_allclose(G.rows[1], 0.1 * raw.rows[1])
