"""Level metrics, tents, unit heights, and boundary metrics of the expanding model."""

import math

import numpy as np
import pytest
import scipy.linalg

from millefeuille import (
    ExpandingStructure,
    HoroPoint,
    apply_flow,
    crossing_height,
    dm_closed_form,
    euclid_cygan,
    euclid_cygan_convergence,
    level_metric,
    snowflake_reparam,
    tent_distance,
    unit_height,
    visual_distance,
)
from millefeuille.heintze import dm_closed_form_batch, visual_triangle_defect
from millefeuille.madic import MAdicPoint, ball_of, tree_distance


def _layer_max_crossing(E, x, y, lo=-200.0, hi=200.0):
    """Independent bisection oracle on the per-layer max norm."""
    dx = np.asarray(x, float) - np.asarray(y, float)
    norms = E.layer_norms(dx)
    alphas = np.array([l.alpha for l in E.layers])

    def g(t):
        return max(n * math.exp(-a * t) for n, a in zip(norms, alphas) if n > 0) - 1.0

    assert g(lo) > 0 > g(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestStructureValidation:
    def test_bad_layers(self):
        with pytest.raises(ValueError):
            ExpandingStructure.diagonal([(0.0, 1)])
        with pytest.raises(ValueError):
            ExpandingStructure.diagonal([(2.0, 1), (1.0, 1)])
        with pytest.raises(ValueError):
            ExpandingStructure.diagonal([(1.0, 0)])

    def test_matrix_checks(self):
        with pytest.raises(ValueError):
            ExpandingStructure(
                (  # lower-triangular entry
                    (1.0, 2),
                ), matrix=np.array([[math.e, 0.0], [1.0, math.e]]))
        with pytest.raises(ValueError):
            ExpandingStructure(((1.0, 2),), matrix=np.array([[math.e, 0.0], [0.0, 7.0]]))

    def test_matrix_accepted(self):
        M = np.array([[math.e, 1.0], [0.0, math.e]])
        E = ExpandingStructure(((1.0, 2),), matrix=M)
        assert not E.is_diagonal
        assert E.dim == 2

    def test_json_roundtrip(self, E12):
        back = ExpandingStructure.from_json(E12.to_json())
        assert back == E12
        with pytest.raises(ValueError):
            ExpandingStructure.from_json('{"layers": [], "bogus": 1}')


class TestLevelMetric:
    def test_identity_at_height_zero(self, E12, rng):
        for _ in range(20):
            x, y = rng.normal(size=2), rng.normal(size=2)
            assert level_metric(E12, 0.0, x, y) == pytest.approx(np.linalg.norm(x - y), rel=1e-14)

    def test_diagonal_example(self, E12):
        got = level_metric(E12, 1.0, np.array([1.0, 1.0]), np.zeros(2))
        assert got == pytest.approx(math.sqrt(math.exp(-2) + math.exp(-4)), rel=1e-12)

    def test_against_matrix_exponential_oracle(self, E12, rng):
        gen = np.diag([1.0, 2.0])
        for _ in range(50):
            t = rng.uniform(-3, 3)
            x, y = rng.normal(size=2), rng.normal(size=2)
            oracle = np.linalg.norm(scipy.linalg.expm(-t * gen) @ (x - y))
            assert level_metric(E12, t, x, y) == pytest.approx(oracle, rel=1e-10)

    def test_coincident_points(self, E12):
        x = np.array([2.0, -1.0])
        assert level_metric(E12, 1.7, x, x) == 0.0

    def test_dimension_mismatch(self, E12):
        with pytest.raises(ValueError):
            level_metric(E12, 0.0, np.zeros(3), np.zeros(2))

    def test_matrix_structure_matches_expm(self, rng):
        M = np.array([[math.e, 1.0], [0.0, math.e]])
        E = ExpandingStructure(((1.0, 2),), matrix=M)
        gen = scipy.linalg.logm(M).real
        for _ in range(30):
            t = rng.uniform(-2, 2)
            x, y = rng.normal(size=2), rng.normal(size=2)
            oracle = np.linalg.norm(scipy.linalg.expm(-t * gen) @ (x - y))
            assert level_metric(E, t, x, y) == pytest.approx(oracle, rel=1e-9)

    def test_scaling_equivariance(self, E12, rng):
        for _ in range(50):
            t, s = rng.uniform(-2, 2, size=2)
            x, y = rng.normal(size=2) * 5, rng.normal(size=2) * 5
            lhs = level_metric(E12, t + s, apply_flow(E12, s, x), apply_flow(E12, s, y))
            rhs = level_metric(E12, t, x, y)
            assert lhs == pytest.approx(rhs, rel=1e-9)


class TestTentDistance:
    def test_coincident(self, E12):
        p = HoroPoint(np.array([1.0, 2.0]), 0.5)
        assert tent_distance(E12, p, p) == 0.0

    def test_same_fiber_vertical(self, E12):
        x = np.array([3.0, -1.0])
        assert tent_distance(E12, HoroPoint(x, -2.0), HoroPoint(x, 5.5)) == 7.5

    def test_calculus_closed_form(self, E1):
        # single exponent 1: minimize 2h + e^(H-h) gives 2(H - ln 2) + 2
        H = 10.0
        p = HoroPoint(np.array([math.exp(H)]), 0.0)
        q = HoroPoint(np.zeros(1), 0.0)
        assert tent_distance(E1, p, q) == pytest.approx(2 * (H - math.log(2)) + 2, rel=1e-9)

    def test_symmetry_exact(self, E12, rng):
        for _ in range(30):
            p = HoroPoint(rng.normal(size=2) * 10, rng.uniform(-3, 3))
            q = HoroPoint(rng.normal(size=2) * 10, rng.uniform(-3, 3))
            assert tent_distance(E12, p, q) == tent_distance(E12, q, p)

    def test_lower_bound_height_gap(self, E12, rng):
        for _ in range(30):
            p = HoroPoint(rng.normal(size=2), rng.uniform(-3, 3))
            q = HoroPoint(rng.normal(size=2), rng.uniform(-3, 3))
            assert tent_distance(E12, p, q) >= abs(p.t - q.t) - 1e-12

    def test_triangle_up_to_additive_constant(self, E12, rng):
        pts = [HoroPoint(rng.normal(size=2) * 20, rng.uniform(-4, 4)) for _ in range(12)]
        for a in pts:
            for b in pts:
                for c in pts:
                    assert (tent_distance(E12, a, c)
                            <= tent_distance(E12, a, b) + tent_distance(E12, b, c) + 2.0)

    def test_divergence_downward_and_collapse_upward(self, E12):
        # distinct fibers: distance at height -t blows up, level at +t vanishes
        x, y = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        down = [tent_distance(E12, HoroPoint(x, -t), HoroPoint(y, -t)) for t in range(0, 30, 3)]
        assert all(b > a for a, b in zip(down[2:], down[3:]))
        assert down[-1] > 50
        up = [level_metric(E12, float(t), x, y) for t in range(0, 30, 3)]
        assert all(b < a for a, b in zip(up, up[1:]))
        assert up[-1] < 1e-10


class TestUnitHeight:
    def test_unit_norm_single_layer(self, E1):
        assert unit_height(E1, np.array([1.0]), np.zeros(1)) == pytest.approx(0.0, abs=1e-12)

    def test_single_binding_layer(self, E12):
        t0 = unit_height(E12, np.array([0.0, math.exp(4)]), np.zeros(2))
        assert t0 == pytest.approx(2.0, rel=1e-12)
        oracle = _layer_max_crossing(E12, np.array([0.0, math.exp(4)]), np.zeros(2))
        assert t0 == pytest.approx(oracle, abs=1e-9)

    def test_max_over_layers(self, E12):
        t0 = unit_height(E12, np.array([math.exp(3), math.exp(4)]), np.zeros(2))
        assert t0 == pytest.approx(3.0, rel=1e-12)
        oracle = _layer_max_crossing(E12, np.array([math.exp(3), math.exp(4)]), np.zeros(2))
        assert t0 == pytest.approx(oracle, abs=1e-9)

    def test_equal_points_rejected(self, E12):
        with pytest.raises(ValueError):
            unit_height(E12, np.ones(2), np.ones(2))

    def test_small_differences_bind_below_one(self, E12):
        # all layer norms below 1: the crossing is negative but still the max
        t0 = unit_height(E12, np.array([0.5, 0.9]), np.zeros(2))
        oracle = _layer_max_crossing(E12, np.array([0.5, 0.9]), np.zeros(2))
        assert t0 == pytest.approx(oracle, abs=1e-9)

    def test_euclid_crossing_bounds(self, E12, rng):
        # the Euclidean crossing sits within [0, ln(sqrt(n))/a_1] above the
        # layer-max crossing
        for _ in range(100):
            x = rng.normal(size=2) * rng.choice([0.1, 1.0, 50.0])
            if not np.any(x):
                continue
            t_max = unit_height(E12, x, np.zeros(2))
            t_euc = crossing_height(E12, x, np.zeros(2))
            assert -1e-9 <= t_euc - t_max <= math.log(math.sqrt(2)) + 1e-9

    def test_crossing_floor(self, E12):
        x = np.array([0.0, math.exp(4)])
        assert crossing_height(E12, x, np.zeros(2), floor=10.0) == 10.0
        assert crossing_height(E12, x, np.zeros(2), floor=-10.0) == pytest.approx(2.0, abs=1e-9)

    def test_matrix_case_brackets_the_crossing(self):
        M = np.array([[math.e, 1.0], [0.0, math.e]])
        E = ExpandingStructure(((1.0, 2),), matrix=M)
        x = np.array([5.0, 3.0])
        t0 = unit_height(E, x, np.zeros(2))
        assert level_metric(E, t0 + 1e-6, x, np.zeros(2)) <= 1.0 + 1e-6
        assert level_metric(E, t0 - 0.5, x, np.zeros(2)) > 1.0


class TestVisualDistance:
    def test_zero_for_equal(self, E12):
        assert visual_distance(E12, np.ones(2), np.ones(2)) == 0.0

    def test_example_value(self, E12):
        got = visual_distance(E12, np.array([0.0, math.exp(4)]), np.zeros(2), epsilon=1.0)
        assert got == pytest.approx(math.exp(2.0), rel=1e-12)

    def test_exponent_law(self, E12, rng):
        for _ in range(30):
            x, y = rng.normal(size=2) * 10, rng.normal(size=2) * 10
            d1 = visual_distance(E12, x, y, epsilon=0.7)
            d2 = visual_distance(E12, x, y, epsilon=1.4)
            assert d2 == pytest.approx(d1 ** 2, rel=1e-9)

    def test_default_epsilon_matches_closed_form(self, E12, rng):
        # default snowflake exponent is a_1, so the visual metric equals the
        # closed-form layer formula
        for _ in range(200):
            x, y = rng.normal(size=2) * 30, rng.normal(size=2) * 30
            assert visual_distance(E12, x, y) == pytest.approx(
                dm_closed_form(E12, x, y), rel=1e-9)


class TestClosedForm:
    def test_zero(self, E12):
        assert dm_closed_form(E12, np.ones(2), np.ones(2)) == 0.0

    def test_examples(self, E12):
        assert dm_closed_form(E12, np.array([0.0, 4.0]), np.zeros(2)) == pytest.approx(2.0, rel=1e-12)
        assert dm_closed_form(E12, np.array([3.0, 0.0]), np.zeros(2)) == pytest.approx(3.0, rel=1e-12)

    def test_rejects_matrix_structures(self):
        M = np.array([[math.e, 1.0], [0.0, math.e]])
        E = ExpandingStructure(((1.0, 2),), matrix=M)
        with pytest.raises(ValueError):
            dm_closed_form(E, np.ones(2), np.zeros(2))

    def test_batch_matches_scalar(self, E12, rng):
        V = rng.normal(size=(50, 2)) * 10
        W = rng.normal(size=(50, 2)) * 10
        batch = dm_closed_form_batch(E12, V, W)
        for k in range(50):
            assert batch[k] == pytest.approx(dm_closed_form(E12, V[k], W[k]), rel=1e-12)

    def test_triangle_inequality_vectorized(self, E12, rng):
        # every layer enters at exponent a_1/a_i <= 1, so this is a metric
        X = rng.uniform(-100, 100, size=(100_000, 2))
        Y = rng.uniform(-100, 100, size=(100_000, 2))
        Z = rng.uniform(-100, 100, size=(100_000, 2))
        dxz = dm_closed_form_batch(E12, X, Z)
        dxy = dm_closed_form_batch(E12, X, Y)
        dyz = dm_closed_form_batch(E12, Y, Z)
        assert np.all(dxz <= dxy + dyz + 1e-9 * np.maximum(dxz, 1.0))


class TestEuclidCygan:
    def test_zero_in_limit_mode(self, E12):
        assert euclid_cygan(E12, np.ones(2), np.ones(2)) == 0.0

    def test_tree_analogue_exact(self):
        # on the tree, level distance below the merge is exactly 2(t0 - t), so
        # the horospherical formula telescopes to e^t0 with no error term
        xi = MAdicPoint.from_digits(2, {2: 1})
        zeta = MAdicPoint.zero(2)
        t0 = 3  # agreement height
        for T in (-5, -17, -40):
            d_T = tree_distance(ball_of(xi, T), ball_of(zeta, T))
            assert d_T == 2 * (t0 - T)
            value = math.exp(0.5 * (2 * T + d_T))
            assert value == math.exp(t0)

    def test_ratio_to_visual_bounded(self, E12, rng):
        ratios = []
        for _ in range(200):
            x, y = rng.uniform(-25, 25, size=2), rng.uniform(-25, 25, size=2)
            if np.array_equal(x, y):
                continue
            ratios.append(euclid_cygan(E12, x, y, -40.0) / visual_distance(E12, x, y, epsilon=1.0))
        assert 0.25 <= min(ratios) and max(ratios) <= 4.0

    def test_convergence_monitor(self, E12):
        x, y = np.array([3.0, 1.0]), np.array([-2.0, 0.5])
        v1, v2 = euclid_cygan_convergence(E12, x, y, -40.0)
        assert v1 == pytest.approx(v2, rel=1e-9)

    def test_cutoff_must_be_negative(self, E12):
        with pytest.raises(ValueError):
            euclid_cygan(E12, np.ones(2), np.zeros(2), 1.0)


class TestSnowflakeReparam:
    def test_identity(self, E12):
        assert snowflake_reparam(E12, 1.0) == E12

    def test_doubles_layers_and_squares_distances(self, E12, rng):
        E2 = snowflake_reparam(E12, 2.0)
        assert [l.alpha for l in E2.layers] == [2.0, 4.0]
        for _ in range(1000):
            x, y = rng.uniform(-50, 50, size=2), rng.uniform(-50, 50, size=2)
            d = visual_distance(E12, x, y)
            d2 = visual_distance(E2, x, y)
            assert d == pytest.approx(d2 ** 2.0, rel=1e-9)

    def test_log_m_normalization_target(self, E12):
        # the fibered-boundary coupling rescales so a_1 = ln m
        m = 2
        factor = math.log(m) / E12.alpha1
        E2 = snowflake_reparam(E12, factor)
        assert E2.alpha1 == pytest.approx(math.log(m), rel=1e-15)

    def test_rejects_nonpositive(self, E12):
        with pytest.raises(ValueError):
            snowflake_reparam(E12, 0.0)

    def test_admissible_exponent_has_no_triangle_violation(self, E12):
        assert visual_triangle_defect(E12, count=500, seed=3) <= 1e-9


class TestOracleEquivalence:
    def test_exp_unit_height_equals_closed_form(self, rng):
        # the crossing-definition route and the closed-formula route agree
        for _ in range(20):
            alphas = np.sort(rng.uniform(0.5, 4.0, size=2))
            E = ExpandingStructure.diagonal([(alphas[0], 1), (alphas[1], 1)])
            for _ in range(50):
                x, y = rng.uniform(-100, 100, size=2), rng.uniform(-100, 100, size=2)
                lhs = math.exp(E.alpha1 * unit_height(E, x, y))
                rhs = dm_closed_form(E, x, y)
                assert abs(lhs - rhs) <= 1e-9 * max(lhs, rhs)
