"""Mirror descent on the simplex and the mixture analyses built on it."""

import numpy as np
import pytest

from mixlaw.core import TargetWeights, js_distance, validate_mixture
from mixlaw.errors import DomainMismatch
from mixlaw.laws import AdditiveParams, JointParams, LawParams
from mixlaw.mixopt import (
    MixtureReport,
    OptimizeConfig,
    asymptote_trace,
    corner_profile,
    fixed_point_scan,
    mirror_descent,
)
from mixlaw.synthlab import simplex_grid

NAMES2 = ("a", "b")
NAMES3 = ("a", "b", "c")
TIGHT = OptimizeConfig(eta=0.5, tol=1e-12, max_iter=200000)


def additive2(C, gamma, names=NAMES2, E=1.0):
    return LawParams("additive", names, AdditiveParams(
        E=E, A=50.0, B=50.0, alpha=0.3, beta=0.3, C=C, gamma=gamma))


class TestMirrorDescent:
    def test_linear_objective_reaches_vertex(self):
        """With gamma = 1 the denominator is linear, so the optimum puts all
        weight on the domain with the largest coefficient."""
        law = additive2((2.0, 1.0), (1.0, 1.0))
        report = mirror_descent([(law, 1.0)], 10**8, 10**9,
                                OptimizeConfig(eta=0.5, tol=1e-14,
                                               max_iter=200000))
        assert report.h_star.weights == (1.0, 0.0)

    def test_symmetric_law_gives_uniform(self):
        law = additive2((1.0, 1.0), (0.5, 0.5))
        report = mirror_descent([(law, 1.0)], 10**8, 10**9, TIGHT)
        assert report.h_star.weights == (0.5, 0.5)

    def test_closed_form_stationary_point(self):
        """C = [4, 1], gamma = [0.5, 0.5]: balancing C_i/(2 sqrt(h_i)) under
        the sum-to-one constraint gives h* = [16/17, 1/17]."""
        law = additive2((4.0, 1.0), (0.5, 0.5))
        report = mirror_descent([(law, 1.0)], 10**8, 10**9, TIGHT)
        h = np.array(report.h_star.weights)
        np.testing.assert_allclose(h, [16 / 17, 1 / 17], atol=1e-6)
        assert report.converged

    def test_every_iterate_on_simplex(self):
        law = additive2((4.0, 1.0), (0.5, 0.5))
        report = mirror_descent([(law, 1.0)], 10**8, 10**9,
                                OptimizeConfig(eta=0.3))
        for mix in report.trajectory:
            assert abs(sum(mix.weights) - 1.0) <= 1e-12
            assert all(w >= 0 for w in mix.weights)

    def test_objective_nonincreasing_along_iterates(self):
        from mixlaw.laws import eval_law

        law = additive2((4.0, 1.0), (0.5, 0.5))
        report = mirror_descent([(law, 1.0)], 10**8, 10**9,
                                OptimizeConfig(eta=1.5))
        values = [eval_law(law, 10**8, 10**9, m) for m in report.trajectory]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_additive_argmin_scale_invariant(self):
        """The additive mixture gradient has no N or D dependence, so the
        argmin must agree across a 100x budget change.  The objective is
        flat to machine precision within ~1e-8 of the optimum (its values
        differ by a constant between budgets), so 1e-7 is the honest
        coincidence tolerance."""
        rng = np.random.default_rng(0)
        for _ in range(5):
            c = tuple(rng.uniform(0.5, 5.0, 2))
            g = tuple(rng.uniform(0.3, 0.9, 2))
            law = additive2(c, g)
            small = mirror_descent([(law, 1.0)], 10**7, 10**8, TIGHT).h_star
            big = mirror_descent([(law, 1.0)], 10**9, 10**10, TIGHT).h_star
            assert js_distance(small, big) <= 1e-7

    def test_weight_scaling_leaves_argmin_unchanged(self):
        la = additive2((4.0, 1.0), (0.5, 0.5))
        lb = additive2((1.0, 3.0), (0.6, 0.4))
        one = mirror_descent([(la, 0.3), (lb, 0.7)], 10**8, 10**9, TIGHT)
        scaled = mirror_descent([(la, 3.0), (lb, 7.0)], 10**8, 10**9, TIGHT)
        assert js_distance(one.h_star, scaled.h_star) <= 1e-7

    def test_min_weight_zero_is_identity(self):
        law = additive2((2.0, 1.0), (1.0, 1.0))
        plain = mirror_descent([(law, 1.0)], 10**8, 10**9, TIGHT)
        floored = mirror_descent(
            [(law, 1.0)], 10**8, 10**9,
            OptimizeConfig(eta=0.5, tol=1e-12, max_iter=200000,
                           min_weight=0.0),
        )
        assert plain.h_star == floored.h_star
        assert not floored.flooring_applied

    def test_min_weight_floors_and_renormalizes(self):
        law = additive2((2.0, 1.0), (1.0, 1.0))
        report = mirror_descent(
            [(law, 1.0)], 10**8, 10**9,
            OptimizeConfig(eta=0.5, tol=1e-14, max_iter=200000,
                           min_weight=0.01),
        )
        assert report.flooring_applied
        assert report.h_star.weights[1] == pytest.approx(0.01)
        assert sum(report.h_star.weights) == pytest.approx(1.0, abs=1e-12)

    def test_h0_respected(self):
        law = additive2((4.0, 1.0), (0.5, 0.5))
        h0 = validate_mixture([0.9, 0.1], NAMES2)
        report = mirror_descent(
            [(law, 1.0)], 10**8, 10**9,
            OptimizeConfig(eta=0.5, tol=1e-12, max_iter=200000, h0=h0),
        )
        assert report.trajectory[0] == h0
        np.testing.assert_allclose(report.h_star.weights, [16 / 17, 1 / 17],
                                   atol=1e-6)

    def test_domain_mismatch(self):
        la = additive2((1.0, 1.0), (0.5, 0.5))
        lb = additive2((1.0, 1.0), (0.5, 0.5), names=("a", "x"))
        with pytest.raises(DomainMismatch):
            mirror_descent([(la, 1.0), (lb, 1.0)], 10**8, 10**9)

    def test_weights_must_not_all_vanish(self):
        law = additive2((1.0, 1.0), (0.5, 0.5))
        with pytest.raises(ValueError):
            mirror_descent([(law, 0.0)], 10**8, 10**9)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizeConfig(eta=0.0)
        with pytest.raises(ValueError):
            OptimizeConfig(tol=-1.0)


def vertex_pulling_laws(names=NAMES3):
    mk = lambda C: LawParams("additive", names, AdditiveParams(
        E=1.0, A=50.0, B=50.0, alpha=0.3, beta=0.3, C=C,
        gamma=(1.0,) * len(names)))
    return {
        "a": mk((9.0, 0.5, 0.5)),
        "b": mk((0.5, 9.0, 0.5)),
        "c": mk((0.5, 0.5, 9.0)),
    }


def asymmetric_laws(names=NAMES3):
    mk = lambda C, g: LawParams("additive", names, AdditiveParams(
        E=1.0, A=50.0, B=50.0, alpha=0.3, beta=0.3, C=C, gamma=g))
    return {
        "a": mk((5.0, 0.8, 0.4), (0.5, 0.6, 0.7)),
        "b": mk((0.6, 3.0, 1.1), (0.8, 0.45, 0.55)),
        "c": mk((0.3, 0.9, 6.0), (0.65, 0.75, 0.5)),
    }


class TestCornerProfile:
    def test_dominant_coefficients_select_vertices(self):
        profile = corner_profile(vertex_pulling_laws(), 10**8, 10**9,
                                 OptimizeConfig(eta=0.5, tol=1e-13,
                                                max_iter=200000))
        for target, h in profile.items():
            vertex = validate_mixture(
                [1.0 if n == target else 0.0 for n in NAMES3], NAMES3)
            assert js_distance(h, vertex) < 0.01

    def test_symmetric_laws_give_equal_corners(self):
        mk = lambda: LawParams("additive", NAMES3, AdditiveParams(
            E=1.0, A=50.0, B=50.0, alpha=0.3, beta=0.3,
            C=(1.0, 1.0, 1.0), gamma=(0.5, 0.5, 0.5)))
        profile = corner_profile({n: mk() for n in NAMES3}, 10**8, 10**9,
                                 TIGHT)
        mixtures = list(profile.values())
        for other in mixtures[1:]:
            assert js_distance(mixtures[0], other) <= 1e-9

    def test_rows_sum_to_one(self):
        profile = corner_profile(asymmetric_laws(), 10**8, 10**9, TIGHT)
        assert len(profile) == 3
        for h in profile.values():
            assert sum(h.weights) == pytest.approx(1.0, abs=1e-12)


class TestFixedPointScan:
    def test_corners_are_fixed_points_for_vertex_pulling_laws(self):
        laws = vertex_pulling_laws()
        grid = [TargetWeights(NAMES3, tuple(1.0 if n == t else 0.0
                                            for n in NAMES3))
                for t in NAMES3]
        res = fixed_point_scan(laws, 10**8, 10**9, grid,
                               OptimizeConfig(eta=0.5, tol=1e-13,
                                              max_iter=200000))
        for _, _, js, fixed in res:
            assert js < 1e-3 and fixed

    def test_symmetric_laws_fix_the_uniform_point(self):
        mk = lambda: LawParams("additive", NAMES3, AdditiveParams(
            E=1.0, A=50.0, B=50.0, alpha=0.3, beta=0.3,
            C=(1.0, 1.0, 1.0), gamma=(0.5, 0.5, 0.5)))
        laws = {n: mk() for n in NAMES3}
        grid = [TargetWeights(NAMES3, (1 / 3, 1 / 3, 1 / 3))]
        (_, h, js, fixed), = fixed_point_scan(laws, 10**8, 10**9, grid,
                                              TIGHT)
        assert js <= 1e-9 and fixed

    def test_asymmetric_laws_have_no_interior_fixed_points(self):
        """On a 0.1-step interior grid the optimal mixture never matches the
        target weighting for well-separated asymmetric laws."""
        laws = asymmetric_laws()
        grid = [TargetWeights(NAMES3, m.weights)
                for m in simplex_grid(3, 0.1, 0.1, NAMES3)]
        res = fixed_point_scan(laws, 10**8, 10**9, grid,
                               OptimizeConfig(eta=0.5, tol=1e-11,
                                              max_iter=100000))
        assert len(res) == 36
        assert min(js for _, _, js, _ in res) > 1e-3
        assert not any(fixed for _, _, _, fixed in res)


class TestAsymptoteTrace:
    def test_additive_trace_is_constant(self):
        law = additive2((5.0, 0.8, 0.4), (0.5, 0.6, 0.7), names=NAMES3)
        schedule = [(10**7 * 4**t, 10**8 * 4**t) for t in range(5)]
        trace = asymptote_trace({"t": law}, None, schedule, TIGHT)
        for h in trace[1:]:
            assert js_distance(trace[0], h) <= 1e-9

    def test_joint_trace_drifts_to_asymptotic_optimum(self):
        """Budget coefficients favor one domain at small scale; the trace
        must approach the optimum of the infinite-budget loss monotonically
        as flops grow."""
        jl = LawParams("joint", NAMES3, JointParams(
            E=1.5, alpha=0.4, beta=0.35,
            C=(3.0, 1.0, 0.8), gamma=(0.6, 0.6, 0.6),
            C_A=(900.0, 40.0, 300.0), gamma_A=1.0,
            C_B=(700.0, 30.0, 250.0), gamma_B=1.0))
        asym_law = LawParams("additive", NAMES3, AdditiveParams(
            E=1.5, A=0.0, B=0.0, alpha=1.0, beta=1.0,
            C=(3.0, 1.0, 0.8), gamma=(0.6, 0.6, 0.6)))
        asym_opt = mirror_descent([(asym_law, 1.0)], 10, 10, TIGHT).h_star
        schedule = [(int(10**7 * 4**t), int(10**8 * 4**t)) for t in range(8)]
        trace = asymptote_trace({"t": jl}, None, schedule, TIGHT)
        dists = [js_distance(h, asym_opt) for h in trace]
        assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))
        assert dists[-1] < dists[0] / 4

    def test_schedule_supports_single_axis_growth(self):
        law = additive2((5.0, 0.8, 0.4), (0.5, 0.6, 0.7), names=NAMES3)
        n_only = [(10**7 * 2**t, 10**8) for t in range(3)]
        d_only = [(10**7, 10**8 * 2**t) for t in range(3)]
        assert len(asymptote_trace({"t": law}, None, n_only, TIGHT)) == 3
        assert len(asymptote_trace({"t": law}, None, d_only, TIGHT)) == 3

    def test_schedule_must_increase_in_flops(self):
        law = additive2((1.0, 1.0), (0.5, 0.5))
        with pytest.raises(ValueError):
            asymptote_trace({"t": law}, None, [(100, 100), (100, 100)])
        with pytest.raises(ValueError):
            asymptote_trace({"t": law}, None, [])

    def test_target_weights_steer_the_trace(self):
        laws = asymmetric_laws()
        schedule = [(10**7, 10**8), (10**8, 10**9)]
        toward_a = asymptote_trace(
            laws, TargetWeights(NAMES3, (1.0, 0.0, 0.0)), schedule, TIGHT)
        toward_c = asymptote_trace(
            laws, TargetWeights(NAMES3, (0.0, 0.0, 1.0)), schedule, TIGHT)
        assert toward_a[0].weights[0] > toward_c[0].weights[0]
