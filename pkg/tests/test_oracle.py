"""Tests for the grid-exact worst-case oracle.

Small instances are chosen so the optimum is computable by hand (linear
loss on a two-point grid), and larger ones are checked against the primal
linear program, which certifies the dual value independently.
"""

import math

import numpy as np
import pytest

from wdro.geometry import NormSpec
from wdro.measures import EmpiricalMeasure, MixupConfig, mixup_perturb
from wdro.objectives import (
    SurrogateConfig,
    quadratic_loss,
    risk,
    scalar_network_loss,
    surrogate_risk,
    tanh_network_bounds,
)
from wdro.oracle import (
    PRIMAL_VARIABLE_CAP,
    GridCoverageError,
    SampleSpaceSpec,
    WassersteinBallSpec,
    approximation_rate_study,
    dual_objective,
    fit_loglog_slope,
    grid_lipschitz_bound,
    inner_sup,
    primal_worst_case_lp,
    worst_case_risk,
)

EUCLID = NormSpec()

# h(x) = x on the two-point grid {0, 1}
LINEAR = quadratic_loss(0.0, 1.0, 0.0)
TWO_POINT = SampleSpaceSpec(lo=[0.0], hi=[1.0], grid_points_per_dim=2,
                            norm=EUCLID)


def _tanh_instance(grid_points=401):
    w1 = np.array([[1.4], [0.8]])
    b1 = np.array([-1.1, -0.9])
    w2 = np.array([[0.9, 0.7]])
    b2 = np.array([0.3])
    lip, c_h = tanh_network_bounds(w1, w2)
    loss = scalar_network_loss([w1, b1, w2, b2], holder=(c_h, 1.0),
                               lipschitz=lip)
    space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                            grid_points_per_dim=grid_points, norm=EUCLID)
    support = space.grid()[np.array([40, 120, 180, 230, 310, 370])
                           % grid_points]
    return loss, space, EmpiricalMeasure(support)


class TestSampleSpaceSpec:
    def test_grid_is_lexicographic(self):
        space = SampleSpaceSpec(lo=[0.0, 0.0], hi=[1.0, 2.0],
                                grid_points_per_dim=2, norm=EUCLID)
        want = np.array([[0.0, 0.0], [0.0, 2.0], [1.0, 0.0], [1.0, 2.0]])
        np.testing.assert_array_equal(space.grid(), want)

    def test_labels_cross_feature_major(self):
        space = SampleSpaceSpec(lo=[0.0], hi=[1.0], grid_points_per_dim=2,
                                norm=EUCLID, labels=(0, 1))
        want = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(space.grid(), want)
        assert space.point_dim == 2

    def test_grid_step_uses_widest_axis(self):
        space = SampleSpaceSpec(lo=[0.0, 0.0], hi=[1.0, 3.0],
                                grid_points_per_dim=4, norm=EUCLID)
        assert space.grid_step() == pytest.approx(1.0, abs=1e-15)

    def test_diameter(self):
        space = SampleSpaceSpec(lo=[0.0, 0.0], hi=[3.0, 4.0],
                                grid_points_per_dim=2, norm=EUCLID)
        assert space.diameter() == pytest.approx(5.0, abs=1e-12)
        sup = SampleSpaceSpec(lo=[0.0, 0.0], hi=[3.0, 4.0],
                              grid_points_per_dim=2,
                              norm=NormSpec(kind="sup"))
        assert sup.diameter() == pytest.approx(4.0, abs=1e-12)

    def test_diameter_adds_label_gap_only_for_mixed_labels(self):
        norm = NormSpec(kind="product_classification", x_dim=1,
                        label_gap=4.0)
        two = SampleSpaceSpec(lo=[0.0], hi=[1.0], grid_points_per_dim=2,
                              norm=norm, labels=(0, 1))
        one = SampleSpaceSpec(lo=[0.0], hi=[1.0], grid_points_per_dim=2,
                              norm=norm, labels=(1,))
        assert two.diameter() == pytest.approx(5.0, abs=1e-12)
        assert one.diameter() == pytest.approx(1.0, abs=1e-12)

    def test_snap_rounds_to_nearest_grid_point(self):
        space = SampleSpaceSpec(lo=[0.0], hi=[1.0], grid_points_per_dim=3,
                                norm=EUCLID)
        snapped = space.snap(np.array([[0.5 + 1e-12]]))
        assert snapped[0, 0] == 0.5

    def test_snap_rejects_off_grid_points(self):
        with pytest.raises(GridCoverageError, match="away from the grid"):
            TWO_POINT.snap(np.array([[0.4]]))

    def test_validation(self):
        with pytest.raises(ValueError, match="equal length"):
            SampleSpaceSpec(lo=[0.0], hi=[1.0, 2.0], grid_points_per_dim=2,
                            norm=EUCLID)
        with pytest.raises(ValueError, match="lo < hi"):
            SampleSpaceSpec(lo=[1.0], hi=[1.0], grid_points_per_dim=2,
                            norm=EUCLID)
        with pytest.raises(ValueError, match="at least 2"):
            SampleSpaceSpec(lo=[0.0], hi=[1.0], grid_points_per_dim=1,
                            norm=EUCLID)


class TestBallSpec:
    def test_rejects_negative_radius(self):
        with pytest.raises(ValueError, match="nonnegative"):
            WassersteinBallSpec(alpha=-0.1, p=1.0, norm=EUCLID)

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError, match="order"):
            WassersteinBallSpec(alpha=0.1, p=0.5, norm=EUCLID)
        with pytest.raises(ValueError, match="order"):
            WassersteinBallSpec(alpha=0.1, p=math.inf, norm=EUCLID)


class TestInnerSup:
    def test_balances_loss_against_transport(self):
        # max(0 - 0, 1 - 0.5 * 1) = 0.5, attained at the far grid point
        val, idx, point = inner_sup(LINEAR, [0.0], 0.5, TWO_POINT, 1.0)
        assert val == pytest.approx(0.5, abs=1e-15)
        assert idx == 1
        assert point[0] == 1.0

    def test_lam_zero_gives_global_max(self):
        val, idx, _ = inner_sup(LINEAR, [0.0], 0.0, TWO_POINT, 1.0)
        assert val == 1.0 and idx == 1

    def test_huge_lam_pins_the_center(self):
        val, idx, _ = inner_sup(LINEAR, [0.0], 100.0, TWO_POINT, 1.0)
        assert val == 0.0 and idx == 0

    def test_ties_resolve_to_lowest_index(self):
        flat = quadratic_loss(0.0, 0.0, 2.0)
        _, idx, _ = inner_sup(flat, [0.0], 0.0, TWO_POINT, 1.0)
        assert idx == 0

    def test_rejects_negative_lam(self):
        with pytest.raises(ValueError, match="nonnegative"):
            inner_sup(LINEAR, [0.0], -1.0, TWO_POINT, 1.0)


class TestDualObjective:
    def test_hand_value_at_unit_lam(self):
        # lam * alpha + max(0, 1 - lam) = 0.5 + 0 at lam = 1
        mu = EmpiricalMeasure(np.array([[0.0]]))
        ball = WassersteinBallSpec(alpha=0.5, p=1.0, norm=EUCLID)
        got = dual_objective(LINEAR, mu, ball, TWO_POINT, lam=1.0)
        assert got == pytest.approx(0.5, abs=1e-15)

    def test_upper_bounds_the_worst_case_everywhere(self):
        loss, space, mu = _tanh_instance(grid_points=41)
        ball = WassersteinBallSpec(alpha=0.3, p=2.0, norm=EUCLID)
        opt = worst_case_risk(loss, mu, ball, space).value
        for lam in (0.0, 0.05, 0.2, 1.0, 5.0):
            assert dual_objective(loss, mu, ball, space, lam) >= opt - 1e-12

    def test_convex_in_lam(self):
        loss, space, mu = _tanh_instance(grid_points=41)
        ball = WassersteinBallSpec(alpha=0.2, p=2.0, norm=EUCLID)

        def f(lam):
            return dual_objective(loss, mu, ball, space, lam)

        for a, b in ((0.0, 2.0), (0.1, 0.9), (0.5, 4.0)):
            mid = 0.5 * (a + b)
            assert f(mid) <= 0.5 * (f(a) + f(b)) + 1e-12

    def test_rejects_negative_lam(self):
        mu = EmpiricalMeasure(np.array([[0.0]]))
        ball = WassersteinBallSpec(alpha=0.5, p=1.0, norm=EUCLID)
        with pytest.raises(ValueError, match="nonnegative"):
            dual_objective(LINEAR, mu, ball, TWO_POINT, lam=-0.5)


class TestWorstCaseRisk:
    def test_mass_shift_by_hand(self):
        # delta_0, budget 0.5, p = 1: move half the mass to z = 1
        mu = EmpiricalMeasure(np.array([[0.0]]))
        ball = WassersteinBallSpec(alpha=0.5, p=1.0, norm=EUCLID)
        res = worst_case_risk(LINEAR, mu, ball, TWO_POINT)
        assert res.value == pytest.approx(0.5, abs=1e-9)
        assert res.lam == pytest.approx(1.0, abs=1e-6)
        assert res.converged

    def test_zero_radius_recovers_plain_risk(self):
        loss, space, mu = _tanh_instance(grid_points=101)
        ball = WassersteinBallSpec(alpha=0.0, p=2.0, norm=EUCLID)
        res = worst_case_risk(loss, mu, ball, space)
        assert res.value == risk(loss, mu)

    def test_value_dominates_risk_and_grows_with_radius(self):
        loss, space, mu = _tanh_instance(grid_points=101)
        base = risk(loss, mu)
        values = []
        for alpha in (0.0, 0.1, 0.3, 0.5):
            ball = WassersteinBallSpec(alpha=alpha, p=2.0, norm=EUCLID)
            v = worst_case_risk(loss, mu, ball, space).value
            assert v >= base - 1e-12
            values.append(v)
        assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))

    def test_witnesses_reproduce_the_inner_values(self):
        loss, space, mu = _tanh_instance(grid_points=101)
        ball = WassersteinBallSpec(alpha=0.25, p=2.0, norm=EUCLID)
        res = worst_case_risk(loss, mu, ball, space)
        assert res.witness_indices.shape == (mu.n,)
        for i in range(mu.n):
            z = res.witness_points[i]
            d = abs(float(z[0]) - float(mu.points[i, 0]))
            direct = loss.value(z) - res.lam * d ** 2.0
            assert direct == pytest.approx(res.inner_values[i], abs=1e-10)

    def test_off_grid_support_raises(self):
        mu = EmpiricalMeasure(np.array([[0.37]]))
        ball = WassersteinBallSpec(alpha=0.1, p=1.0, norm=EUCLID)
        with pytest.raises(GridCoverageError):
            worst_case_risk(LINEAR, mu, ball, TWO_POINT)


class TestDualPrimalAgreement:
    @pytest.mark.parametrize("p,alpha", [(1.0, 0.1), (2.0, 0.1),
                                         (2.0, 0.5), (4.0, 0.3)])
    def test_certificate_matches(self, p, alpha):
        loss, _, _ = _tanh_instance()
        space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                                grid_points_per_dim=21, norm=EUCLID)
        mu = EmpiricalMeasure(space.grid()[[2, 7, 13, 19]])
        ball = WassersteinBallSpec(alpha=alpha, p=p, norm=EUCLID)
        dual = worst_case_risk(loss, mu, ball, space)
        primal = primal_worst_case_lp(loss, mu, ball, space)
        assert abs(dual.value - primal.value) <= 1e-6
        assert primal.transport_cost <= alpha ** p + 1e-9
        assert primal.status == "optimal"
        # rows of the plan restate the support weights
        np.testing.assert_allclose(primal.plan.sum(axis=1), mu.weights,
                                   atol=1e-9)

    def test_variable_cap_enforced(self):
        space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                                grid_points_per_dim=1025, norm=EUCLID)
        mu = EmpiricalMeasure(space.grid()[[0, 256, 512, 1024]])
        ball = WassersteinBallSpec(alpha=0.1, p=1.0, norm=EUCLID)
        assert 4 * 1025 > PRIMAL_VARIABLE_CAP
        with pytest.raises(ValueError, match="cap"):
            primal_worst_case_lp(LINEAR, mu, ball, space)


class TestGridLipschitzBound:
    def test_quadratic_bound_is_exact_plus_covering_term(self):
        # |2cx + s| peaks at the box edge, which is a grid point, so the
        # bound is the analytic supremum plus C_H * covering radius.
        c, s = 0.5, 0.3
        loss = quadratic_loss(c, s, 0.0)
        space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                                grid_points_per_dim=201, norm=EUCLID)
        sup = max(abs(2 * c + s), abs(-2 * c + s))
        radius = 2.0 / (2 * 200)
        got = grid_lipschitz_bound(loss, space)
        assert got == pytest.approx(sup + 2 * abs(c) * radius, abs=1e-12)
        assert got >= sup

    def test_without_descriptor_reports_grid_max(self):
        loss = scalar_network_loss(
            [np.array([[1.0]]), np.array([0.0]),
             np.array([[1.0]]), np.array([0.0])]
        )
        space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                                grid_points_per_dim=5, norm=EUCLID)
        grads = [abs(float(loss.input_gradient(z)[0]))
                 for z in space.grid()]
        assert grid_lipschitz_bound(loss, space) == pytest.approx(
            max(grads), abs=1e-15)


class TestLogLogSlope:
    def test_exact_quadratic_decay(self):
        alphas = np.array([0.2, 0.1, 0.05, 0.025])
        slope, intercept, excluded = fit_loglog_slope(alphas,
                                                      3.0 * alphas ** 2)
        assert slope == pytest.approx(2.0, abs=1e-9)
        assert intercept == pytest.approx(math.log(3.0), abs=1e-9)
        assert excluded == ()

    def test_zeros_are_excluded_from_the_fit(self):
        slope, _, excluded = fit_loglog_slope([0.2, 0.1, 0.05],
                                              [0.04, 0.01, 0.0])
        assert excluded == (2,)
        assert slope == pytest.approx(2.0, abs=1e-9)

    def test_fewer_than_two_points_gives_nan(self):
        slope, intercept, excluded = fit_loglog_slope([0.2, 0.1],
                                                      [0.0, 1e-15])
        assert math.isnan(slope) and math.isnan(intercept)
        assert excluded == (0, 1)


class TestRateStudy:
    def test_constant_loss_has_no_error_anywhere(self):
        flat = quadratic_loss(0.0, 0.0, 3.0)
        space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                                grid_points_per_dim=11, norm=EUCLID)
        mu = EmpiricalMeasure(space.grid()[[1, 5, 9]])
        report = approximation_rate_study(flat, mu, space, 2.0,
                                          [0.2, 0.1, 0.05])
        assert report.excluded == (0, 1, 2)
        assert math.isnan(report.fitted_slope)
        for pt in report.points:
            assert pt.exact == pytest.approx(3.0, abs=1e-9)
            assert pt.estimate == 3.0
            assert pt.beta == 0.0

    def test_surrogate_beats_plain_risk(self):
        loss, _, _ = _tanh_instance()
        space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                                grid_points_per_dim=1001, norm=EUCLID)
        mu = EmpiricalMeasure(space.grid()[[80, 240, 360, 460, 620, 740]])
        alphas = [0.2, 0.1, 0.05]
        sur = approximation_rate_study(loss, mu, space, 4.0, alphas,
                                       mode="surrogate")
        plain = approximation_rate_study(loss, mu, space, 4.0, alphas,
                                         mode="plain")
        assert sur.fitted_slope > plain.fitted_slope + 0.5
        assert 0.8 < plain.fitted_slope < 1.4
        for s_pt, p_pt in zip(sur.points, plain.points):
            assert s_pt.error < p_pt.error
            assert s_pt.exact == p_pt.exact

    def test_perturbed_rows_record_their_budget(self):
        loss, _, _ = _tanh_instance()
        space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                                grid_points_per_dim=201, norm=EUCLID)
        mu = EmpiricalMeasure(space.grid()[[20, 60, 120, 180]])
        alphas = [0.2, 0.1]
        rng = np.random.default_rng(0)
        perturbed = [
            mixup_perturb(mu, MixupConfig(gamma_floor=1 - a ** 2), rng,
                          EUCLID)
            for a in alphas
        ]
        report = approximation_rate_study(loss, mu, space, 4.0, alphas,
                                          perturbed=perturbed)
        for pt, pm in zip(report.points, perturbed):
            assert pt.beta == pm.displacement_bound
        # moved points change the estimate relative to the clean surrogate
        clean = approximation_rate_study(loss, mu, space, 4.0, alphas)
        assert report.points[0].estimate != clean.points[0].estimate

    def test_estimate_columns_match_direct_evaluation(self):
        loss, space, mu = _tanh_instance(grid_points=101)
        report = approximation_rate_study(loss, mu, space, 2.0, [0.1])
        from wdro.geometry import HolderPair
        cfg = SurrogateConfig(alpha=0.1, order=HolderPair.from_order(2.0),
                              norm=EUCLID)
        assert report.points[0].estimate == surrogate_risk(loss, mu, cfg)

    def test_validation(self):
        loss, space, mu = _tanh_instance(grid_points=21)
        with pytest.raises(ValueError, match="unknown mode"):
            approximation_rate_study(loss, mu, space, 2.0, [0.1],
                                     mode="secret")
        with pytest.raises(ValueError, match="positive"):
            approximation_rate_study(loss, mu, space, 2.0, [0.1, 0.0])
        with pytest.raises(ValueError, match="per radius"):
            approximation_rate_study(loss, mu, space, 2.0, [0.1],
                                     perturbed=[])
