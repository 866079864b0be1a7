import itertools
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest


# ==================== Fixtures ====================

@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as td:
        yield Path(td)


@pytest.fixture
def low_prior():
    """Three bidders, optimum below welfare."""
    from calsig.core.prior import PriorBySum
    return PriorBySum(n=3, lam=(0.1, 0.4, 0.4, 0.1))


@pytest.fixture
def high_prior():
    """Three bidders, optimum above welfare."""
    from calsig.core.prior import PriorBySum
    return PriorBySum(n=3, lam=(0.1, 0.1, 0.1, 0.7))


@pytest.fixture
def two_bidders():
    from calsig.core.prior import PriorBySum
    return PriorBySum(n=2, lam=(0.25, 0.5, 0.25))


@pytest.fixture
def worked_pair():
    """k = 2, n = 4 marginal pair with threshold 0.8."""
    from calsig.core.marginals import DiscreteDist
    f1 = DiscreteDist.from_atoms([(1.0, 0.4), (0.8, 0.4), (0.2, 0.2)])
    f0 = DiscreteDist.from_atoms([(0.8, 0.2), (0.2, 0.2), (0.0, 0.6)])
    return f1, f0


@pytest.fixture
def lone_pair():
    """k = 1, n = 4 marginal pair."""
    from calsig.core.marginals import DiscreteDist
    f11 = DiscreteDist.from_atoms([(1.0, 0.5), (0.8, 0.5)])
    f10 = DiscreteDist.from_atoms([(0.2, 0.2), (0.0, 0.8)])
    return f11, f10


def random_prior(rng, n_min=2, n_max=6):
    """Strictly positive lambda, so every construction is defined."""
    from calsig.core.prior import PriorBySum
    n = int(rng.integers(n_min, n_max + 1))
    lam = rng.dirichlet(np.ones(n + 1))
    lam = np.maximum(lam, 1e-3)
    return PriorBySum(n=n, lam=tuple(float(x) for x in lam / lam.sum()))


def random_dist(rng, grid=np.round(np.linspace(0.0, 1.0, 11), 1)):
    from calsig.core.marginals import DiscreteDist
    support = rng.choice(grid, size=int(rng.integers(1, 4)), replace=False)
    return DiscreteDist.from_atoms(zip(support, rng.dirichlet(np.ones(len(support)))))


def served_by_profile(sig, rng=None):
    """Profile-by-profile form of a class-plan signaling; rng shuffles seats within each side."""
    n = sig.n
    raw = {}
    for o in itertools.product((0, 1), repeat=n):
        ones = [i for i in range(n) if o[i] == 1]
        zeros = [i for i in range(n) if o[i] == 0]
        if rng is not None:
            rng.shuffle(ones)
            rng.shuffle(zeros)
        seats = ones + zeros
        rows = []
        for bids, w in sig.plans[len(ones)].rows:
            y = [0.0] * n
            for j, i in enumerate(seats):
                y[i] = bids[j]
            rows.append((tuple(y), w))
        raw[o] = rows
    return raw


# ==================== Prior Tests ====================

class TestPrior:
    """Test symmetric priors."""

    def test_bernoulli_is_binomial(self):
        from calsig.core.prior import from_bernoulli

        prior = from_bernoulli(3, 0.5)
        assert prior.lam == pytest.approx((0.125, 0.375, 0.375, 0.125))

    def test_rejects_bad_lambda(self):
        from calsig.core.checks import InvalidInputError
        from calsig.core.prior import PriorBySum

        with pytest.raises(InvalidInputError):
            PriorBySum(n=3, lam=(0.5, 0.5, 0.5, 0.5))
        with pytest.raises(InvalidInputError):
            PriorBySum(n=3, lam=(0.5, 0.5))
        with pytest.raises(InvalidInputError):
            PriorBySum(n=1, lam=(0.5, 0.5))
        with pytest.raises(InvalidInputError):
            PriorBySum(n=2, lam=(1.2, -0.2, 0.0))

    def test_welfare_and_full_info(self, low_prior):
        from calsig.core.prior import full_info_revenue, profile_weight, welfare

        assert welfare(low_prior) == pytest.approx(0.9)
        assert full_info_revenue(low_prior) == pytest.approx(0.5)
        assert profile_weight(low_prior, 1) == pytest.approx(0.4 / 3)

    def test_from_mapping(self):
        from calsig.core.checks import InvalidInputError
        from calsig.core.prior import from_mapping

        prior = from_mapping({"bernoulli": {"n": 4, "p": 0.3}})
        assert prior.n == 4
        assert sum(prior.lam) == pytest.approx(1.0)

        prior = from_mapping({"n": 2, "lambda": [0.25, 0.5, 0.25]})
        assert prior[1] == 0.5

        with pytest.raises(InvalidInputError):
            from_mapping({"n": 2})


# ==================== Marginal Tests ====================

class TestMarginals:
    """Test marginals, thresholds and calibration feasibility."""

    def test_from_atoms_merges(self):
        from calsig.core.marginals import DiscreteDist

        d = DiscreteDist.from_atoms([(0.5, 0.25), (0.5 + 1e-14, 0.25), (1.0, 0.5), (0.2, 0.0)])
        assert d.support == (0.5, 1.0)
        assert d.probs == pytest.approx((0.5, 0.5))
        assert d.mean() == pytest.approx(0.75)

    def test_worked_threshold(self, worked_pair):
        from calsig.core.marginals import min_secmax

        f1, f0 = worked_pair
        assert min_secmax(2, f1, f0, 4) == pytest.approx(0.8)

    def test_closed_form_thresholds(self, low_prior):
        from calsig.core.marginals import optimal_thresholds, solve_linsys

        sol = solve_linsys(low_prior)
        assert sol.x_star == pytest.approx(0.012676, abs=1e-6)
        assert sol.x_star + sol.y_star == pytest.approx(0.1, abs=1e-12)

        th = optimal_thresholds(low_prior)
        assert th.t1 == pytest.approx(0.50780, abs=1e-5)
        assert th.t0 == pytest.approx(0.30392, abs=1e-5)
        assert th.t0 <= th.t1

    def test_linsys_split_caps(self):
        from calsig.core.marginals import SplitOrder, solve_linsys, split_linsys
        from calsig.core.prior import from_bernoulli

        prior = from_bernoulli(20, 0.3)
        sol = solve_linsys(prior)
        big_a = sum((k - 2) * prior[k] for k in range(2, 21))
        assert sol.x_star + sol.y_star == pytest.approx(big_a, abs=1e-9)
        for order in SplitOrder:
            split = split_linsys(prior, sol.x_star, order)
            for k in range(2, 21):
                assert split.a[k] + split.b[k] == pytest.approx((k - 2) / k)
                assert split.a[k] >= 0.0 and split.b[k] >= 0.0
            assert split.b[20] > 0.0

    def test_degenerate_priors(self):
        from calsig.core.checks import DegenerateInputError
        from calsig.core.marginals import solve_linsys
        from calsig.core.prior import PriorBySum

        with pytest.raises(DegenerateInputError):
            solve_linsys(PriorBySum(n=3, lam=(0.5, 0.5, 0.0, 0.0)))

        sol = solve_linsys(PriorBySum(n=3, lam=(0.0, 0.0, 0.5, 0.5)))
        assert sol.x_star == pytest.approx(0.5)
        assert sol.y_star == pytest.approx(0.0)
        assert any("lambda_0 = lambda_1 = 0" in f for f in sol.flags)

    def test_optimal_family_is_calibrated(self, low_prior):
        from calsig.core.marginals import check_calibration_feasible, optimal_marginals

        fam = optimal_marginals(low_prior)
        report = check_calibration_feasible(low_prior, fam)
        assert report.feasible
        assert report.offending_value is None
        assert set(fam.values()) <= {0.0, fam.f1[1].support[0], fam.f0[0].support[-1], 1.0}
        assert fam.f1[3].mass_at(1.0) == pytest.approx(2 / 3)

    def test_calibration_violation_reported(self, two_bidders):
        from calsig.core.marginals import DiscreteDist, MarginalFamily, check_calibration_feasible

        fam = MarginalFamily(
            n=2,
            f1={1: DiscreteDist.point(0.9), 2: DiscreteDist.point(1.0)},
            f0={0: DiscreteDist.point(0.0), 1: DiscreteDist.point(0.9)},
        )
        report = check_calibration_feasible(two_bidders, fam)
        assert not report.feasible
        assert report.offending_value == pytest.approx(0.9)
        assert any(v.rule_id == "CAL-001" for v in report.violations)

    def test_family_round_trip(self, low_prior):
        from calsig.core.marginals import MarginalFamily, optimal_marginals

        fam = optimal_marginals(low_prior)
        again = MarginalFamily.from_dict(fam.to_dict())
        for k in fam.f1:
            assert again.f1[k].distance(fam.f1[k]) == 0.0


# ==================== LP Tests ====================

class TestLinearProgramming:
    """Test both LP back ends."""

    @pytest.mark.parametrize("method", ["simplex", "highs"])
    def test_small_lp(self, method):
        from calsig.solvers.lp import LpMethod, solve_lp

        res = solve_lp(
            np.array([1.0, 1.0]),
            A_ub=np.array([[1.0, 2.0], [3.0, 1.0]]),
            b_ub=np.array([4.0, 6.0]),
            method=LpMethod(method),
            maximize=True,
        )
        assert res.objective == pytest.approx(2.8)
        assert res.x == pytest.approx([1.6, 1.2])

    def test_infeasible(self):
        from calsig.core.checks import InfeasibleError
        from calsig.solvers.lp import solve_lp

        with pytest.raises(InfeasibleError):
            solve_lp(
                np.array([1.0]),
                A_ub=np.array([[1.0], [-1.0]]),
                b_ub=np.array([1.0, -2.0]),
            )

    def test_unbounded(self):
        from calsig.core.checks import UnboundedError
        from calsig.solvers.lp import solve_lp

        with pytest.raises(UnboundedError):
            solve_lp(np.array([1.0]), A_eq=np.zeros((0, 1)), b_eq=np.zeros(0), maximize=True)

    def test_equality_rows(self):
        from calsig.solvers.lp import solve_lp

        res = solve_lp(
            np.array([1.0, 2.0, 0.0]),
            A_eq=np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]),
            b_eq=np.array([1.0, 1.0]),
        )
        assert res.objective == pytest.approx(0.0)
        assert res.x.sum() == pytest.approx(1.0)


# ==================== Transport Tests ====================

class TestTransport:
    """Test revenue-maximising couplings."""

    def test_worked_coupling(self, worked_pair):
        from calsig.core.transport import (
            check_plan_feasible,
            correlate_general,
            induced_secmax,
            secmax_upper_bound,
        )

        f1, f0 = worked_pair
        plan = correlate_general(2, f1, f0, 4)
        assert plan.expected_secmax() == pytest.approx(0.88)
        assert secmax_upper_bound(2, f1, f0, 4) == pytest.approx(0.88)
        assert check_plan_feasible(plan, 2, f1, f0).passed

        rows = {bids: w for bids, w in plan.rows}
        assert rows[(1.0, 1.0, 0.0, 0.0)] == pytest.approx(0.4)
        assert rows[(0.2, 0.2, 0.8, 0.8)] == pytest.approx(0.2)
        assert rows[(0.8, 0.8, 0.0, 0.0)] == pytest.approx(0.2)
        assert rows[(0.8, 0.8, 0.2, 0.2)] == pytest.approx(0.2)

        phi = induced_secmax(plan)
        assert phi.mass_at(1.0) == pytest.approx(0.4)
        assert phi.mass_at(0.8) == pytest.approx(0.6)

    def test_general_rejects_lone_bidder(self, worked_pair):
        from calsig.core.checks import InvalidInputError
        from calsig.core.transport import correlate_general

        f1, f0 = worked_pair
        with pytest.raises(InvalidInputError):
            correlate_general(1, f1, f0, 4)
        with pytest.raises(InvalidInputError):
            correlate_general(3, f1, f0, 4)

    def test_point_marginal(self):
        from calsig.core.marginals import DiscreteDist
        from calsig.core.transport import correlate, induced_secmax

        f0 = DiscreteDist.from_atoms([(0.3, 2 / 3), (0.0, 1 / 3)])
        plan = correlate(0, None, f0, 3)
        assert induced_secmax(plan).is_point(0.3)

    def test_k1_lp_value(self, lone_pair):
        from calsig.core.transport import correlate_k1_lp

        f11, f10 = lone_pair
        sol = correlate_k1_lp(f11, f10, 4)
        assert sol.value == pytest.approx(0.12)
        assert sol.monotone

    def test_k1_plan(self, lone_pair):
        from calsig.core.transport import check_plan_feasible, correlate
        from calsig.execution.oracle import brute_force_transport

        f11, f10 = lone_pair
        plan = correlate(1, f11, f10, 4)
        assert plan.expected_secmax() == pytest.approx(0.12)
        assert check_plan_feasible(plan, 1, f11, f10).passed
        assert brute_force_transport(1, f11, f10, 4) == pytest.approx(0.12, abs=1e-7)

    def test_k1_backends_agree(self, lone_pair):
        from calsig.core.transport import correlate_k1_lp
        from calsig.solvers.lp import LpMethod

        f11, f10 = lone_pair
        a = correlate_k1_lp(f11, f10, 4, method=LpMethod.SIMPLEX)
        b = correlate_k1_lp(f11, f10, 4, method=LpMethod.HIGHS)
        assert a.value == pytest.approx(b.value, abs=1e-9)

    def test_general_matches_brute_force(self):
        """Random marginal pairs with k away from 1 and n-1."""
        from calsig.core.marginals import DiscreteDist
        from calsig.core.transport import check_plan_feasible, correlate_general, secmax_upper_bound
        from calsig.execution.oracle import brute_force_transport

        rng = np.random.default_rng(2024)
        grid = np.round(np.linspace(0.0, 1.0, 11), 1)
        for _ in range(20):
            n = int(rng.integers(4, 6))
            k = int(rng.integers(2, n - 1)) if rng.random() < 0.8 else int(rng.choice([0, n]))

            def draw():
                support = rng.choice(grid, size=int(rng.integers(1, 4)), replace=False)
                return DiscreteDist.from_atoms(zip(support, rng.dirichlet(np.ones(len(support)))))

            f1 = draw() if k >= 1 else None
            f0 = draw() if k <= n - 1 else None
            plan = correlate_general(k, f1, f0, n)
            assert check_plan_feasible(plan, k, f1, f0).passed
            value = plan.expected_secmax()
            assert value == pytest.approx(secmax_upper_bound(k, f1, f0, n), abs=1e-9)
            assert value == pytest.approx(brute_force_transport(k, f1, f0, n), abs=1e-7)

    def test_last_class_flipped(self):
        from calsig.core.marginals import DiscreteDist
        from calsig.core.transport import check_plan_feasible, correlate
        from calsig.execution.oracle import brute_force_transport

        f1 = DiscreteDist.from_atoms([(1.0, 0.5), (0.6, 0.5)])
        f0 = DiscreteDist.from_atoms([(0.6, 0.5), (0.0, 0.5)])
        plan = correlate(3, f1, f0, 4)
        assert check_plan_feasible(plan, 3, f1, f0).passed
        assert plan.expected_secmax() == pytest.approx(
            brute_force_transport(3, f1, f0, 4), abs=1e-7
        )

    @pytest.mark.parametrize("lone", ["one_click", "one_miss"])
    def test_lone_bidder_classes_match_brute_force(self, lone):
        """k = 1 through the LP and k = n-1 through the reduction or the exchanged LP."""
        from calsig.core.transport import check_plan_feasible, correlate
        from calsig.execution.oracle import brute_force_transport

        rng = np.random.default_rng(7 if lone == "one_click" else 8)
        for _ in range(100):
            n = int(rng.integers(3, 6))
            k = 1 if lone == "one_click" else n - 1
            f1, f0 = random_dist(rng), random_dist(rng)
            plan = correlate(k, f1, f0, n)
            assert check_plan_feasible(plan, k, f1, f0).passed
            assert plan.expected_secmax() == pytest.approx(
                brute_force_transport(k, f1, f0, n), abs=1e-7
            )

    def test_plan_check_flags_bad_weights(self, worked_pair):
        from calsig.core.transport import TransportPlan, check_plan_feasible

        f1, f0 = worked_pair
        plan = TransportPlan(n=4, k=2, rows=[((1.0, 1.0, 0.0, 0.0), 0.5)])
        report = check_plan_feasible(plan, 2, f1, f0)
        assert not report.passed
        ids = {v.rule_id for v in report.violations}
        assert "PLAN-001" in ids and "PLAN-004" in ids


# ==================== Signaling Tests ====================

class TestSignaling:
    """Test optimal, full-information and symmetrized signalings."""

    def test_two_bidder_optimum(self, two_bidders):
        from calsig.core.signaling import design_optimal, full_information, revenue

        sig = design_optimal(two_bidders)
        assert revenue(sig) == pytest.approx(0.5)
        assert sig.meta.t1 == pytest.approx(0.5)
        assert revenue(full_information(two_bidders)) == pytest.approx(0.25)

    def test_optimal_revenue_and_calibration(self, low_prior):
        from calsig.core.signaling import (
            classify_region,
            conditional_secmax,
            design_optimal,
            optimal_revenue,
            revenue,
            verify_calibration,
        )

        sig = design_optimal(low_prior)
        assert revenue(sig) == pytest.approx(0.73351, abs=1e-5)
        assert revenue(sig) == pytest.approx(optimal_revenue(low_prior), abs=1e-9)
        assert verify_calibration(sig).passed
        assert conditional_secmax(sig, 2).is_point(1.0)
        assert conditional_secmax(sig, 1).is_point(sig.meta.t1)
        assert conditional_secmax(sig, 0).is_point(sig.meta.t0)

        region = classify_region(low_prior)
        assert region.region == 1
        assert region.surplus_sign == -1

    def test_revenue_above_welfare(self, high_prior):
        from calsig.core.ir import bidder_surplus
        from calsig.core.prior import welfare
        from calsig.core.signaling import classify_region, design_optimal, revenue

        region = classify_region(high_prior)
        assert region.t1 == pytest.approx(0.78053, abs=1e-5)
        assert region.t0 == pytest.approx(0.68961, abs=1e-5)
        assert region.boundary == pytest.approx(0.21947, abs=1e-5)
        assert region.region == 2
        assert region.surplus_sign == 1

        sig = design_optimal(high_prior)
        assert revenue(sig) > welfare(high_prior)
        assert bidder_surplus(sig) < 0.0

    def test_optimum_beats_full_information(self):
        from calsig.core.prior import from_bernoulli
        from calsig.core.signaling import design_optimal, full_information, revenue

        for p in (0.1, 0.3, 0.5):
            prior = from_bernoulli(5, p)
            assert revenue(design_optimal(prior)) >= revenue(full_information(prior)) - 1e-12

    @pytest.mark.parametrize("lam", [(0.0, 0.0, 1.0), (0.0, 0.0, 0.0, 1.0), (0.0, 0.0, 0.5, 0.5)])
    def test_two_click_priors(self, lam):
        from calsig.core.prior import PriorBySum
        from calsig.core.signaling import design_optimal, revenue, verify_calibration

        prior = PriorBySum(n=len(lam) - 1, lam=lam)
        sig = design_optimal(prior)
        assert revenue(sig) == pytest.approx(1.0)
        assert verify_calibration(sig).passed
        assert any("lambda_0 = lambda_1 = 0" in f for f in sig.meta.flags)
        for k, plan in sig.plans.items():
            if prior[k] > 0.0:
                for bids, _ in plan.rows:
                    assert bids == (1.0,) * k + (0.0,) * (prior.n - k)

    def test_random_priors_calibrated(self):
        from calsig.core.signaling import (
            design_optimal,
            optimal_revenue,
            revenue,
            verify_calibration,
        )

        rng = np.random.default_rng(11)
        for _ in range(100):
            prior = random_prior(rng)
            sig = design_optimal(prior)
            assert verify_calibration(sig).passed
            assert revenue(sig) == pytest.approx(optimal_revenue(prior), abs=1e-9)

    def test_region_matches_surplus_sign(self):
        from calsig.core.signaling import classify_region

        rng = np.random.default_rng(12)
        for _ in range(500):
            report = classify_region(random_prior(rng, 2, 10))
            gap = report.revenue - report.welfare
            if abs(gap) < 1e-10:
                continue
            assert (report.region == 2) == (gap > 0.0)
            assert report.surplus_sign == (1 if gap > 0.0 else -1)

    def test_full_information_utility(self, low_prior):
        from calsig.core.ir import exante_utility
        from calsig.core.signaling import full_information, verify_calibration

        sig = full_information(low_prior)
        assert verify_calibration(sig).passed
        assert exante_utility(sig).common == pytest.approx(0.4 / 3)

    def test_symmetrize(self, two_bidders):
        from calsig.core.marginals import check_calibration_feasible
        from calsig.core.signaling import raw_revenue, revenue, symmetrize, verify_calibration

        raw = {
            (0, 0): [((0.0, 0.0), 1.0)],
            (1, 0): [((0.6, 0.0), 0.5), ((1.0, 5 / 7), 0.5)],
            (0, 1): [((0.6, 1.0), 0.5), ((0.0, 5 / 7), 0.5)],
            (1, 1): [((0.6, 1.0), 0.25), ((1.0, 5 / 7), 0.75)],
        }
        sig = symmetrize(raw, two_bidders)
        fam = sig.meta.family
        assert fam.f1[1].mass_at(0.6) == pytest.approx(0.25)
        assert fam.f1[1].mass_at(5 / 7) == pytest.approx(0.25)
        assert fam.f1[1].mass_at(1.0) == pytest.approx(0.5)
        assert fam.f0[1].mass_at(0.0) == pytest.approx(0.5)
        assert fam.f1[2].mass_at(0.6) == pytest.approx(0.125)
        assert fam.f1[2].mass_at(5 / 7) == pytest.approx(0.375)
        assert fam.f0[0].is_point(0.0)

        assert check_calibration_feasible(two_bidders, fam).feasible
        assert verify_calibration(sig).passed
        assert revenue(sig) == pytest.approx(raw_revenue(raw, two_bidders))

    def test_symmetrize_random(self):
        from calsig.core.signaling import (
            design_optimal,
            raw_revenue,
            revenue,
            symmetrize,
            verify_calibration,
        )

        rng = np.random.default_rng(13)
        for _ in range(20):
            prior = random_prior(rng, 2, 4)
            sig = design_optimal(prior)
            raw = served_by_profile(sig, rng)
            once = symmetrize(raw, prior)
            assert revenue(once) == pytest.approx(raw_revenue(raw, prior), abs=1e-10)
            assert revenue(once) == pytest.approx(revenue(sig), abs=1e-10)
            assert verify_calibration(once).passed

            twice = symmetrize(served_by_profile(once), prior)
            assert revenue(twice) == pytest.approx(revenue(once), abs=1e-10)
            for k in range(prior.n + 1):
                for a, b in zip(once.meta.family.pair(k), twice.meta.family.pair(k)):
                    if a is not None:
                        assert a.distance(b) <= 1e-12

    def test_uncalibrated_signaling_fails(self, two_bidders):
        from calsig.core.signaling import symmetrize, verify_calibration

        raw = {
            (0, 0): [((0.0, 0.0), 1.0)],
            (1, 0): [((0.9, 0.9), 1.0)],
            (0, 1): [((0.9, 0.9), 1.0)],
            (1, 1): [((1.0, 1.0), 1.0)],
        }
        report = verify_calibration(symmetrize(raw, two_bidders))
        assert not report.passed
        assert report.violations[0].rule_id == "CAL-002"

    def test_bundle_round_trip(self, low_prior, temp_dir):
        from calsig.core.artifacts import load_signaling, save_signaling
        from calsig.core.signaling import Variant, design_optimal, revenue

        sig = design_optimal(low_prior)
        path = save_signaling(temp_dir / "sig.json", sig)
        again = load_signaling(path)
        assert again.meta.variant == Variant.OPTIMAL
        assert again.meta.t1 == sig.meta.t1
        assert revenue(again) == pytest.approx(revenue(sig))
        assert again.meta.extra["convention"] == "appendix"

    def test_sampled_profiles_keep_classes(self, low_prior):
        from calsig.core.signaling import design_optimal, sample_profiles

        sig = design_optimal(low_prior)
        outcomes, bids = sample_profiles(sig, np.random.default_rng(3), 500)
        assert outcomes.shape == bids.shape == (500, 3)
        # bid 1 only ever goes to a bidder with outcome 1
        assert np.all(outcomes[bids == 1.0] == 1)
        assert np.all(outcomes[bids == 0.0] == 0)


# ==================== IR Tests ====================

class TestIndividuallyRational:
    """Test the individually rational construction."""

    def test_sequence(self, low_prior):
        from calsig.core.ir import serrated_sequence
        from calsig.core.marginals import optimal_thresholds

        seq = serrated_sequence(low_prior, 0.1)
        assert seq.M == 10
        assert len(seq.values) == 21
        assert np.all(np.diff(seq.values) > 0.0)
        assert seq.level(10) == 1.0
        assert not seq.shifted
        t1 = optimal_thresholds(low_prior).t1
        assert max(abs(t - t1) for t in seq.lower) <= 0.01 / (8 * 0.4) + 1e-12

    def test_epsilon_validation(self, low_prior):
        from calsig.core.checks import InvalidInputError
        from calsig.core.ir import design_ir, epsilon_bounds, max_valid_epsilon
        from calsig.core.signaling import verify_calibration

        # the shifted ladder binds before sqrt(lambda_1) = 0.632
        eps = max_valid_epsilon(low_prior)
        assert eps == pytest.approx(0.48217, abs=1e-4)
        assert set(epsilon_bounds(low_prior)) == {"sqrt(lambda_1)", "class-n bid-1 atom"}
        assert verify_calibration(design_ir(low_prior, eps), 1e-8).passed
        for bad in (0.6, 0.9, -0.1):
            with pytest.raises(InvalidInputError):
                design_ir(low_prior, bad)

    def test_two_bidder_shifted_ladder(self, two_bidders):
        from calsig.core.ir import design_ir, max_valid_epsilon
        from calsig.core.signaling import verify_calibration

        # n = 2 has c_star = 0, so every ladder is shifted
        eps = max_valid_epsilon(two_bidders)
        sig = design_ir(two_bidders, eps)
        assert sig.meta.family.sequence.shifted
        assert sig.meta.family.f1[2].mass_at(1.0) == pytest.approx(0.375)
        assert verify_calibration(sig, 1e-8).passed

    @pytest.mark.parametrize("fraction", [1.0, 0.99, 0.9])
    def test_max_valid_epsilon_is_valid(self, fraction):
        from calsig.core.ir import design_ir, exante_utility, max_valid_epsilon
        from calsig.core.prior import welfare
        from calsig.core.signaling import optimal_revenue, revenue, verify_calibration

        rng = np.random.default_rng(21)
        checked = 0
        for _ in range(60):
            prior = random_prior(rng, 2, 8)
            eps = fraction * max_valid_epsilon(prior)
            if eps < 0.01:
                continue
            sig = design_ir(prior, eps)
            assert verify_calibration(sig, 1e-8).passed
            rev = revenue(sig)
            if sig.meta.extra["region"] == 1:
                assert rev >= optimal_revenue(prior) - eps
            else:
                assert rev == pytest.approx(welfare(prior), abs=1e-9)
                assert abs(exante_utility(sig).common) <= 1e-9
            checked += 1
        assert checked >= 20

    def test_low_prior_design(self, low_prior):
        from calsig.core.ir import design_ir, exante_utility, ir_revenue, ir_revenue_floor
        from calsig.core.prior import welfare
        from calsig.core.signaling import Variant, optimal_revenue, revenue, verify_calibration

        sig = design_ir(low_prior, 0.1)
        assert sig.meta.variant == Variant.IR
        assert sig.meta.extra["region"] == 1
        assert verify_calibration(sig, 1e-8).passed
        assert len(sig.meta.family.f1[1].support) == 20

        rev = revenue(sig)
        assert rev == pytest.approx(ir_revenue(low_prior, 0.1), abs=1e-9)
        assert ir_revenue_floor(low_prior, 0.1) <= rev + 1e-12
        assert rev <= optimal_revenue(low_prior) + 1e-12
        assert rev <= welfare(low_prior)
        assert exante_utility(sig).common > 0.0

    def test_high_prior_design(self, high_prior):
        from calsig.core.ir import design_ir, exante_utility
        from calsig.core.prior import welfare
        from calsig.core.signaling import revenue, verify_calibration

        sig = design_ir(high_prior, 0.1)
        assert sig.meta.extra["region"] == 2
        assert verify_calibration(sig, 1e-8).passed
        assert revenue(sig) == pytest.approx(welfare(high_prior), abs=1e-9)
        assert exante_utility(sig).common >= -1e-9
        assert sig.meta.extra["t0_ir"] < sig.meta.t0

    def test_staircase_has_unique_winner(self, high_prior):
        from calsig.core.ir import design_ir

        sig = design_ir(high_prior, 0.1)
        for bids, w in sig.plans[1].rows:
            assert bids[0] > max(bids[1:])

    def test_plans_match_family(self, low_prior):
        from calsig.core.ir import design_ir
        from calsig.core.transport import check_plan_feasible

        sig = design_ir(low_prior, 0.1)
        fam = sig.meta.family
        for k, plan in sig.plans.items():
            f1, f0 = fam.pair(k)
            assert check_plan_feasible(plan, k, f1, f0).passed

    def test_floor_below_welfare(self):
        from calsig.core.ir import ir_revenue_floor
        from calsig.core.prior import from_bernoulli, welfare

        prior = from_bernoulli(20, 0.05)
        floor = ir_revenue_floor(prior, 1e-5)
        assert 0.0 < floor <= welfare(prior) + 1e-12


# ==================== Config Tests ====================

class TestConfig:
    """Test settings from environment and YAML."""

    def test_from_env(self, monkeypatch):
        from calsig.config import Settings
        from calsig.solvers.lp import LpMethod

        monkeypatch.setenv("CALSIG_THREADS", "3")
        monkeypatch.setenv("CALSIG_LP_METHOD", "HiGHS")
        monkeypatch.setenv("CALSIG_SEED", "11")
        settings = Settings.from_env()
        assert settings.threads == 3
        assert settings.lp_method == LpMethod.HIGHS
        assert settings.seed == 11

    def test_bad_env(self, monkeypatch):
        from calsig.config import Settings
        from calsig.core.checks import InvalidInputError

        monkeypatch.setenv("CALSIG_TOL", "tight")
        with pytest.raises(InvalidInputError):
            Settings.from_env()

    def test_yaml_overlay(self, temp_dir):
        from calsig.config import Settings
        from calsig.core.checks import InvalidInputError

        path = temp_dir / "settings.yaml"
        path.write_text("threads: 0\ntol: 1.0e-7\n")
        settings = Settings().load(path)
        assert settings.threads == 1
        assert settings.tol == 1e-7

        path.write_text("colour: blue\n")
        with pytest.raises(InvalidInputError):
            Settings().load(path)

    def test_library_logging_is_silent(self):
        import importlib

        from loguru import logger

        import calsig
        from calsig.core.marginals import solve_linsys
        from calsig.core.prior import PriorBySum

        importlib.reload(calsig)
        messages = []
        sink = logger.add(messages.append, level="DEBUG")
        try:
            solve_linsys(PriorBySum(n=2, lam=(0.0, 0.0, 1.0)))
            assert messages == []

            logger.enable("calsig")
            solve_linsys(PriorBySum(n=2, lam=(0.0, 0.0, 1.0)))
            assert any("degenerate split" in str(m) for m in messages)
        finally:
            logger.remove(sink)
            logger.disable("calsig")
