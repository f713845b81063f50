import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roci.errors import ValidationError
from roci.trial import (
    ArmGrid, EstimandSpec, Margin, Scenario, classify_arms, flat_scenario, make_arm_grid, margin_scenarios,
)


class TestArmGrid:
    def test_refine_grid(self, refine_grid):
        assert refine_grid.values == (6, 9, 12, 15, 18)
        assert refine_grid.control_value == 6
        assert refine_grid.far_index == 4

    def test_single_point_rejected(self):
        with pytest.raises(ValidationError, match="at least 2"):
            make_arm_grid([7], 0, "prefer_high")

    def test_duplicate_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            make_arm_grid([6, 9, 9, 12], 0, "prefer_high")

    def test_non_positive_rejected(self):
        with pytest.raises(ValidationError):
            make_arm_grid([0, 6, 9], 1, "prefer_high")

    def test_control_at_wrong_extreme_names_arm(self):
        with pytest.raises(ValidationError, match="control arm 12"):
            make_arm_grid([6, 9, 12], 2, "prefer_high")

    def test_prefer_low_control_is_max(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = make_arm_grid([14, 7, 10], 0, "prefer_low")
        assert g.values == (7, 10, 14)
        assert g.control_index == 2
        assert g.preference_order == (2, 1, 0)
        assert list(g.ranks) == [2, 1, 0]

    def test_unsorted_values_sorted(self):
        g = make_arm_grid([18, 6, 12, 9, 15], 1, "prefer_high")
        assert g.values == (6, 9, 12, 15, 18) and g.control_index == 0

    def test_few_arms_warns(self):
        with pytest.warns(UserWarning, match="fewer than the 5"):
            make_arm_grid([6, 12, 18], 0)

    def test_direct_constructor_rejects_unsorted(self):
        with pytest.raises(ValidationError):
            ArmGrid((9.0, 6.0, 12.0, 15.0, 18.0), 0)


class TestScenarios:
    def test_flat(self, refine_grid):
        assert flat_scenario(refine_grid, 0.65).probs == (0.65,) * 5

    def test_flat_two_arms(self, two_arm_grid):
        assert flat_scenario(two_arm_grid, 0.5).probs == (0.5, 0.5)

    @pytest.mark.parametrize("pi0", [0.0, 1.0, -0.1, 1.5])
    def test_flat_bounds(self, refine_grid, pi0):
        with pytest.raises(ValidationError):
            flat_scenario(refine_grid, pi0)

    def test_margin_family_far_arm_on_margin(self, refine_grid):
        scs = margin_scenarios(refine_grid, 0.65, 0.88, 4)
        assert len(scs) == 4
        for s in scs:
            assert s.probs[0] == 0.65
            assert s.probs[4] == pytest.approx(0.572, abs=1e-15)
            assert s.probs[4] == 0.88 * 0.65

    def test_margin_family_first_scenario_linear(self, refine_grid):
        # pi(x) = 0.65 + (x - 6) * (0.572 - 0.65) / (18 - 6)
        s = margin_scenarios(refine_grid, 0.65, 0.88, 4)[0]
        np.testing.assert_allclose(s.probs, [0.65, 0.6305, 0.611, 0.5915, 0.572], atol=1e-12)

    def test_margin_family_step(self, refine_grid):
        s = margin_scenarios(refine_grid, 0.65, 0.88, 4)[3]
        np.testing.assert_allclose(s.probs, [0.65, 0.65, 0.65, 0.65, 0.572], atol=1e-15)

    def test_margin_family_prefer_low(self):
        g = make_arm_grid([1, 2, 3, 4, 5], 4, "prefer_low")
        s = margin_scenarios(g, 0.8, 0.9, 2)[1]
        # plateau over 5 and 4, decline to 0.72 at x = 1
        np.testing.assert_allclose(s.probs, [0.72, 0.72 + (0.8 - 0.72) / 3, 0.72 + 2 * (0.8 - 0.72) / 3, 0.8, 0.8])

    def test_margin_family_validation(self, refine_grid):
        with pytest.raises(ValidationError):
            margin_scenarios(refine_grid, 0.65, 1.2, 2)
        with pytest.raises(ValidationError):
            margin_scenarios(refine_grid, 0.65, 0.88, 5)

    @given(st.floats(0.05, 0.95), st.floats(0.3, 0.99), st.integers(1, 4))
    def test_far_arm_exact_property(self, pi0, rr, count):
        g = make_arm_grid([6, 9, 12, 15, 18])
        for s in margin_scenarios(g, pi0, rr, count):
            assert s.probs[-1] == rr * pi0
            assert all(p <= pi0 + 1e-15 for p in s.probs)

    def test_scenario_probability_bounds(self):
        with pytest.raises(ValidationError):
            Scenario("bad", (0.5, 1.0))


class TestClassify:
    def test_flat(self, refine_grid, margin):
        c = classify_arms(flat_scenario(refine_grid, 0.65), refine_grid, margin)
        assert c.acceptable == {1, 2, 3, 4}
        assert not c.unacceptable
        assert c.optimal_index == 4

    def test_step_on_margin_unacceptable(self, refine_grid, margin):
        s = Scenario("step", (0.65, 0.65, 0.65, 0.65, 0.572))
        c = classify_arms(s, refine_grid, margin)
        assert c.unacceptable == {4}
        assert c.optimal_index == 3

    def test_low_arm(self, refine_grid, margin):
        s = Scenario("dip", (0.65, 0.5, 0.65, 0.65, 0.65))
        c = classify_arms(s, refine_grid, margin)
        assert 1 in c.unacceptable
        assert c.true_rr[1] == pytest.approx(0.769, abs=5e-4)

    def test_none_acceptable(self, refine_grid, margin):
        s = Scenario("bad", (0.65, 0.3, 0.3, 0.3, 0.3))
        assert classify_arms(s, refine_grid, margin).optimal_index == 0

    @given(st.lists(st.floats(0.01, 0.99), min_size=5, max_size=5), st.floats(0.5, 0.99))
    def test_partition_and_relabel_invariance(self, probs, rr):
        m = Margin(rr)
        g1 = make_arm_grid([6, 9, 12, 15, 18])
        g2 = make_arm_grid([1, 2, 3, 4, 5])
        s = Scenario("s", probs)
        c1, c2 = classify_arms(s, g1, m), classify_arms(s, g2, m)
        assert c1.acceptable == c2.acceptable and c1.optimal_index == c2.optimal_index
        assert c1.acceptable | c1.unacceptable == {1, 2, 3, 4}
        assert not c1.acceptable & c1.unacceptable
        assert s.true_rr(g1)[0] == 1.0


class TestMarginEstimand:
    @pytest.mark.parametrize("rr,alpha", [(1.0, 0.05), (0.0, 0.05), (0.88, 0.6), (0.88, 0.0)])
    def test_margin_bounds(self, rr, alpha):
        with pytest.raises(ValidationError):
            Margin(rr, alpha)

    def test_estimand_non_empty(self):
        with pytest.raises(ValidationError):
            EstimandSpec("", "pop", "var")
        e = EstimandSpec("t", "p", "v")
        assert e.intercurrent_handling == "treatment_policy"
