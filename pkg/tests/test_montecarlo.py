import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roci import fp
from roci.errors import ValidationError
from roci.inference import analyze, rr_delta
from roci.montecarlo import (
    MCConfig, SelectionCounts, allocate, performance, replicate_rng, run_replicates, simulate_dataset,
)
from roci.trial import Margin, Scenario, flat_scenario, make_arm_grid, margin_scenarios

GRID5 = make_arm_grid([6, 9, 12, 15, 18])
MARGIN = Margin(0.88, 0.05)
FLAT = flat_scenario(GRID5, 0.65)


class TestSimulateDataset:
    def test_equal_split(self):
        assert list(allocate(1750, GRID5)) == [350] * 5

    def test_remainder_near_control(self):
        assert list(allocate(1752, GRID5)) == [351, 351, 350, 350, 350]
        g = make_arm_grid([6, 9, 12, 15, 18], 4, "prefer_low")
        assert list(allocate(1753, g)) == [350, 350, 351, 351, 351]

    def test_too_small(self):
        with pytest.raises(ValidationError):
            allocate(4, GRID5)

    def test_near_zero_rate(self):
        s = Scenario("tiny", (1e-12,) * 5)
        d = simulate_dataset(s, GRID5, 1000, replicate_rng(1, "tiny", 1000, 0))
        assert sum(d.events) == 0

    def test_repeatable(self):
        a = simulate_dataset(FLAT, GRID5, 1750, replicate_rng(9, "flat", 1750, 3))
        b = simulate_dataset(FLAT, GRID5, 1750, replicate_rng(9, "flat", 1750, 3))
        c = simulate_dataset(FLAT, GRID5, 1750, replicate_rng(9, "flat", 1750, 4))
        assert a == b and a != c


class TestRunReplicates:
    def test_single(self):
        c = run_replicates(FLAT, GRID5, 500, MARGIN, MCConfig(nsim=1))
        assert c.nsim == 1

    def test_matches_per_replicate_analysis(self):
        mc = MCConfig(nsim=60, master_seed=3)
        counts = run_replicates(FLAT, GRID5, 600, MARGIN, mc)
        manual = np.zeros(5, int)
        for r in range(60):
            d = simulate_dataset(FLAT, GRID5, 600, replicate_rng(3, "flat", 600, r))
            manual[analyze(d, MARGIN, "delta").decision.selected_index] += 1
        assert list(counts.counts) == list(manual)

    def test_bootstrap_matches_per_replicate_analysis(self):
        from roci.inference import bootstrap_bounds, decide

        mc = MCConfig(nsim=6, method="bootstrap", B=100, master_seed=4)
        counts = run_replicates(FLAT, GRID5, 600, MARGIN, mc)
        manual = np.zeros(5, int)
        for r in range(6):
            g = replicate_rng(4, "flat", 600, r)
            d = simulate_dataset(FLAT, GRID5, 600, g)
            infs = bootstrap_bounds(d, 100, 0.05, seed=g)
            manual[decide(infs, GRID5, MARGIN).selected_index] += 1
        assert list(counts.counts) == list(manual)

    def test_workers_do_not_change_counts(self):
        mc = MCConfig(nsim=600, master_seed=11)
        a = run_replicates(FLAT, GRID5, 1000, MARGIN, mc, workers=1)
        b = run_replicates(FLAT, GRID5, 1000, MARGIN, mc, workers=2)
        assert a == b

    def test_all_failures_counted_as_control(self):
        s = Scenario("tiny", (1e-12,) * 5)
        c = run_replicates(s, GRID5, 500, MARGIN, MCConfig(nsim=5))
        assert c.counts[0] == 5 and c.failures == 5

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            MCConfig(allocation="unequal")
        with pytest.raises(ValidationError):
            MCConfig(method="bootstrap", B=50)
        with pytest.raises(ValidationError):
            MCConfig(nsim=0)


class TestPerformance:
    def test_all_on_far_arm(self):
        r = performance(SelectionCounts("flat", 1750, (0, 0, 0, 0, 100), 0), FLAT, GRID5, MARGIN)
        assert r.optimal_power.value == 1 and r.acceptable_power.value == 1 and r.type1_error.value == 0

    def test_all_on_control(self):
        s = margin_scenarios(GRID5, 0.65, 0.88, 4)[2]
        r = performance(SelectionCounts(s.name, 1750, (100, 0, 0, 0, 0), 0), s, GRID5, MARGIN)
        assert r.optimal_power.value == 0 and r.acceptable_power.value == 0 and r.type1_error.value == 0

    def test_mc_interval(self):
        r = performance(SelectionCounts("flat", 1750, (10, 10, 10, 10, 160), 0), FLAT, GRID5, MARGIN)
        p = 0.8
        half = 1.96 * np.sqrt(p * (1 - p) / 200)
        assert r.optimal_power.lo == pytest.approx(p - half) and r.optimal_power.hi == pytest.approx(p + half)

    def test_nsim_floor(self):
        with pytest.raises(ValidationError):
            performance(SelectionCounts("flat", 1750, (0, 0, 0, 0, 10), 0), FLAT, GRID5, MARGIN)

    @settings(max_examples=50)
    @given(st.lists(st.integers(0, 400), min_size=5, max_size=5).filter(lambda c: sum(c) >= 100), st.integers(0, 4))
    def test_identities(self, counts, which):
        scs = [FLAT] + margin_scenarios(GRID5, 0.65, 0.88, 4)
        s = scs[which]
        r = performance(SelectionCounts(s.name, 1000, tuple(counts), 0), s, GRID5, MARGIN)
        n = sum(counts)
        assert abs(sum(r.selection_dist) - 1) < 1e-12
        non_opt_acc = sum(counts[i] for i in range(1, 5) if i != r.optimal_index and s.true_rr(GRID5)[i] > 0.88 + 1e-12) / n
        assert r.optimal_power.value + non_opt_acc == pytest.approx(r.acceptable_power.value, abs=1e-12)
        assert r.type1_error.value + r.acceptable_power.value + r.control_share == pytest.approx(1.0, abs=1e-12)
        if s is FLAT:
            assert r.type1_error.value == 0
        assert r.intermediate_powers[1] == pytest.approx(1 - r.control_share)
        assert all(r.intermediate_powers[k] >= r.intermediate_powers[k + 1] for k in range(1, 4))


@pytest.mark.slow
def test_self_consistency_against_statsmodels():
    """Same simulated trials analysed by an independent GLM implementation."""
    sm = pytest.importorskip("statsmodels.api")
    from scipy.stats import norm

    nsim, N, seed = 1000, 1750, 77
    counts = run_replicates(FLAT, GRID5, N, MARGIN, MCConfig(nsim=nsim, master_seed=seed))
    z = norm.ppf(0.95)
    hits = 0
    for r in range(nsim):
        d = simulate_dataset(FLAT, GRID5, N, replicate_rng(seed, "flat", N, r))
        endog = np.column_stack([d.events, np.subtract(d.n, d.events)])
        best = None
        for powers in fp.enumerate_fp2():
            X = fp.design_matrix(GRID5.x, powers, 18.0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = sm.GLM(endog, X, family=sm.families.Binomial()).fit(tol=1e-12)
            if best is None or res.deviance < best[0] - 1e-9:
                best = (res.deviance, X, res)
        _, X, res = best
        pi = res.predict(X)
        g = (1 - pi[4]) * X[4] - (1 - pi[0]) * X[0]
        se = np.sqrt(g @ res.cov_params() @ g)
        lb = np.exp(np.log(pi[4] / pi[0]) - z * se)
        hits += lb > 0.88
    ours = counts.counts[4] / nsim
    assert abs(ours - hits / nsim) <= 0.03
