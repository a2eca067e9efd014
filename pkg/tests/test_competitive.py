import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rateless_avc.adversary import AdversarySpec, cr1_pair, s_hat_1, s_hat_2, worst_case, worst_regret
from rateless_avc.channel import Dmc, bsc, example_family, single_state_family
from rateless_avc.competitive import (
    Parametrization,
    PolicySearchSpace,
    SearchError,
    UpperBoundCase,
    fixed_set_ratios,
    maximize_upper_bound,
    optimize_cr,
    optimize_regret,
    reproduce_paper,
    rows_to_csv,
    upper_bound_fixed_sets,
    upper_bound_policy,
    value_grid,
)
from rateless_avc.stopping import StateProfile, optimal_stopping_time, ratio, stopping_time_fluid, symmetric_policy

COARSE = AdversarySpec.blocks(4, 1 / 8)


def sym_param(dist):
    return float(dist.probs[0] + dist.probs[1])


class TestGrids:
    def test_exact_thirds(self):
        g = value_grid(0, 1, 1 / 66)
        assert 2 / 3 in g and 10 / 33 in g and len(g) == 67

    def test_injection(self):
        g = value_grid(0, 1, 0.01, (1 / 3, 2 / 3))
        assert 1 / 3 in g and 2 / 3 in g and len(g) == 103

    def test_step_not_dividing_range(self):
        g = value_grid(1, 2, 0.3)
        assert g.tolist() == pytest.approx([1, 1.3, 1.6, 1.9, 2])

    def test_empty_space(self):
        with pytest.raises(SearchError):
            PolicySearchSpace(0, 0.1)
        with pytest.raises(SearchError):
            PolicySearchSpace(2, 0.1, p_ranges=((0, 1),))


class TestOptimizeCr:
    def test_single_law_blocks(self, fam):
        rep = optimize_cr(fam, PolicySearchSpace(1, 1 / 60), AdversarySpec.blocks(4, 1 / 16))
        assert rep.cr_lower == pytest.approx(1 / 3, abs=0.02)
        # every p in [1/3, 2/3] is worst-case optimal; the first one is reported
        assert 1 / 3 - 1e-9 <= sym_param(rep.best_policy.pieces[0].dist) <= 2 / 3 + 1e-9

    def test_single_law_two_sequences(self, fam):
        rep = optimize_cr(fam, PolicySearchSpace(1, 1 / 60), AdversarySpec.fixed(cr1_pair(fam)))
        assert abs(rep.cr_lower - 1 / 3) <= 1e-12

    @pytest.mark.slow
    def test_two_pieces_full_ranges(self, fam):
        rep = optimize_cr(fam, PolicySearchSpace(2, 1 / 66, 1 / 8), AdversarySpec.blocks(4, 1 / 16))
        assert rep.cr_lower >= 11 / 24 - 0.02
        p1 = sym_param(rep.best_policy.pieces[0].dist)
        p2 = sym_param(rep.best_policy.pieces[1].dist)
        assert abs(p1 - 10 / 33) <= 0.05 and abs(p2 - 2 / 3) <= 0.05
        assert abs(rep.best_policy.switch_times[0] - 1.5) <= 0.25
        assert rep.diagnostics["case_split"]["beta"] == pytest.approx(24 / 11, abs=1e-9)

    def test_single_state_capacity_achiever(self):
        fam1 = single_state_family(bsc(0.11).matrix)
        space = PolicySearchSpace(1, 0.1, parametrization=Parametrization.FULL_SIMPLEX)
        rep = optimize_cr(fam1, space, AdversarySpec.blocks(2, 1 / 4))
        assert rep.cr_lower == pytest.approx(1, abs=1e-9)
        assert np.allclose(rep.best_policy.pieces[0].dist.probs, [0.5, 0.5])

    def test_symmetric_needs_four_inputs(self):
        with pytest.raises(SearchError):
            optimize_cr(single_state_family(bsc(0.1).matrix), PolicySearchSpace(1, 0.1), COARSE)

    @pytest.mark.parametrize("space", [PolicySearchSpace(1, 1 / 20), PolicySearchSpace(2, 1 / 12, 1 / 4)])
    def test_report_matches_worst_case(self, fam, space):
        rep = optimize_cr(fam, space, COARSE)
        assert abs(rep.cr_lower - worst_case(fam, rep.best_policy, COARSE).ratio) <= 1e-12
        assert abs(rep.cr_lower - ratio(fam, rep.best_policy, rep.worst_witness)) <= 1e-12

    @pytest.mark.parametrize("objective", [optimize_cr, optimize_regret])
    def test_screening_equals_exhaustive(self, fam, objective):
        space = PolicySearchSpace(2, 1 / 12, 1 / 4, p_ranges=((0, 2 / 3), (0, 1)))
        adv = AdversarySpec.blocks(4, 1 / 16)
        a = objective(fam, space, adv)
        b = objective(fam, space, adv, exhaustive=True)
        assert a.diagnostics["best_index"] == b.diagnostics["best_index"]
        assert a.diagnostics["exact_evaluations"] < b.diagnostics["exact_evaluations"]
        for ra, rb in zip(a.rows, b.rows):
            if ra["exact"]:
                assert ra["value"] == rb["value"]
            else:
                # screened rows carry an optimistic bound
                assert (ra["value"] >= rb["value"] - 1e-12) if objective is optimize_cr else (ra["value"] <= rb["value"] + 1e-12)

    def test_more_pieces_never_worse(self, fam):
        one = optimize_cr(fam, PolicySearchSpace(1, 1 / 12), COARSE)
        two = optimize_cr(fam, PolicySearchSpace(2, 1 / 12, 1 / 4), COARSE)
        assert two.cr_lower >= one.cr_lower - 1e-12

    def test_threads_do_not_change_result(self, fam):
        space = PolicySearchSpace(2, 1 / 12, 1 / 4)
        a = optimize_cr(fam, space, COARSE, workers=1)
        b = optimize_cr(fam, space, COARSE, workers=4)
        assert a.cr_lower == b.cr_lower and a.rows == b.rows

    def test_refinement_does_not_lose(self, fam):
        space = PolicySearchSpace(2, 1 / 6, 1 / 2, p_ranges=((0, 2 / 3), (0, 1)))
        plain = optimize_cr(fam, space, COARSE)
        refined = optimize_cr(fam, space, COARSE, refine=True)
        assert refined.cr_lower >= plain.cr_lower - 1e-12
        assert refined.cr_lower == pytest.approx(worst_case(fam, refined.best_policy, COARSE).ratio, abs=1e-12)

    def test_csv_rows(self, fam):
        rep = optimize_cr(fam, PolicySearchSpace(2, 1 / 4, 1 / 2), COARSE)
        text = rows_to_csv(rep.rows, 2)
        lines = text.strip().split("\n")
        assert lines[0] == "p_1,p_2,t_1,worst_ratio,exact,witness"
        assert len(lines) == 1 + 5 * 5 * 3

    def test_simplex_parametrisation(self):
        fam = example_family()
        space = PolicySearchSpace(1, 1 / 4, parametrization=Parametrization.FULL_SIMPLEX)
        rep = optimize_cr(fam, space, AdversarySpec.blocks(2, 1 / 4))
        assert 0 < rep.cr_lower <= 1
        assert len(rep.rows) == 35


class TestRegret:
    def test_single_state(self):
        fam1 = single_state_family(Dmc([[1.0, 0.0], [0.0, 1.0]]).matrix)
        space = PolicySearchSpace(1, 0.25, parametrization=Parametrization.FULL_SIMPLEX)
        rep = optimize_regret(fam1, space, AdversarySpec.blocks(2, 1 / 4))
        assert rep.regret == pytest.approx(0, abs=1e-9)

    def test_two_thirds_worst_profile(self, fam):
        res = worst_regret(fam, symmetric_policy([2 / 3]), COARSE)
        assert res.regret == pytest.approx(2 / 3, abs=1e-9)
        prof = StateProfile.constant("1")
        tau = stopping_time_fluid(fam, symmetric_policy([2 / 3]), prof).tau
        assert 1 / optimal_stopping_time(fam, prof).tau - 1 / tau == pytest.approx(2 / 3, abs=1e-9)

    def test_single_law_grid_oracle(self, fam):
        rep = optimize_regret(fam, PolicySearchSpace(1, 1 / 20), COARSE)
        values = [worst_regret(fam, symmetric_policy([p]), COARSE).regret for p in np.linspace(0, 1, 21)]
        assert rep.regret == pytest.approx(min(values), abs=1e-12)
        # ties within 1e-12 go to the smallest parameter
        first = next(i for i, v in enumerate(values) if v <= min(values) + 1e-12)
        assert sym_param(rep.best_policy.pieces[0].dist) == pytest.approx(first / 20, abs=1e-12)


class TestUpperBound:
    def test_optimum(self):
        value, case = upper_bound_fixed_sets(1 / 3, 2 / 3)
        assert value == pytest.approx(0.5, abs=1e-12) and case is UpperBoundCase.A

    @pytest.mark.parametrize("p2", [0.0, 0.3, 1.0])
    def test_first_law_zero(self, p2):
        assert upper_bound_fixed_sets(0, p2)[0] == pytest.approx(7 / 16, abs=1e-12)

    def test_range(self):
        with pytest.raises(ValueError):
            upper_bound_fixed_sets(1.2, 0.5)

    @pytest.mark.parametrize("p1, p2, case", [(0.6, 0.6, "A"), (0.1, 0.95, "B"), (0.05, 0.5, "C"), (0.2, 0.05, "D")])
    def test_cases(self, p1, p2, case):
        assert upper_bound_fixed_sets(p1, p2)[1].value == case

    def test_grid_maximum(self):
        best = maximize_upper_bound(101)
        assert best["value"] == pytest.approx(0.5, abs=1e-9)
        assert (best["p1"], best["p2"]) == (pytest.approx(1 / 3), pytest.approx(2 / 3))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_formulas_match_simulation(self, fam, p1, p2):
        pol = upper_bound_policy(p1, p2)
        formulas = fixed_set_ratios(p1, p2)
        first = dict(zip(["1^1 1^inf", "1^1 2^inf"], s_hat_1(fam)))
        for key, prof in first.items():
            assert abs(formulas[key][0] - ratio(fam, pol, prof)) <= 1e-9
        for prof in s_hat_2(fam):
            assert abs(formulas["2^1 mix"][0] - ratio(fam, pol, prof)) <= 1e-9
        sim = min(ratio(fam, pol, q) for q in s_hat_1(fam) + s_hat_2(fam))
        assert upper_bound_fixed_sets(p1, p2)[0] >= sim - 1e-9


class TestChain:
    def test_fast(self, fam):
        rep = reproduce_paper(fam, fast=True)
        assert rep.passed, [c for c in rep.checks if not c.passed]
        assert rep.cr1 < rep.cr2_lower <= rep.cr_upper

    def test_closed_form_plateau(self):
        ps = value_grid(0, 1, 1 / 60, (1 / 3, 2 / 3))
        vals = np.minimum(ps, 1 / 3)
        assert vals.max() == pytest.approx(1 / 3, abs=1e-15)
        assert np.all(vals[ps >= 1 / 3] == 1 / 3)

    def test_deterministic(self, fam):
        assert reproduce_paper(fam, fast=True).to_dict() == reproduce_paper(fam, fast=True).to_dict()

    def test_example_only(self):
        with pytest.raises(SearchError):
            reproduce_paper(single_state_family(bsc(0.1).matrix))
