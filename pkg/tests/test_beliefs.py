from fractions import Fraction
from math import log

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cool_off_solver.beliefs import (
    BeliefState,
    FiniteProbSpace,
    PhaseContext,
    advance_opponent_signal,
    belief_distribution_after_n,
    conditioned_posterior_mean,
    expected_posterior_after_n,
    llr_sum_law,
    markov_tail_bound_check,
    one_shot_threshold_equilibria,
    posterior_from_counts,
    random_finite_space,
    update_opponent_action,
    update_own_signal,
)
from cool_off_solver.cooloff import CoolOffScheme
from cool_off_solver.errors import OffPathError, ParameterError
from cool_off_solver.game import Action, State
from cool_off_solver.signals import SignalModel, expected_llr
from cool_off_solver.solver import ThresholdPolicy

STEP = log(7 / 3)


@pytest.fixture
def incommensurable_model():
    return SignalModel.from_rows(["a", "b", "c"], ["1/2", "3/10", "1/5"], ["1/5", "1/2", "3/10"])


@pytest.fixture
def coin_flip_policy():
    return ThresholdPolicy.constant(CoolOffScheme.constant(1), 0.5)


class TestOwnSignals:
    def test_one_good_signal(self, params, binary_model):
        belief = update_own_signal(BeliefState.initial(params, binary_model), binary_model, "g")

        assert belief.belief == pytest.approx(0.7)

    def test_signals_commute(self, params, binary_model):
        start = BeliefState.initial(params, binary_model)
        first = update_own_signal(update_own_signal(start, binary_model, "g"), binary_model, "b")
        second = update_own_signal(update_own_signal(start, binary_model, "b"), binary_model, "g")

        assert first.belief == pytest.approx(second.belief)
        assert first.belief == pytest.approx(0.5)

    def test_exact_posterior_from_counts(self, params, binary_model):
        assert posterior_from_counts(params, binary_model, (1, 0)) == Fraction(7, 10)
        assert posterior_from_counts(params, binary_model, (2, 1)) == Fraction(7, 10)
        assert posterior_from_counts(params, binary_model, (0, 0)) == params.p0


class TestOpponentActions:
    def test_invest_at_even_cut_carries_one_signal(self, params, binary_model, coin_flip_policy):
        belief = advance_opponent_signal(BeliefState.initial(params, binary_model), binary_model)
        context = PhaseContext(investment=True, history_key="", opponent_public_log_odds=0.0)
        updated = update_opponent_action(belief, Action.I, coin_flip_policy, context)

        assert updated.action_evidence == pytest.approx(STEP)
        assert updated.belief == pytest.approx(0.7)

    def test_not_investing_is_bad_news(self, params, binary_model, coin_flip_policy):
        belief = advance_opponent_signal(BeliefState.initial(params, binary_model), binary_model)
        context = PhaseContext(investment=True)
        updated = update_opponent_action(belief, Action.N, coin_flip_policy, context)

        assert updated.belief == pytest.approx(0.3)

    def test_cool_off_actions_carry_no_information(self, params, binary_model, coin_flip_policy):
        belief = advance_opponent_signal(BeliefState.initial(params, binary_model), binary_model)
        updated = update_opponent_action(belief, Action.N, coin_flip_policy, PhaseContext(investment=False))

        assert updated is belief

    def test_impossible_action_raises(self, params, binary_model):
        never = ThresholdPolicy.never(CoolOffScheme.constant(1))
        belief = advance_opponent_signal(BeliefState.initial(params, binary_model), binary_model)

        with pytest.raises(OffPathError):
            update_opponent_action(belief, Action.I, never, PhaseContext(investment=True))

    def test_impossible_action_as_the_other(self, params, binary_model):
        never = ThresholdPolicy.never(CoolOffScheme.constant(1))
        belief = advance_opponent_signal(BeliefState.initial(params, binary_model), binary_model)
        updated = update_opponent_action(belief, Action.I, never, PhaseContext(investment=True), off_path="other")

        assert updated.opponent_filter.off_path
        assert updated.belief == pytest.approx(0.5)


class TestLlrLaws:
    def test_lattice_law_is_exact(self, binary_model):
        values, probs, exact = llr_sum_law(binary_model, 3, State.H)

        assert exact
        assert probs.sum() == pytest.approx(1.0)
        assert float(np.dot(values, probs)) == pytest.approx(3 * expected_llr(binary_model, State.H))

    def test_enumerated_law(self, incommensurable_model):
        values, probs, exact = llr_sum_law(incommensurable_model, 4, State.L)

        assert exact
        assert probs.size == 15
        assert probs.sum() == pytest.approx(1.0)
        assert float(np.dot(values, probs)) == pytest.approx(4 * expected_llr(incommensurable_model, State.L))

    def test_grid_fallback(self, incommensurable_model):
        _, probs, exact = llr_sum_law(incommensurable_model, 6, State.H, atom_budget=5)

        assert not exact
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_negative_periods(self, binary_model):
        with pytest.raises(ParameterError):
            llr_sum_law(binary_model, -1, State.H)

    @pytest.mark.parametrize("n", [1, 5, 20])
    def test_beliefs_are_a_martingale(self, binary_model, n):
        high = expected_posterior_after_n(0.5, binary_model, n, State.H)
        low = expected_posterior_after_n(0.5, binary_model, n, State.L)

        assert 0.5 * high + 0.5 * low == pytest.approx(0.5, abs=1e-12)
        assert high > 0.5 > low

    def test_high_state_learning_is_monotone(self, binary_model):
        means = [expected_posterior_after_n(0.5, binary_model, n, State.H) for n in range(0, 12)]

        assert means == sorted(means)

    def test_distribution_after_n(self, binary_model):
        beliefs, probs = belief_distribution_after_n(0.5, binary_model, 1, State.H)

        assert float(probs[beliefs >= 0.7 - 1e-12].sum()) == pytest.approx(0.7)


class TestConditionedPosteriorMean:
    def test_hand_built_space(self):
        atoms = tuple((Fraction(1, 4), index) for index in range(4))
        space = FiniteProbSpace(atoms, {"coarse": ((0, 1, 2, 3),), "fine": ((0, 1), (2, 3))})
        record = conditioned_posterior_mean(space, {0, 1, 2})

        check = record.cells[0]
        assert check.p == Fraction(3, 4)
        assert check.conditioned_mean == Fraction(5, 6)
        assert record.holds

    def test_rejects_non_refinement(self):
        atoms = tuple((Fraction(1, 4), index) for index in range(4))
        space = FiniteProbSpace(atoms, {"coarse": ((0, 1), (2, 3)), "fine": ((0, 2), (1, 3))})

        with pytest.raises(ParameterError):
            conditioned_posterior_mean(space, {0})

    def test_rejects_bad_partition(self):
        atoms = tuple((Fraction(1, 2), index) for index in range(2))

        with pytest.raises(ParameterError):
            FiniteProbSpace(atoms, {"coarse": ((0,),), "fine": ((0,), (1,))})

    def test_random_rational_spaces(self):
        rng = np.random.default_rng(2024)

        for _ in range(1000):
            space, event = random_finite_space(rng, atoms=int(rng.integers(2, 9)))
            record = conditioned_posterior_mean(space, event)

            assert record.holds


class TestMarkovTailBound:
    def test_bound_holds_at_the_edge(self):
        eps = Fraction(1, 10)
        record = markov_tail_bound_check([Fraction(1), Fraction(0)], eps, [Fraction(99, 100), Fraction(1, 100)])

        assert record.applicable
        assert record.holds
        assert record.mean == Fraction(99, 100)

    def test_unmet_precondition_is_not_a_failure(self):
        record = markov_tail_bound_check([Fraction(1, 2), Fraction(1)], Fraction(1, 10))

        assert not record.applicable
        assert record.holds

    def test_two_samples_given_as_a_tuple(self):
        record = markov_tail_bound_check((Fraction(1, 2), Fraction(1)), Fraction(1, 10))

        assert record.mean == Fraction(3, 4)
        assert record.tail_probability == Fraction(1, 2)
        assert not record.applicable

    def test_rejects_values_outside_unit_interval(self):
        with pytest.raises(ParameterError):
            markov_tail_bound_check([Fraction(3, 2)], Fraction(1, 10))

    def test_rejects_mismatched_probabilities(self):
        with pytest.raises(ParameterError):
            markov_tail_bound_check([Fraction(1), Fraction(0)], Fraction(1, 10), [Fraction(1)])

    @settings(max_examples=1000, deadline=None)
    @given(
        st.lists(
            st.tuples(st.fractions(min_value=0, max_value=1, max_denominator=1000), st.integers(1, 20)),
            min_size=1,
            max_size=8,
        ),
        st.fractions(min_value=Fraction(1, 100), max_value=Fraction(1, 2), max_denominator=1000),
    )
    def test_never_fails_when_the_mean_is_high(self, weighted, eps):
        total = sum(weight for _, weight in weighted)
        values = [value for value, _ in weighted]
        probabilities = [Fraction(weight, total) for _, weight in weighted]
        mean = sum(v * p for v, p in zip(values, probabilities))

        # top up with mass at 1 until the mean reaches 1 - eps^2 exactly
        top_up = max(Fraction(0), (1 - eps**2 - mean) / (1 - mean)) if mean < 1 else Fraction(0)
        values.append(Fraction(1))
        probabilities = [p * (1 - top_up) for p in probabilities] + [top_up]

        record = markov_tail_bound_check(values, eps, probabilities)

        assert record.applicable
        assert record.holds


def test_one_shot_equilibria(params, binary_model):
    equilibria = one_shot_threshold_equilibria(params, binary_model)

    assert equilibria == pytest.approx([0.2, 1.0])
