from fractions import Fraction

import numpy as np
import pytest

from cool_off_solver.cooloff import CoolOffScheme
from cool_off_solver.epistemics import (
    atom_count,
    build_space,
    check_q_evident,
    common_learning_curve,
    common_q_belief,
    common_q_belief_iterates,
    evident_event_check,
    expected_beliefs,
    individual_learning_time,
    mutual_q_belief,
    q_belief_event,
    spine_belief_monotonicity,
)
from cool_off_solver.errors import BudgetError, ParameterError
from cool_off_solver.game import State
from cool_off_solver.signals import SignalModel
from cool_off_solver.solver import ThresholdPolicy

HALF = Fraction(1, 2)


@pytest.fixture
def never():
    policy = ThresholdPolicy.never(CoolOffScheme.constant(1))

    return policy, policy


@pytest.fixture
def coin_flip():
    policy = ThresholdPolicy.constant(CoolOffScheme.constant(1), 0.5)

    return policy, policy


@pytest.fixture
def one_period(never, params, binary_model):
    return build_space(never, params, binary_model, 1)


class TestOutcomeSpace:
    def test_atom_count(self, binary_model, ternary_model):
        assert atom_count(binary_model, 1) == 8
        assert atom_count(ternary_model, 2) == 162

    def test_probabilities_are_exact(self, one_period):
        assert one_period.size == 8
        assert one_period.probability(one_period.everything()) == 1
        assert one_period.probability(one_period.state_event(State.H)) == HALF

    def test_posterior_after_one_signal(self, one_period):
        good = one_period.signals[:, 0, 0] == 0

        assert one_period.conditional(one_period.state_event(State.H), good) == Fraction(7, 10)

    def test_conditioning_on_a_null_event(self, one_period):
        with pytest.raises(ParameterError):
            one_period.conditional(one_period.everything(), ~one_period.everything())

    def test_actions_follow_the_phase(self, coin_flip, params, binary_model):
        space = build_space(coin_flip, params, binary_model, 3)

        assert not space.actions[:, :2, :].any()
        assert space.actions[:, 2, :].any()

    def test_rejects_non_positive_t(self, never, params, binary_model):
        with pytest.raises(ParameterError):
            build_space(never, params, binary_model, 0)

    def test_budget_error_suggests_a_smaller_t(self, never, params, binary_model):
        with pytest.raises(BudgetError) as error:
            build_space(never, params, binary_model, 5, atom_budget=1000)

        assert error.value.required == 2048
        assert error.value.suggestion == "reduce t to 4 (by 1)"


class TestQBeliefs:
    def test_individual_q_belief(self, one_period):
        high = one_period.state_event(State.H)
        believes = q_belief_event(one_period, high, HALF, 1)

        np.testing.assert_array_equal(believes, one_period.signals[:, 0, 0] == 0)

    def test_rejects_q_outside_range(self, one_period):
        with pytest.raises(ParameterError):
            q_belief_event(one_period, one_period.everything(), 0, 1)

    def test_common_belief_after_one_signal(self, one_period):
        high = one_period.state_event(State.H)
        common = common_q_belief(one_period, high, HALF)
        both_good = (one_period.signals[:, 0, 0] == 0) & (one_period.signals[:, 1, 0] == 0)

        np.testing.assert_array_equal(common, both_good)
        assert one_period.conditional(common, high) == Fraction(49, 100)

    def test_iterates_descend(self, coin_flip, params, binary_model):
        space = build_space(coin_flip, params, binary_model, 3)
        iterates = common_q_belief_iterates(space, space.state_event(State.H), Fraction(3, 4))

        for larger, smaller in zip(iterates, iterates[1:]):
            assert not np.any(smaller & ~larger)

    def test_common_belief_is_evident(self, coin_flip, params, binary_model):
        space = build_space(coin_flip, params, binary_model, 3)
        high = space.state_event(State.H)
        q = Fraction(3, 4)
        common = common_q_belief(space, high, q)

        assert not np.any(common & ~mutual_q_belief(space, common, q))
        assert check_q_evident(space, common, q, high).consistent

    def test_certificate(self, one_period):
        high = one_period.state_event(State.H)
        both_good = common_q_belief(one_period, high, HALF)
        certificate = check_q_evident(one_period, both_good, HALF, high)

        assert certificate.certified
        assert certificate.contained


class TestLearningCurve:
    def test_exact_values(self, never, params, binary_model):
        curve = common_learning_curve(never, params, binary_model, HALF, [1])

        assert curve.values(State.H) == [Fraction(49, 100)]
        assert curve.values(State.L) == [Fraction(49, 100)]
        assert curve.crossing(State.H) is None
        assert not curve.truncated

    def test_points_carry_exact_fractions(self, never, params, binary_model):
        point = common_learning_curve(never, params, binary_model, HALF, [1]).points[0]

        assert point.row() == (1, "H", 49, 100, repr(0.49))

    def test_stops_at_the_budget(self, never, params, binary_model):
        curve = common_learning_curve(never, params, binary_model, Fraction(3, 4), range(1, 5), atom_budget=200)

        assert curve.truncated
        assert sorted({point.t for point in curve.points}) == [1, 2, 3]

    def test_crossing(self, never, params, binary_model):
        curve = common_learning_curve(never, params, binary_model, Fraction(2, 5), [1])

        assert curve.crossing(State.H) == 1


class TestBeliefDynamics:
    def test_expected_beliefs_after_one_signal(self, one_period):
        assert expected_beliefs(one_period) == {"": (Fraction(29, 50), Fraction(29, 50))}

    def test_spine_beliefs_rise(self, coin_flip, params, binary_model):
        records = spine_belief_monotonicity(coin_flip, params, binary_model, 4)

        assert [record.history for record in records] == ["NN.NN", "NN.NN"]
        assert all(record.holds for record in records)

    def test_learning_time_not_reached(self, never, params, binary_model):
        learning = individual_learning_time(never, params, binary_model, HALF, range(1, 3))

        assert learning.target == 1 - Fraction(1, 8) ** 2
        assert learning.values[0] == (1, Fraction(29, 50), Fraction(29, 50))
        assert not learning.found

    def test_learning_time_with_sharp_signals(self, never, params):
        sharp = SignalModel.from_rows(["g", "b"], ["19/20", "1/20"], ["1/20", "19/20"])
        learning = individual_learning_time(never, params, sharp, Fraction(9, 10), range(1, 3))

        assert learning.values[0] == (1, Fraction(181, 200), Fraction(181, 200))
        assert learning.T_bar == 1

    def test_evident_event(self, one_period):
        records = evident_event_check(one_period, Fraction(2, 3))

        assert len(records) == 1
        record = records[0]
        assert record.event_mass == Fraction(49, 100)
        assert record.common_mass == 1
        assert record.holds

    def test_no_history_qualifies_for_a_small_eps(self, one_period):
        assert evident_event_check(one_period, Fraction(1, 10)) == []
