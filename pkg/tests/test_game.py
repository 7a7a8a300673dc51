from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cool_off_solver.errors import ParameterError
from cool_off_solver.game import (
    ALL_PROFILES,
    BOTH_INVEST,
    NOBODY_INVESTS,
    Action,
    ActionProfile,
    GameParams,
    State,
    discounted_payoff,
    feasible_ir_set,
    minimax_payoff,
    stage_payoff,
    truncation_horizon,
)

costs = st.fractions(min_value=Fraction(1, 100), max_value=Fraction(99, 100))


class TestStagePayoff:
    def test_joint_investment_in_high_state(self):
        assert stage_payoff(BOTH_INVEST, State.H, Fraction(1, 5)) == (Fraction(4, 5), Fraction(4, 5))

    def test_lone_investor_pays_the_cost(self):
        profile = ActionProfile(Action.I, Action.N)

        assert stage_payoff(profile, State.H, Fraction(1, 5)) == (Fraction(-1, 5), 0)

    def test_low_state_never_pays(self):
        assert stage_payoff(BOTH_INVEST, State.L, Fraction(1, 5)) == (Fraction(-1, 5), Fraction(-1, 5))

    def test_not_investing_is_exactly_zero(self):
        u1, u2 = stage_payoff(NOBODY_INVESTS, State.H, Fraction(1, 3))

        assert u1 == 0 and u2 == 0
        assert isinstance(u1, Fraction)

    @pytest.mark.parametrize("c", [0, 1, Fraction(6, 5), -0.1])
    def test_rejects_cost_outside_unit_interval(self, c):
        with pytest.raises(ParameterError):
            stage_payoff(BOTH_INVEST, State.H, c)

    @given(costs, st.sampled_from(ALL_PROFILES), st.sampled_from(list(State)))
    def test_payoffs_bounded_by_cost_and_gain(self, c, profile, state):
        for u in stage_payoff(profile, state, c):
            assert -c <= u <= 1 - c


class TestActionProfile:
    def test_code_and_back(self):
        assert ActionProfile.from_code("IN") == ActionProfile(Action.I, Action.N)
        assert ActionProfile(Action.N, Action.I).code == "NI"

    def test_swapped(self):
        assert ActionProfile(Action.I, Action.N).swapped() == ActionProfile(Action.N, Action.I)

    def test_indexing_by_player(self):
        profile = ActionProfile(Action.I, Action.N)

        assert profile[1] is Action.I
        assert profile[2] is Action.N

        with pytest.raises(ParameterError):
            profile[3]

    def test_invalid_code(self):
        with pytest.raises(ParameterError):
            ActionProfile.from_code("IX")


class TestGameParams:
    def test_accepts_decimal_strings(self):
        params = GameParams("0.2", "0.9", "0.5")

        assert params.c == Fraction(1, 5)
        assert params.prior_log_odds == pytest.approx(0.0)

    @pytest.mark.parametrize("field", ["c", "delta", "p0"])
    def test_rejects_closed_ends(self, field):
        values = {"c": Fraction(1, 5), "delta": Fraction(9, 10), "p0": Fraction(1, 2)}
        values[field] = Fraction(1)

        with pytest.raises(ParameterError, match=field):
            GameParams(**values)

    def test_with_delta(self, params):
        assert params.with_delta(Fraction(99, 100)).delta == Fraction(99, 100)
        assert params.with_delta(Fraction(99, 100)).c == params.c


class TestDiscountedPayoff:
    def test_constant_stream_with_tail_is_exact(self):
        delta = Fraction(9, 10)
        result = discounted_payoff([Fraction(4, 5)] * 10, delta, tail=Fraction(4, 5))

        assert result.value == Fraction(4, 5)
        assert result.truncation_bound == 0

    def test_truncation_bound(self):
        result = discounted_payoff([1.0] * 20, 0.9)

        assert result.value == pytest.approx(1 - 0.9**20)
        assert result.truncation_bound == pytest.approx(0.9**20)

    def test_single_period(self):
        result = discounted_payoff([Fraction(-1, 5)], Fraction(1, 2), tail=0)

        assert result.value == Fraction(-1, 10)

    def test_empty_stream_needs_tail(self):
        with pytest.raises(ParameterError):
            discounted_payoff([], 0.9)

    @given(st.lists(st.fractions(min_value=-1, max_value=1), min_size=1, max_size=30))
    def test_value_within_payoff_range(self, stream):
        result = discounted_payoff(stream, Fraction(4, 5), tail=0)

        assert abs(result.value) <= max(abs(u) for u in stream)


def test_truncation_horizon():
    h = truncation_horizon(0.9, 1e-4)

    assert 0.9**h <= 1e-4 < 0.9 ** (h - 1)


class TestMinimax:
    @pytest.mark.parametrize("state", list(State))
    def test_minimax_is_zero(self, state):
        assert minimax_payoff(1, state, 0.2) == pytest.approx(0.0, abs=1e-9)
        assert minimax_payoff(2, state, 0.2) == pytest.approx(0.0, abs=1e-9)

    def test_rejects_unknown_player(self):
        with pytest.raises(ParameterError):
            minimax_payoff(3, State.H, 0.2)


class TestFeasibleSet:
    def test_high_state_is_full_dimensional(self):
        feasible = feasible_ir_set(State.H, 0.2)

        assert feasible.dimension == 2
        assert any(v == pytest.approx((0.8, 0.8)) for v in feasible.vertices)

    def test_low_state_is_a_point(self):
        feasible = feasible_ir_set(State.L, 0.2)

        assert feasible.dimension == 0
        assert feasible.vertices[0] == pytest.approx((0.0, 0.0))
