from fractions import Fraction

import numpy as np
import pytest

from cool_off_solver.cooloff import CoolOffScheme, Phase
from cool_off_solver.game import State
from cool_off_solver.sim import (
    TRACE_COLUMNS,
    episode_rngs,
    payoff_efficiency_check,
    payoff_lower_bounds,
    run_batch,
    run_episode,
)
from cool_off_solver.solver import ThresholdPolicy


@pytest.fixture
def scheme():
    return CoolOffScheme.constant(1)


@pytest.fixture
def always(scheme):
    policy = ThresholdPolicy.always(scheme)

    return policy, policy


@pytest.fixture
def coin_flip(scheme):
    policy = ThresholdPolicy.constant(scheme, 0.5)

    return policy, policy


def always_payoff(delta, horizon, stage):
    """Discounted payoff of investing from period 3 through the horizon."""
    return stage * (delta**2 - delta**horizon)


def test_episode_streams_are_reproducible():
    first = [rng.random(3) for rng in episode_rngs(4, 9)]
    second = [rng.random(3) for rng in episode_rngs(4, 9)]
    other = [rng.random(3) for rng in episode_rngs(4, 10)]

    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, other)


class TestRunEpisode:
    def test_always_investing_in_the_high_state(self, params, binary_model, always):
        trace = run_episode(always, params, binary_model, 30, seed=1, force_state=State.H, window=10)

        assert trace.state is State.H
        assert trace.payoffs[0] == pytest.approx(always_payoff(0.9, 30, 0.8))
        assert trace.payoffs[0] == pytest.approx(trace.payoffs[1])
        assert trace.converged_invest
        assert not trace.converged_idle
        assert trace.last_switch == 3
        assert trace.cooloff_violations == 0
        assert not trace.actions[:, :2].any()
        assert trace.actions[:, 2:].all()

    def test_always_investing_in_the_low_state(self, params, binary_model, always):
        trace = run_episode(always, params, binary_model, 30, seed=1, force_state=State.L, window=10)

        assert trace.payoffs[0] == pytest.approx(always_payoff(0.9, 30, -0.2))

    def test_never_investing_stays_idle(self, params, binary_model, scheme):
        never = ThresholdPolicy.never(scheme)
        trace = run_episode((never, never), params, binary_model, 25, seed=2, window=10)

        assert trace.payoffs == (0.0, 0.0)
        assert trace.converged_idle
        assert trace.last_switch == 0

    def test_actions_follow_beliefs(self, params, binary_model, coin_flip):
        for episode in range(5):
            trace = run_episode(coin_flip, params, binary_model, 60, seed=3, episode=episode)
            investing = trace.investment
            acted = trace.actions[:, investing]
            beliefs = trace.beliefs[:, investing]

            assert np.all(beliefs[acted] >= 0.5 - 1e-6)
            assert np.all(beliefs[~acted] < 0.5 + 1e-6)
            assert not trace.actions[:, ~investing].any()

    def test_same_seed_same_episode(self, params, binary_model, coin_flip):
        first = run_episode(coin_flip, params, binary_model, 40, seed=8, episode=3)
        second = run_episode(coin_flip, params, binary_model, 40, seed=8, episode=3)

        np.testing.assert_array_equal(first.signals, second.signals)
        np.testing.assert_array_equal(first.actions, second.actions)
        assert first.payoffs == second.payoffs

    def test_trace_rows(self, params, binary_model, always):
        trace = run_episode(always, params, binary_model, 12, seed=1, force_state=State.H)
        rows = list(trace.rows(binary_model))

        assert len(rows) == 12
        assert all(len(row) == len(TRACE_COLUMNS) for row in rows)
        assert rows[0][1] == Phase.COOL_OFF.value
        assert rows[2][1] == Phase.INVESTMENT.value
        assert rows[2][6:8] == ("I", "I")
        assert rows[0][2] in binary_model.alphabet

    def test_stripped_trace_has_no_records(self, params, binary_model, always):
        trace = run_episode(always, params, binary_model, 12, seed=1)

        assert trace.has_records
        assert not trace.stripped().has_records

    def test_rejects_empty_horizon(self, params, binary_model, always):
        with pytest.raises(ValueError):
            run_episode(always, params, binary_model, 0, seed=1)


class TestRunBatch:
    def test_worker_count_does_not_change_results(self, params, binary_model, coin_flip):
        single = run_batch(coin_flip, params, binary_model, 40, 12, seed=5, window=10, workers=1)
        pooled = run_batch(coin_flip, params, binary_model, 40, 12, seed=5, window=10, workers=3)

        assert single.rows() == pooled.rows()

    def test_leading_episodes_are_traced(self, params, binary_model, coin_flip):
        metrics = run_batch(coin_flip, params, binary_model, 20, 6, seed=5, workers=1, trace_episodes=2)

        assert [trace.episode for trace in metrics.traces] == [0, 1]

    def test_rates_and_intervals(self, params, binary_model, always):
        metrics = run_batch(always, params, binary_model, 40, 20, seed=1, force_state=State.H, window=10,
                            workers=1)
        stats = metrics.per_state[State.H]

        assert list(metrics.per_state) == [State.H]
        assert stats.invest_rate == 1.0
        assert stats.invest_ci[0] <= 1.0 <= stats.invest_ci[1] + 1e-12
        assert stats.idle_rate == 0.0
        assert stats.payoff_half_widths[0] == pytest.approx(0.0, abs=1e-12)
        assert metrics.truncation_bound == pytest.approx(0.9**40)

    def test_policy_constraints_hold(self, params, binary_model, coin_flip):
        metrics = run_batch(coin_flip, params, binary_model, 60, 30, seed=11, workers=1)

        assert metrics.floor_violations == 0
        assert metrics.cooloff_violations == 0
        assert sum(stats.episodes for stats in metrics.per_state.values()) == 30

    def test_rejects_empty_batch(self, params, binary_model, always):
        with pytest.raises(ValueError):
            run_batch(always, params, binary_model, 10, 0, seed=1)


class TestEfficiency:
    @pytest.fixture
    def metrics(self, params, binary_model, always):
        return run_batch(always, params, binary_model, 200, 5, seed=1, force_state=State.H, workers=1)

    def test_vacuous_for_large_slack(self, params, metrics):
        report = payoff_efficiency_check(metrics, params, 1)

        assert report.vacuous
        assert report.passed
        assert report.checks == []

    def test_passes_against_a_loose_target(self, params, metrics):
        report = payoff_efficiency_check(metrics, params, Fraction(1, 2))

        assert report.passed
        assert len(report.checks) == 2

    def test_fails_against_a_tight_target(self, params, metrics):
        report = payoff_efficiency_check(metrics, params, Fraction(1, 10))

        assert not report.passed
        assert all(check.bound == pytest.approx(0.7) for check in report.checks)


def test_payoff_lower_bounds(params):
    bounds = payoff_lower_bounds(params, Fraction(1, 50), Fraction(1, 10))

    assert bounds[State.H] >= 1 - 0.2 - 0.1
    assert bounds[State.L] >= -0.1
