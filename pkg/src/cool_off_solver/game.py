"""
Stage game primitives of the two-player investment game.

Each player either invests (I) at cost c or does not (N). Joint investment pays 1 in the
high state H and nothing in the low state L, so (I, I) is efficient in H and investing is
dominated in L. Long-run payoffs are normalized discounted sums.
"""

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import ceil, log
from numbers import Rational

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from cool_off_solver.errors import ParameterError


class State(str, Enum):
    """Binary state of nature."""

    H = "H"
    L = "L"

    @property
    def other(self):
        return State.L if self is State.H else State.H


class Action(str, Enum):
    """Stage action: invest or not invest."""

    I = "I"  # noqa: E741
    N = "N"


@dataclass(frozen=True)
class ActionProfile:
    """One period's pair of actions, player 1 first."""

    a1: Action
    a2: Action

    def __iter__(self):
        return iter((self.a1, self.a2))

    def __getitem__(self, player):
        """Return the action of player 1 or 2."""
        if player == 1:
            return self.a1

        if player == 2:
            return self.a2

        raise ParameterError(f"player must be 1 or 2, got {player}")

    @property
    def both_invest(self):
        return self.a1 is Action.I and self.a2 is Action.I

    def swapped(self):
        """Return the profile seen from player 2's side."""
        return ActionProfile(self.a2, self.a1)

    @property
    def code(self):
        """Two-letter encoding, e.g. 'IN'."""
        return self.a1.value + self.a2.value

    @classmethod
    def from_code(cls, code):
        try:
            return cls(Action(code[0]), Action(code[1]))
        except (ValueError, IndexError) as e:
            raise ParameterError(f"invalid action profile code: {code!r}") from e


ALL_PROFILES = tuple(ActionProfile(a1, a2) for a1 in Action for a2 in Action)
"""The four action profiles, (I, I) first."""

BOTH_INVEST = ActionProfile(Action.I, Action.I)
NOBODY_INVESTS = ActionProfile(Action.N, Action.N)


def _open_unit(name, value):
    if not 0 < value < 1:
        raise ParameterError(f"{name} must lie in (0, 1), got {value}")


@dataclass(frozen=True)
class GameParams:
    """Investment cost, discount factor and common prior on H, all in (0, 1)."""

    c: Fraction
    delta: Fraction
    p0: Fraction

    def __post_init__(self):
        for name in ("c", "delta", "p0"):
            value = getattr(self, name)

            if not isinstance(value, Rational):
                value = Fraction(str(value))
                object.__setattr__(self, name, value)

            _open_unit(name, value)

    @property
    def cf(self):
        return float(self.c)

    @property
    def deltaf(self):
        return float(self.delta)

    @property
    def p0f(self):
        return float(self.p0)

    @property
    def prior_log_odds(self):
        return log(self.p0f / (1 - self.p0f))

    def with_delta(self, delta):
        """Return a copy with another discount factor."""
        return GameParams(self.c, delta, self.p0)


def stage_payoff(profile, state, c):
    """
    Return (u1, u2) for one period.

    Investing costs c; the investment returns 1 only when both invest in state H. Not
    investing pays exactly 0. Exact when c is a Fraction.
    """
    _open_unit("c", c)

    zero = c * 0
    success = profile.both_invest and State(state) is State.H

    def payoff(action):
        if action is Action.N:
            return zero

        return (1 - c) if success else -c

    return payoff(profile.a1), payoff(profile.a2)


@dataclass(frozen=True)
class DiscountedPayoff:
    """A normalized discounted sum plus the bound on what truncation left out."""

    value: float
    truncation_bound: float
    periods: int


def discounted_payoff(stream, delta, tail=None, payoff_bound=None):
    """
    Normalized discounted payoff sum((1 - delta) delta^(t-1) u_t) of a finite stream.

    `tail` is the declared normalized continuation value from the period after the
    stream; it contributes delta^T * tail and makes the truncation bound 0. Without a
    tail the bound is delta^T * max|u| (`payoff_bound` overrides max|u|).
    """
    _open_unit("delta", delta)

    stream = list(stream)
    periods = len(stream)

    if not periods and tail is None:
        raise ParameterError("an empty payoff stream needs a declared tail value")

    if any(isinstance(u, Fraction) for u in stream) or isinstance(delta, Fraction):
        delta = Fraction(delta)
        weight = 1 - delta
        value = Fraction(0)

        for u in stream:
            value += weight * u
            weight *= delta

        tail_weight = delta**periods
    else:
        weights = (1 - delta) * np.power(float(delta), np.arange(periods))
        value = float(np.sum(weights * np.asarray(stream, dtype=float)))
        tail_weight = float(delta) ** periods

    if tail is not None:
        return DiscountedPayoff(value + tail_weight * tail, 0.0, periods)

    if payoff_bound is None:
        payoff_bound = max((abs(u) for u in stream), default=0)

    return DiscountedPayoff(value, float(tail_weight * payoff_bound), periods)


def truncation_horizon(delta, tol=1e-4):
    """Smallest horizon h with delta^h <= tol."""
    _open_unit("delta", delta)

    return max(1, ceil(log(tol) / log(float(delta))))


def minimax_payoff(player, state, c):
    """
    Player's minimax payoff: the opponent picks a mixture over {I, N} to minimize the
    player's best pure reply. Solved as the linear program min v s.t. v >= u(a, alpha).
    """
    if player not in (1, 2):
        raise ParameterError(f"player must be 1 or 2, got {player}")

    _open_unit("c", c)

    opponent_actions = list(Action)
    # rows: own pure action; columns: opponent pure action
    payoff_matrix = np.array(
        [
            [
                float(stage_payoff(_profile_for(player, own, other), state, c)[player - 1])
                for other in opponent_actions
            ]
            for own in Action
        ]
    )

    # variables: (alpha_I, alpha_N, v); minimize v
    n = len(opponent_actions)
    objective = np.zeros(n + 1)
    objective[-1] = 1.0
    upper = np.hstack([payoff_matrix, -np.ones((payoff_matrix.shape[0], 1))])
    equality = np.hstack([np.ones((1, n)), np.zeros((1, 1))])

    result = linprog(
        objective,
        A_ub=upper,
        b_ub=np.zeros(payoff_matrix.shape[0]),
        A_eq=equality,
        b_eq=[1.0],
        bounds=[(0, 1)] * n + [(None, None)],
        method="highs",
    )

    value = float(result.x[-1])

    return 0.0 if abs(value) < 1e-12 else value


def _profile_for(player, own, other):
    return ActionProfile(own, other) if player == 1 else ActionProfile(other, own)


@dataclass(frozen=True)
class FeasibleSet:
    """Vertices (counter-clockwise) of a convex polygon and its affine dimension."""

    vertices: tuple
    dimension: int


def _clip_polygon(vertices, normal, offset):
    """Keep the part of a convex polygon with normal . w >= offset."""
    clipped = []
    count = len(vertices)

    for index in range(count):
        current = vertices[index]
        following = vertices[(index + 1) % count]
        current_side = np.dot(normal, current) - offset
        following_side = np.dot(normal, following) - offset

        if current_side >= 0:
            clipped.append(current)

        if current_side * following_side < 0:
            t = current_side / (current_side - following_side)
            clipped.append(current + t * (following - current))

    return clipped


def _dedupe(points, tol=1e-12):
    unique = []

    for point in points:
        if not any(np.allclose(point, seen, atol=tol) for seen in unique):
            unique.append(point)

    return unique


def feasible_ir_set(state, c):
    """
    Feasible and individually rational payoffs W*(state): the convex hull of the stage
    payoff vectors cut by w_i >= minimax payoff for both players.
    """
    _open_unit("c", c)

    points = np.array(
        [[float(u) for u in stage_payoff(profile, state, c)] for profile in ALL_PROFILES]
    )
    hull = ConvexHull(points)
    polygon = [points[index] for index in hull.vertices]

    for player in (1, 2):
        normal = np.zeros(2)
        normal[player - 1] = 1.0
        polygon = _clip_polygon(polygon, normal, minimax_payoff(player, state, c))

        if not polygon:
            break

    vertices = _dedupe(polygon)

    if len(vertices) <= 1:
        dimension = 0
    else:
        dimension = int(np.linalg.matrix_rank(np.array(vertices[1:]) - vertices[0], tol=1e-12))

    return FeasibleSet(tuple(tuple(float(x) for x in v) for v in vertices), dimension)
