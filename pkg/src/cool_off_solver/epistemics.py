"""
Common learning on truncated instances, in exact rational arithmetic.

A truncated outcome space lists every (state, both signal sequences) tuple of length t
with an integer weight over a common denominator; the actions follow deterministically
from a threshold profile. Events are boolean masks over the atoms. Player i's
information cell at t is (a^(t-1), x_i^t), and every ">= q" comparison is made between
integers.
"""

from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import numpy as np

from cool_off_solver.errors import BudgetError, ParameterError
from cool_off_solver.game import ActionProfile, State
from cool_off_solver.history import encode, path_from_history
from cool_off_solver.logger import log_debug, log_warning
from cool_off_solver.util.numbers import parse_fraction

DEFAULT_ATOM_BUDGET = 10**7
CURVE_COLUMNS = ("t", "state", "numerator", "denominator", "decimal")

_CODES = ("NN", "NI", "IN", "II")
"""Profile codes by 2 * [a1 = I] + [a2 = I]."""

_INT64_LIMIT = 2**62


def atom_count(model, t):
    return 2 * model.size ** (2 * t)


def _largest_t(model, budget):
    t = 0

    while atom_count(model, t + 1) <= budget:
        t += 1

    return t


def _history_label(code, length):
    return ".".join(_CODES[(code >> (2 * j)) & 3] for j in range(length))


@dataclass
class TruncatedOutcomeSpace:
    t: int
    model: object
    high: np.ndarray
    signals: np.ndarray
    actions: np.ndarray
    weights: np.ndarray
    total: int
    cells: tuple
    histories: np.ndarray

    @property
    def size(self):
        return self.high.size

    def state_event(self, state):
        return self.high.copy() if State(state) is State.H else ~self.high

    def everything(self):
        return np.ones(self.size, dtype=bool)

    def mass(self, event):
        return int(sum(self.weights[event].tolist()))

    def probability(self, event):
        return Fraction(self.mass(event), self.total)

    def conditional(self, event, given):
        base = self.mass(given)

        if base == 0:
            raise ParameterError("conditioning event has probability zero")

        return Fraction(self.mass(event & given), base)

    def cell_masses(self, player, event=None):
        """Per-cell masses of `event` (or of everything) for a player's partition."""
        cells = self.cells[player - 1]
        count = int(cells.max()) + 1
        weights = self.weights if event is None else np.where(event, self.weights, 0)
        sums = np.zeros(count, dtype=self.weights.dtype)
        np.add.at(sums, cells, weights)

        return sums.astype(object)

    def history_label(self, code):
        return _history_label(int(code), self.t - 1)

    def belief_at_least(self, player, level):
        """Atoms where the player's posterior on H is at least `level`."""
        level = parse_fraction(level)
        high = self.cell_masses(player, self.high)
        every = self.cell_masses(player)
        holds = np.array([w > 0 and h * level.denominator >= level.numerator * w for h, w in zip(high, every)])

        return holds[self.cells[player - 1]]


def _weights(model, params, grid):
    """Integer atom weights over the common denominator, plus that denominator."""
    rows = {State.H: model.row(State.H), State.L: model.row(State.L)}
    scale = lcm(*(value.denominator for row in rows.values() for value in row))
    p0 = params.p0
    total = p0.denominator * scale ** grid.shape[1]
    dtype = np.int64 if total < _INT64_LIMIT else object
    weights = []

    for state, prior in ((State.H, p0.numerator), (State.L, p0.denominator - p0.numerator)):
        numerators = np.array([int(value * scale) for value in rows[state]], dtype=dtype)
        weights.append(prior * numerators[grid].prod(axis=1))

    return np.concatenate(weights).astype(dtype), total


def build_space(profile, params, model, t, atom_budget=DEFAULT_ATOM_BUDGET):
    """
    Enumerate every atom up to period t with its exact weight, playing the threshold
    profile period by period on exact posteriors.
    """
    if t < 1:
        raise ParameterError(f"t must be at least 1, got {t}")

    model.require_valid()
    required = atom_count(model, t)

    if required > atom_budget:
        fitting = _largest_t(model, atom_budget)
        raise BudgetError(
            f"{required} atoms needed for t = {t}, over the budget of {atom_budget}",
            required=required,
            budget=atom_budget,
            suggestion=f"reduce t to {fitting} (by {t - fitting})",
        )

    size = model.size
    grid = np.indices((size,) * (2 * t)).reshape(2 * t, -1).T
    weights, total = _weights(model, params, grid)
    grid = np.concatenate([grid, grid])
    count = grid.shape[0]
    high = np.arange(count) < count // 2
    signals = np.stack([grid[:, :t], grid[:, t:]], axis=1)
    actions = np.zeros((count, t, 2), dtype=bool)
    histories = np.zeros(count, dtype=np.int64)
    scheme = profile[0].scheme
    cells = (None, None)

    for k in range(1, t + 1):
        labels = {}

        for code in np.unique(histories).tolist():
            profiles = [ActionProfile.from_code(part) for part in _history_label(code, k - 1).split(".") if part]
            path, phase = path_from_history(scheme, profiles)
            labels[code] = (path, phase.investment and not phase.deviated)

        cells = []

        for player in (1, 2):
            own = signals[:, player - 1, :k]
            signal_code = (own * size ** np.arange(k)).sum(axis=1)
            _, inverse = np.unique(histories * size**k + signal_code, return_inverse=True)
            inverse = inverse.reshape(-1)
            cells.append(inverse)
            cell_count = int(inverse.max()) + 1
            cell_history = np.zeros(cell_count, dtype=np.int64)
            cell_history[inverse] = histories
            high_mass = np.zeros(cell_count, dtype=weights.dtype)
            every = np.zeros(cell_count, dtype=weights.dtype)
            np.add.at(high_mass, inverse, np.where(high, weights, 0))
            np.add.at(every, inverse, weights)
            invests = np.zeros(cell_count, dtype=bool)

            for cell in range(cell_count):
                path, investment = labels[int(cell_history[cell])]
                threshold = Fraction(profile[player - 1].threshold_for(encode(path, player)))

                if investment and threshold < 1 and every[cell] > 0:
                    invests[cell] = int(high_mass[cell]) * threshold.denominator >= threshold.numerator * int(every[cell])

            actions[:, k - 1, player - 1] = invests[inverse]

        codes = 2 * actions[:, k - 1, 0].astype(np.int64) + actions[:, k - 1, 1]

        if k < t:
            histories = histories + (codes << (2 * (k - 1)))

    log_debug(f"Built outcome space for t = {t}: **{count}** atoms", indent=1)

    return TruncatedOutcomeSpace(t, model, high, signals, actions, weights, total, tuple(cells), histories)


def q_belief_event(space, F, q, player):
    """Atoms whose player's information cell gives F conditional probability at least q."""
    q = parse_fraction(q)

    if not 0 < q <= 1:
        raise ParameterError(f"q must lie in (0, 1], got {q}")

    inside = space.cell_masses(player, F)
    every = space.cell_masses(player)
    holds = np.array([w > 0 and f * q.denominator >= q.numerator * w for f, w in zip(inside, every)])

    return holds[space.cells[player - 1]]


def mutual_q_belief(space, F, q):
    return q_belief_event(space, F, q, 1) & q_belief_event(space, F, q, 2)


def common_q_belief_iterates(space, F, q):
    """
    Descending iterates E_0 = B(F), E_(n+1) = E_n & B(E_n) of the joint q-belief
    operator B. The last one is the largest q-evident event inside B(F).
    """
    current = mutual_q_belief(space, F, q)
    iterates = [current]

    for _ in range(space.size + 1):
        following = current & mutual_q_belief(space, current, q)

        if np.array_equal(following, current):
            break

        iterates.append(following)
        current = following

    return iterates


def common_q_belief(space, F, q):
    return common_q_belief_iterates(space, F, q)[-1]


@dataclass
class EvidenceCertificate:
    evident: bool
    entails_target: bool
    contained: bool

    @property
    def certified(self):
        return self.evident and self.entails_target

    @property
    def consistent(self):
        return not self.certified or self.contained


def _subset(first, second):
    return not np.any(first & ~second)


def check_q_evident(space, F, q, target):
    """
    Check F within B(F) (q-evident) and F within B(target); together they certify F within
    the common q-belief of target, which is cross-checked against the direct fixpoint.
    """
    return EvidenceCertificate(
        _subset(F, mutual_q_belief(space, F, q)),
        _subset(F, mutual_q_belief(space, target, q)),
        _subset(F, common_q_belief(space, target, q)),
    )


@dataclass(frozen=True)
class CurvePoint:
    t: int
    state: State
    probability: Fraction

    @property
    def decimal(self):
        return float(self.probability)

    def row(self):
        return (self.t, self.state.value, self.probability.numerator, self.probability.denominator,
                repr(self.decimal))


@dataclass
class LearningCurve:
    q: Fraction
    points: list
    truncated: bool

    def crossing(self, state):
        """First computed t where P[C^q(state) | state] reaches q, or None."""
        for point in self.points:
            if point.state is State(state) and point.probability >= self.q:
                return point.t

        return None

    def values(self, state):
        return [point.probability for point in self.points if point.state is State(state)]


def _spaces(profile, params, model, t_range, atom_budget):
    for t in t_range:
        try:
            yield t, build_space(profile, params, model, t, atom_budget)
        except BudgetError as e:
            log_warning(f"Stopping at t = {t - 1}: {e} ({e.suggestion})")
            return


def common_learning_curve(profile, params, model, q, t_range, atom_budget=DEFAULT_ATOM_BUDGET):
    """P[C^q_t(state) | state] for each t in range and each state, exactly."""
    q = parse_fraction(q)
    t_range = list(t_range)
    points = []
    last = None

    for t, space in _spaces(profile, params, model, t_range, atom_budget):
        last = t

        for state in State:
            event = space.state_event(state)
            common = common_q_belief(space, event, q)
            points.append(CurvePoint(t, state, space.conditional(common, event)))

    truncated = bool(t_range) and last != t_range[-1]

    return LearningCurve(q, points, truncated)


def _expected_beliefs_by_cell(space, player, state):
    """Per cell: (mass under state, mass under state times the player's posterior on H)."""
    high = space.cell_masses(player, space.high)
    every = space.cell_masses(player)
    in_state = high if State(state) is State.H else every - high
    weighted = [Fraction(s * h, w) if w else Fraction(0) for s, h, w in zip(in_state, high, every)]

    return in_state, weighted


def expected_beliefs(space, state=State.H):
    """
    E[p_it | state, a^(t-1)] for both players at every history with positive
    probability under the state, keyed by history label.
    """
    result = {}

    for player in (1, 2):
        in_state, weighted = _expected_beliefs_by_cell(space, player, state)
        cells = space.cells[player - 1]
        count = len(in_state)
        cell_history = np.zeros(count, dtype=np.int64)
        cell_history[cells] = space.histories
        sums = {}

        for cell in range(count):
            code = int(cell_history[cell])
            mass, total = sums.get(code, (0, Fraction(0)))
            sums[code] = (mass + in_state[cell], total + weighted[cell])

        for code, (mass, total) in sums.items():
            if mass > 0:
                result.setdefault(space.history_label(code), [None, None])[player - 1] = total / mass

    return {label: tuple(values) for label, values in result.items()}


@dataclass
class MonotonicityRecord:
    history: str
    player: int
    before: Fraction
    after: Fraction

    @property
    def holds(self):
        return self.after >= self.before


def spine_belief_monotonicity(profile, params, model, t_max, atom_budget=DEFAULT_ATOM_BUDGET):
    """
    Compare E[p_it | H, h] with E[p_i(t+1) | H, h + (I, I)] for every history h with
    positive probability, for t + 1 <= t_max.
    """
    records = []
    previous = None

    for t, space in _spaces(profile, params, model, range(1, t_max + 1), atom_budget):
        current = expected_beliefs(space)

        if previous is not None:
            for label, before in previous.items():
                extended = f"{label}.II" if label else "II"
                after = current.get(extended)

                if after is None:
                    continue

                for player in (1, 2):
                    records.append(MonotonicityRecord(label, player, before[player - 1], after[player - 1]))

        previous = current

    return records


@dataclass
class LearningTime:
    target: Fraction
    values: list
    T_bar: int

    @property
    def found(self):
        return self.T_bar is not None


def individual_learning_time(profile, params, model, eps, t_range, atom_budget=DEFAULT_ATOM_BUDGET):
    """
    Smallest computed T such that E[p_it | H] >= 1 - (eps^2 / 2)^2 for both players at
    every computed t >= T (None when the last computed t still falls short).
    """
    eps = parse_fraction(eps)
    target = 1 - (eps**2 / 2) ** 2
    values = []

    for t, space in _spaces(profile, params, model, t_range, atom_budget):
        means = []

        for player in (1, 2):
            in_state, weighted = _expected_beliefs_by_cell(space, player, State.H)
            means.append(sum(weighted, Fraction(0)) / sum(in_state))

        values.append((t, *means))

    T_bar = None

    for t, first, second in reversed(values):
        if first < target or second < target:
            break

        T_bar = t

    return LearningTime(target, values, T_bar)


@dataclass
class EvidentEventRecord:
    history: str
    expected: tuple
    event_mass: Fraction
    common_mass: Fraction
    certificate: EvidenceCertificate
    level: Fraction

    @property
    def holds(self):
        return (
            self.certificate.certified
            and self.certificate.contained
            and self.event_mass >= self.level
            and self.common_mass >= self.level
        )


def evident_event_check(space, eps):
    """
    At every history whose conditional expected beliefs under H both reach 1 - eps^2,
    build the event "this history and both beliefs at least 1 - eps" and certify it is
    (1 - eps)^2-evident and inside the common (1 - eps)^2-belief of H.
    """
    eps = parse_fraction(eps)
    level = (1 - eps) ** 2
    high = space.state_event(State.H)
    common = common_q_belief(space, high, level)
    confident = space.belief_at_least(1, 1 - eps) & space.belief_at_least(2, 1 - eps)
    codes = {space.history_label(code): code for code in np.unique(space.histories).tolist()}
    records = []

    for label, expected in expected_beliefs(space).items():
        if min(expected) < 1 - eps**2:
            continue

        on_history = space.histories == codes[label]
        given = high & on_history
        event = on_history & confident
        records.append(
            EvidentEventRecord(
                label,
                expected,
                space.conditional(event, given),
                space.conditional(common, given),
                check_q_evident(space, event, level, high),
                level,
            )
        )

    return records
