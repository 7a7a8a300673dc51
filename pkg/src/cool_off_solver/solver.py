"""
Threshold policies, best responses and equilibrium checks.

A policy invests at an investment history iff the private belief reaches a
history-specific threshold. Best responses are computed by dynamic programming over
the public tree: at every node the player keeps a pair of state-conditional value
functions on a grid of own cumulative LLR. The opponent enters only through its
invest probabilities at the nodes, which do not depend on the player's own signals.
"""

import heapq
from dataclasses import dataclass, field, replace
from itertools import product
from math import ceil, exp, sqrt

import numpy as np
from scipy.signal import correlate
from scipy.stats import norm

from cool_off_solver.cooloff import CoolOffScheme, PhaseState, investment_floor, next_phase
from cool_off_solver.errors import ConsistencyError, ParameterError, ResolutionError
from cool_off_solver.game import Action, State
from cool_off_solver.history import OUTCOMES, TIE_TOLERANCE, PublicTree, encode, path_from_history
from cool_off_solver.lattice import DEFAULT_CLIP, KernelPowers
from cool_off_solver.logger import log_debug, log_info, log_warning
from cool_off_solver.util.numbers import logistic, logit

DEFAULT_GRID_POINTS = 2001
DEFAULT_FILTER_STEP = 0.01
"""Filter grid step for signal models without an exact LLR lattice."""

EXACT_SEQUENCE_LIMIT = 1 << 20
"""Most own-signal sequences enumerated by the exact invest-probability path."""

_VALUE_TOLERANCE = 1e-9
_SHAPE_TOLERANCE = 1e-7


@dataclass
class ThresholdPolicy:
    """
    Belief thresholds per investment history, keyed by the own-first history encoding
    ("II.NI" for (I, I) then the opponent investing alone). Cool-off histories and
    histories after a cool-off deviation always get N.
    """

    scheme: CoolOffScheme
    thresholds: dict = field(default_factory=dict)
    default_threshold: float = 1.0

    def __post_init__(self):
        for key, value in self.thresholds.items():
            if not 0 <= value <= 1:
                raise ParameterError(f"threshold for {key!r} must lie in [0, 1], got {value}")

        if not 0 <= self.default_threshold <= 1:
            raise ParameterError(f"default threshold must lie in [0, 1], got {self.default_threshold}")

    @classmethod
    def constant(cls, scheme, threshold):
        return cls(scheme, {}, float(threshold))

    @classmethod
    def never(cls, scheme):
        return cls.constant(scheme, 1.0)

    @classmethod
    def always(cls, scheme):
        return cls.constant(scheme, 0.0)

    def threshold_for(self, key):
        return self.thresholds.get(key, self.default_threshold)

    def is_tabulated(self, key):
        return key in self.thresholds

    def action(self, phase_state, key, belief):
        """The prescribed action at a history (its phase state and key) and belief."""
        if not phase_state.investment or phase_state.deviated:
            return Action.N

        threshold = self.threshold_for(key)

        if threshold >= 1:
            return Action.N

        return Action.I if belief >= threshold - 1e-12 else Action.N

    def max_change(self, other):
        keys = set(self.thresholds) | set(other.thresholds)
        changes = [abs(self.threshold_for(key) - other.threshold_for(key)) for key in keys]
        changes.append(abs(self.default_threshold - other.default_threshold))

        return max(changes)

    def with_thresholds(self, thresholds):
        return ThresholdPolicy(self.scheme, dict(thresholds), self.default_threshold)

    def to_dict(self):
        return {
            "scheme": self.scheme.to_dict(),
            "default_threshold": repr(float(self.default_threshold)),
            "thresholds": [[key, repr(float(value))] for key, value in sorted(self.thresholds.items())],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            CoolOffScheme.from_dict(data["scheme"]),
            {key: float(value) for key, value in data.get("thresholds", [])},
            float(data["default_threshold"]),
        )


def _shape_violations(beliefs, values, tol):
    """(monotonicity, convexity) violation counts of values sampled at increasing beliefs."""
    gaps = np.diff(beliefs)
    usable = gaps > 1e-9
    gaps = gaps[usable]
    rises = np.diff(values)[usable]
    monotone = int(np.count_nonzero(rises < -tol))

    if gaps.size < 2:
        return monotone, 0

    slopes = rises / gaps
    convex = int(np.count_nonzero(np.diff(slopes) * gaps[1:] < -tol))

    return monotone, convex


@dataclass(frozen=True)
class ContinuationValue:
    """
    Ex-ante state-conditional values (normalized discounted payoffs) of a player, plus
    the first investment node's value as a function of the belief there.
    """

    vH: float
    vL: float
    belief_grid: np.ndarray
    values: np.ndarray

    def shape_violations(self, tol=_SHAPE_TOLERANCE):
        return _shape_violations(self.belief_grid, self.values, tol)

    def ex_ante(self, params):
        return params.p0f * self.vH + (1 - params.p0f) * self.vL


@dataclass
class SolverSettings:
    horizon: int = 400
    grid_points: int = DEFAULT_GRID_POINTS
    clip: float = DEFAULT_CLIP
    min_weight: float = 1e-7
    node_budget: int = 20_000
    filter_step: float = DEFAULT_FILTER_STEP
    bracket_width: float = 0.05
    t_exact: int = 10
    max_iters: int = 30
    tol: float = 1e-4
    symmetric: bool = True
    audit_histories: int = 6


@dataclass
class DPReport:
    expanded: int = 0
    leaves: int = 0
    columns: int = 0
    crossing_violations: list = field(default_factory=list)
    floor_violations: list = field(default_factory=list)
    bound_violations: list = field(default_factory=list)
    monotone_violations: int = 0
    convexity_violations: int = 0
    positive_low_state: int = 0
    unbracketed: int = 0

    @property
    def clean(self):
        return not (
            self.crossing_violations
            or self.floor_violations
            or self.bound_violations
            or self.monotone_violations
            or self.convexity_violations
            or self.positive_low_state
        )

    def summary(self):
        return {
            "expanded_nodes": self.expanded,
            "leaf_nodes": self.leaves,
            "columns_checked": self.columns,
            "crossing_violations": len(self.crossing_violations),
            "floor_violations": len(self.floor_violations),
            "bound_violations": len(self.bound_violations),
            "monotone_violations": self.monotone_violations,
            "convexity_violations": self.convexity_violations,
            "positive_low_state_values": self.positive_low_state,
            "unbracketed_columns": self.unbracketed,
        }


@dataclass
class BestResponse:
    policy: ThresholdPolicy
    value: ContinuationValue
    report: DPReport


@dataclass(frozen=True)
class TailValues:
    """State-conditional values (H, L) assigned past the solved tree, per own action."""

    invest: tuple
    idle: tuple


def tail_values(params, derived, qH):
    """
    Values of the two actions at a history past the expanded tree.

    Not investing leads into a cool-off of at least T0 periods, so its value under H is
    bounded by delta^T0; investing pays -c at least once under L, so its value there is
    bounded by -(1 - delta) c. Both are upper bounds on the true continuation values.
    Investing under H is valued by investing until the first failure against the
    opponent's invest probability `qH`.
    """
    delta, c = params.deltaf, params.cf

    return TailValues(
        invest=((1 - delta) * (qH - c) / (1 - delta * qH), -(1 - delta) * c),
        idle=(delta**derived.T0, 0.0),
    )


class _ValueGrid:
    """Uniform own-LLR grid; for lattice models the step divides the lattice step."""

    def __init__(self, model, grid_points, clip):
        if grid_points < 3:
            raise ResolutionError(f"a belief grid needs at least 3 points, got {grid_points}")

        half = (grid_points - 1) // 2
        lattice = model.lattice_step()

        if lattice:
            self.step = lattice / max(1, round(half * lattice / clip))
        else:
            self.step = clip / half

        self.K = int(ceil(clip / self.step - 1e-9))
        self.ell = self.step * np.arange(-self.K, self.K + 1)

    def fine_kernel(self, law):
        """Place an LLR law on the grid (split rounding), folding beyond +/- 2K."""
        positions = law.values / self.step
        low = np.floor(positions + 1e-9).astype(int)
        fraction = positions - low
        fraction[np.abs(fraction) < 1e-9] = 0.0
        bound = 2 * self.K
        low_index = np.clip(low, -bound, bound)
        high_index = np.clip(low + 1, -bound, bound)
        o_min = int(low_index.min())
        o_max = int(high_index.max())
        weights = np.zeros(o_max - o_min + 1)
        np.add.at(weights, low_index - o_min, law.probs * (1 - fraction))
        np.add.at(weights, high_index - o_min, law.probs * fraction)

        return o_min, weights

    def expect(self, values, kernel):
        """E[V(ell + S)] at every grid point, with V held constant beyond the edges."""
        o_min, weights = kernel
        pad = 2 * self.K
        padded = np.pad(values, pad, mode="edge")
        out = correlate(padded, weights, mode="valid")
        start = pad + o_min

        return out[start : start + 2 * self.K + 1]


class _Solver:
    """One dynamic program over a public tree, from the seat of player 1."""

    def __init__(self, tree, params, derived, settings):
        self.tree = tree
        self.params = params
        self.derived = derived
        self.settings = settings
        self.delta = params.deltaf
        self.c = params.cf
        self.grid = _ValueGrid(tree.model, settings.grid_points, settings.clip)
        self._laws = {state: KernelPowers(tree.model, state, tree.step, trim=True) for state in State}
        self._kernels = {}
        self._decide = None
        self.expanded = []
        self._expanded_ids = set()

    def kernel(self, state, periods):
        key = (state, periods)

        if key not in self._kernels:
            self._kernels[key] = self.grid.fine_kernel(self._laws[state](periods))

        return self._kernels[key]

    def opponent_invest(self, node):
        return tuple(self.tree.invest_probability(node, 2, state) for state in State)

    def weight(self, node):
        reach = max(exp(value) for value in node.filters[1].log_likelihood)

        return reach * self.delta ** (node.period - 1)

    def expand(self):
        """Expand public histories in order of discounted reach until the node budget is spent."""
        tree = self.tree
        heap = [(-self.weight(tree.root), 0, tree.root)]
        counter = 1

        while heap and len(self.expanded) < self.settings.node_budget:
            negative, _, node = heapq.heappop(heap)

            if -negative < self.settings.min_weight or node.period > self.settings.horizon:
                continue

            self.expanded.append(node)
            self._expanded_ids.add(id(node))
            q = self.opponent_invest(node)

            for outcome in OUTCOMES:
                chances = q if outcome[1] == "I" else tuple(1 - x for x in q)

                if max(chances) <= 0:
                    continue

                child = tree.child(node, outcome)
                heapq.heappush(heap, (-self.weight(child), counter, child))
                counter += 1

        log_debug(f"Expanded **{len(self.expanded)}** public histories ({tree.node_count} built)", indent=1)

    def is_expanded(self, node):
        return id(node) in self._expanded_ids

    def belief(self, node, ell):
        return logistic(self.tree.prior + ell + node.evidence_about(2))

    def leaf_values(self, node):
        """Tail values past the expanded tree; see `tail_values`."""
        tail = tail_values(self.params, self.derived, self.opponent_invest(node)[0])
        (invest_H, invest_L), (idle_H, idle_L) = tail.invest, tail.idle
        ell = self.grid.ell

        if self._decide is None:
            p = self.belief(node, ell)
            invest = p * invest_H + (1 - p) * invest_L >= p * idle_H + (1 - p) * idle_L
        else:
            invest = self._decide(node, ell)

        return np.where(invest, invest_H, idle_H), np.where(invest, invest_L, idle_L)

    def continuation(self, node, outcome, values):
        child = node.children.get(outcome)

        if child is None:
            return None

        periods = self.tree.periods_after(node, outcome)
        pair = values.pop(id(child), None) if self.is_expanded(child) else None

        if pair is None:
            pair = self.leaf_values(child)

        return tuple(self.grid.expect(v, self.kernel(state, periods)) for v, state in zip(pair, State))

    def backup(self, node, values):
        """Action values at a node: {"I": (VH, VL), "N": (VH, VL)} over the grid."""
        q = dict(zip(State, self.opponent_invest(node)))
        delta = self.delta
        failure_discount = delta ** (self.tree.scheme.T(node.period) + 1)
        action_values = {}

        for own in ("I", "N"):
            together = self.continuation(node, own + "I", values)
            alone = self.continuation(node, own + "N", values)
            pair = []

            for index, state in enumerate(State):
                if own == "I":
                    stage = q[state] - self.c if state is State.H else -self.c
                    together_discount = delta
                else:
                    stage = 0.0
                    together_discount = failure_discount

                total = np.full_like(self.grid.ell, (1 - delta) * stage)

                if together is not None and q[state] > 0:
                    total = total + q[state] * together_discount * together[index]

                if alone is not None and q[state] < 1:
                    total = total + (1 - q[state]) * failure_discount * alone[index]

                pair.append(total)

            action_values[own] = tuple(pair)

        return action_values

    def threshold(self, node, invest, action_values, report):
        """Belief threshold of a column: bisection between the bracketing grid points."""
        ell = self.grid.ell
        (VH_I, VL_I), (VH_N, VL_N) = action_values["I"], action_values["N"]
        p_bar = self.derived.p_barf
        switches = np.flatnonzero(np.diff(invest.astype(int)))

        if switches.size > 1 or (switches.size == 1 and invest[0]):
            report.crossing_violations.append(node.key(1))

        if not invest.any():
            report.unbracketed += 1

            return p_bar if float(self.belief(node, ell[-1])) < p_bar else 1.0

        if invest.all():
            report.unbracketed += 1

            return min(float(self.belief(node, ell[0])), p_bar)

        first = int(np.argmax(invest))
        low, high = ell[first - 1], ell[first]
        width = float(self.belief(node, high) - self.belief(node, low))

        if width > self.settings.bracket_width:
            raise ResolutionError(
                f"belief grid too coarse at history {node.key(1) or '(root)'}: "
                f"threshold bracket spans {width:.3g} in belief; raise grid_points"
            )

        def gain(x):
            p = float(self.belief(node, x))
            dH = np.interp(x, ell, VH_I) - np.interp(x, ell, VH_N)
            dL = np.interp(x, ell, VL_I) - np.interp(x, ell, VL_N)

            return p * dH + (1 - p) * dL

        for _ in range(60):
            middle = 0.5 * (low + high)

            if gain(middle) >= 0:
                high = middle
            else:
                low = middle

        return float(self.belief(node, high))

    def solve(self, decide=None):
        """
        Backward induction over the expanded nodes (post-order, (I, I) child first).

        With `decide(node, ell) -> bool array` the player's actions are fixed instead of
        optimized. Returns (thresholds, ContinuationValue, DPReport).
        """
        if not self.expanded:
            self.expand()

        self._decide = decide
        report = DPReport(expanded=len(self.expanded))
        thresholds = {}
        values = {}
        floor = float(investment_floor(self.params))
        bound = 1 - self.derived.epsf
        root = self.tree.root
        stack = [(root, False)] if self.is_expanded(root) else []

        while stack:
            node, ready = stack.pop()

            if not ready:
                stack.append((node, True))

                for outcome in reversed(OUTCOMES):
                    child = node.children.get(outcome)

                    if child is not None and self.is_expanded(child):
                        stack.append((child, False))

                continue

            action_values = self.backup(node, values)
            (VH_I, VL_I), (VH_N, VL_N) = action_values["I"], action_values["N"]
            p = self.belief(node, self.grid.ell)

            if decide is None:
                invest = p * (VH_I - VH_N) + (1 - p) * (VL_I - VL_N) >= -1e-15
                threshold = self.threshold(node, invest, action_values, report)
                thresholds[node.key(1)] = threshold
                report.columns += 1

                if invest.any() and threshold < floor - 1e-9:
                    report.floor_violations.append((node.key(1), threshold))

                if self.opponent_invest(node)[0] >= bound and threshold > self.derived.p_barf + 1e-9:
                    report.bound_violations.append((node.key(1), threshold))
            else:
                invest = decide(node, self.grid.ell)

            VH = np.where(invest, VH_I, VH_N)
            VL = np.where(invest, VL_I, VL_N)
            monotone, convex = _shape_violations(p, p * VH + (1 - p) * VL, _SHAPE_TOLERANCE)
            report.monotone_violations += monotone
            report.convexity_violations += convex
            report.positive_low_state += int(np.count_nonzero(VL > _VALUE_TOLERANCE))
            values[id(node)] = (VH, VL)

        report.leaves = sum(
            1 for node in self.expanded for child in node.children.values() if not self.is_expanded(child)
        )

        return thresholds, self.ex_ante(values.get(id(root))), report

    def ex_ante(self, pair):
        root = self.tree.root

        if pair is None:
            pair = self.leaf_values(root)

        ex_ante = []

        for v, state in zip(pair, State):
            expected = self.grid.expect(v, self.kernel(state, root.period))
            ex_ante.append(float(self.delta ** (root.period - 1) * expected[self.grid.K]))

        p = self.belief(root, self.grid.ell)

        return ContinuationValue(ex_ante[0], ex_ante[1], p, p * pair[0] + (1 - p) * pair[1])


def _settings(settings, **overrides):
    settings = settings or SolverSettings()
    overrides = {key: value for key, value in overrides.items() if value is not None}

    return replace(settings, **overrides) if overrides else settings


def _solver(params, derived, model, scheme, own, opponent, settings):
    tree = PublicTree(params, model, scheme, (own, opponent), settings.filter_step, settings.clip)

    return _Solver(tree, params, derived, settings)


def best_response_thresholds(opponent, params, derived, model, horizon=None, grid=None, own_conjecture=None,
                             settings=None):
    """
    Thresholds of a best response to the opponent's policy.

    `own_conjecture` is the policy the opponent believes this player uses (it shapes the
    opponent's beliefs and cuts); it defaults to the opponent's own policy, as in a
    symmetric profile. The returned policy is keyed own-first, so it can be played from
    either seat.
    """
    settings = _settings(settings, horizon=horizon, grid_points=grid)
    solver = _solver(params, derived, model, opponent.scheme, own_conjecture or opponent, opponent, settings)
    thresholds, value, report = solver.solve()
    policy = ThresholdPolicy(opponent.scheme, thresholds, derived.p_barf)

    return BestResponse(policy, value, report)


def _fixed_decisions(policy, tree):
    def decide(node, ell):
        threshold = policy.threshold_for(node.key(1))
        cut = logit(threshold) - tree.prior - node.evidence_about(2)

        return ell >= cut - TIE_TOLERANCE

    return decide


def evaluate_policy(actual, conjecture, opponent, params, derived, model, settings=None, solver=None):
    """Ex-ante values of playing `actual` while the opponent believes `conjecture` is played."""
    if solver is None:
        settings = _settings(settings)
        solver = _solver(params, derived, model, opponent.scheme, conjecture, opponent, settings)

    _, value, _ = solver.solve(_fixed_decisions(actual, solver.tree))

    return value


@dataclass
class DeviationAudit:
    base: float
    gains: dict

    @property
    def max_gain(self):
        return max(self.gains.values(), default=0.0)

    @property
    def worst(self):
        return max(self.gains, key=self.gains.get, default=None)


def _shift(threshold, units):
    if threshold <= 0 or threshold >= 1:
        return threshold

    return float(logistic(logit(threshold) + units))


def deviation_audit(own, opponent, params, derived, model, settings=None):
    """
    Gains of a named set of deviations from `own` against `opponent`: never invest,
    always invest in investment phases, every threshold moved one grid step up or down,
    and one-shot flips at the most likely investment histories.
    """
    settings = _settings(settings)
    solver = _solver(params, derived, model, own.scheme, own, opponent, settings)
    solver.expand()
    base = evaluate_policy(own, own, opponent, params, derived, model, solver=solver).ex_ante(params)
    step = solver.grid.step
    deviants = {
        "never_invest": ThresholdPolicy.never(own.scheme),
        "always_invest": ThresholdPolicy.always(own.scheme),
    }

    for units, name in ((step, "threshold_up"), (-step, "threshold_down")):
        shifted = {node.key(1): _shift(own.threshold_for(node.key(1)), units) for node in solver.expanded}
        deviants[name] = ThresholdPolicy(own.scheme, shifted, _shift(own.default_threshold, units))

    for node in solver.expanded[: settings.audit_histories]:
        key = node.key(1)

        for flipped, label in ((1.0, "skip"), (0.0, "invest")):
            table = dict(own.thresholds)
            table[key] = flipped
            deviants[f"one_shot_{label}@{key or 'root'}"] = own.with_thresholds(table)

    gains = {}

    for name, deviant in deviants.items():
        value = evaluate_policy(deviant, own, opponent, params, derived, model, solver=solver)
        gains[name] = value.ex_ante(params) - base

    return DeviationAudit(base, gains)


@dataclass
class ConvergenceReport:
    converged: bool
    iterations: int
    changes: list
    symmetric: bool
    oscillation: str = None
    audit: DeviationAudit = None
    dp_reports: list = field(default_factory=list)
    values: tuple = ()

    def summary(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "symmetric": self.symmetric,
            "final_change": self.changes[-1] if self.changes else None,
            "oscillation": self.oscillation,
            "max_deviation_gain": None if self.audit is None else self.audit.max_gain,
            "worst_deviation": None if self.audit is None else self.audit.worst,
        }


def _same_policy(first, second):
    return first is second or (
        first.thresholds == second.thresholds and first.default_threshold == second.default_threshold
    )


def iterate_equilibrium(initial, params, derived, model, horizon=None, max_iters=None, tol=None, settings=None):
    """
    Best-response iteration from an initial policy pair until the largest threshold
    change drops below tol.

    A symmetric start (with settings.symmetric) updates both seats with one best
    response per round; otherwise the seats alternate. Non-convergence is reported with
    a period-two cycle check rather than raised.
    """
    settings = _settings(settings, horizon=horizon, max_iters=max_iters, tol=tol)
    first, second = initial
    symmetric = settings.symmetric and _same_policy(first, second)
    history = [(first, second)]
    changes = []
    reports = []
    converged = False

    for iteration in range(1, settings.max_iters + 1):
        if symmetric:
            response = best_response_thresholds(first, params, derived, model, settings=settings)
            new_first = new_second = response.policy
            reports.append(response.report)
        else:
            response = best_response_thresholds(second, params, derived, model, own_conjecture=first,
                                                settings=settings)
            new_first = response.policy
            other = best_response_thresholds(new_first, params, derived, model, own_conjecture=second,
                                             settings=settings)
            new_second = other.policy
            reports.extend([response.report, other.report])

        change = max(new_first.max_change(first), new_second.max_change(second))
        changes.append(change)
        first, second = new_first, new_second
        history.append((first, second))
        log_info(f"Iteration {iteration}: max threshold change **{change:.3g}**", indent=1)

        if change < settings.tol:
            converged = True
            break

    oscillation = None

    if not converged:
        if len(history) >= 3:
            back = max(history[-1][0].max_change(history[-3][0]), history[-1][1].max_change(history[-3][1]))

            if back < settings.tol:
                oscillation = f"period-two cycle: thresholds repeat every 2 iterations within {back:.3g}"
            else:
                oscillation = "no cycle detected; last changes " + ", ".join(f"{c:.3g}" for c in changes[-3:])
        else:
            oscillation = "too few iterations to diagnose"

        log_warning(f"Best-response iteration did not converge: {oscillation}")

    audit = deviation_audit(first, second, params, derived, model, settings)
    values = (
        evaluate_policy(first, first, second, params, derived, model, settings),
        evaluate_policy(second, second, first, params, derived, model, settings),
    )

    return (first, second), ConvergenceReport(
        converged, len(changes), changes, symmetric, oscillation, audit, reports, values
    )


def _own_sequences(model, t):
    count = model.size**t

    if count > EXACT_SEQUENCE_LIMIT:
        return None

    sequences = np.array(list(product(range(model.size), repeat=t)), dtype=int).reshape(count, t)
    llr = np.cumsum(model.llrs[sequences], axis=1)
    probabilities = {state: np.prod(model.probabilities(state)[sequences], axis=1) for state in State}

    return llr, probabilities


def _enumerated_invest_prob(policies, params, model, history, state):
    """
    Player 1's invest probability by summing over every own-signal sequence of length t.

    Both players' surviving sequences are tracked with masks; the action evidence a
    player draws from the other's record is the log ratio of the other mask's masses.
    """
    t = len(history) + 1
    enumerated = _own_sequences(model, t)

    if enumerated is None:
        return None

    llr, probabilities = enumerated
    masks = [np.ones(llr.shape[0], dtype=bool), np.ones(llr.shape[0], dtype=bool)]
    prior = params.prior_log_odds

    def evidence(mask):
        high = probabilities[State.H][mask].sum()
        low = probabilities[State.L][mask].sum()

        if high <= 0 and low <= 0:
            raise ConsistencyError("history has probability zero under the policies")

        with np.errstate(divide="ignore"):
            return float(np.log(high) - np.log(low))

    def cuts(path):
        return [
            logit(policies[k].threshold_for(encode(path, k + 1))) - prior - evidence(masks[1 - k])
            for k in (0, 1)
        ]

    path = []
    phase = PhaseState()

    for period, profile in enumerate(history, start=1):
        if phase.investment:
            for k, cut in enumerate(cuts(tuple(path))):
                invests = llr[:, period - 1] >= cut - TIE_TOLERANCE
                masks[k] &= invests == (profile[k + 1] is Action.I)

            path.append(profile.code)

        phase = next_phase(policies[0].scheme, phase, profile)

    cut = cuts(tuple(path))[0]
    weights = probabilities[State(state)]
    total = weights[masks[0]].sum()

    if total <= 0:
        raise ConsistencyError(f"history has probability zero under state {State(state).value}")

    invests = llr[:, t - 1] >= cut - TIE_TOLERANCE

    return float(weights[masks[0] & invests].sum() / total)


def conditional_invest_prob(policy, model, history, state, params, opponent=None, player=1, method="auto",
                            t_exact=10, settings=None):
    """
    P(player invests at period t | state, a^(t-1)) under the profile.

    `policy` is the player's policy and `opponent` the other seat's (defaulting to the
    same policy); the history is written player 1 first. method="enumerate" sums over
    own signal sequences, method="filter" reads the public tree, and "auto" enumerates
    while t <= t_exact.
    """
    settings = _settings(settings)
    opponent = opponent or policy
    history = list(history)

    if player == 2:
        history = [profile.swapped() for profile in history]

    _, phase = path_from_history(policy.scheme, history)

    if not phase.investment or phase.deviated:
        return 0.0

    policies = (policy, opponent)
    t = len(history) + 1

    if method == "enumerate" or (method == "auto" and t <= t_exact):
        value = _enumerated_invest_prob(policies, params, model, history, state)

        if value is not None:
            return value

        if method == "enumerate":
            raise ParameterError(f"too many own-signal sequences to enumerate at t = {t}")

    tree = PublicTree(params, model, policy.scheme, policies, settings.filter_step, settings.clip)
    node = tree.node_for_history(history)

    if node.off_path or node.reach(state) <= 0:
        raise ConsistencyError("history has probability zero under the policies")

    return tree.invest_probability(node, 1, state)


@dataclass
class MembershipReport:
    passed: bool
    checked: int
    violations: list


def verify_class_membership(policy, model, derived, depth, params, opponent=None, settings=None):
    """
    Check P(invest | H, history) >= 1 - eps at every investment history reached with
    positive probability under H, up to `depth` investment periods deep.
    """
    settings = _settings(settings)
    tree = PublicTree(params, model, policy.scheme, (policy, opponent or policy), settings.filter_step,
                      settings.clip)
    bound = 1 - derived.epsf
    frontier = [tree.root]
    checked = 0
    violations = []

    while frontier:
        node = frontier.pop()

        if node.off_path or node.reach(State.H) <= 0:
            continue

        checked += 1
        probability = tree.invest_probability(node, 1, State.H)

        if probability < bound - 1e-12:
            violations.append(
                {
                    "history": node.key(1) or "(first investment period)",
                    "period": node.period,
                    "invest_probability": probability,
                }
            )

        if node.depth < depth:
            for outcome in OUTCOMES:
                if tree.outcome_probability(node, outcome, State.H) > 0:
                    frontier.append(tree.child(node, outcome))

    return MembershipReport(not violations, checked, violations)


def wilson_interval(successes, trials, confidence=0.99):
    """Wilson score interval for a binomial rate."""
    if trials == 0:
        return 0.0, 1.0

    z = norm.ppf(0.5 + confidence / 2)
    rate = successes / trials
    denominator = 1 + z**2 / trials
    centre = (rate + z**2 / (2 * trials)) / denominator
    half = z * sqrt(rate * (1 - rate) / trials + z**2 / (4 * trials**2)) / denominator

    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class IndependenceReport:
    applicable: bool
    estimates: list
    enumerated: float
    consistent: bool
    note: str = ""


def verify_independence_claim(policy, variants, model, history, params, episodes=1_000_000, seed=0,
                              conjecture=None, confidence=0.99, settings=None):
    """
    Monte Carlo check that P(player 1 invests | H, history) does not depend on which
    opponent policy produced the history.

    Player 1's map from private histories to actions is fixed by `policy` and its
    `conjecture` about the opponent (defaulting to the first variant). The opponent
    reads player 1's record with `policy`; only its own thresholds change across
    variants.
    """
    settings = _settings(settings)
    conjecture = conjecture or variants[0]
    history = list(history)
    scheme = policy.scheme
    _, phase = path_from_history(scheme, history)

    if not phase.investment or phase.deviated:
        raise ParameterError("the history must end in an investment phase")

    baseline = PublicTree(params, model, scheme, (policy, conjecture), settings.filter_step, settings.clip)
    t = len(history) + 1
    enumerated = conditional_invest_prob(policy, model, history, State.H, params, conjecture, settings=settings)
    estimates = []

    for index, variant in enumerate(variants):
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        draws = rng.choice(model.size, size=(episodes, 2, t), p=model.probabilities(State.H))
        llr = np.cumsum(model.llrs[draws], axis=2)
        keep = np.ones(episodes, dtype=bool)
        node = baseline.root
        phase = PhaseState()

        for period, profile in enumerate(history, start=1):
            if phase.investment:
                own_cut = baseline.cuts(node)[0]
                variant_cut = (
                    logit(variant.threshold_for(node.key(2))) - params.prior_log_odds - node.evidence_about(1)
                )
                keep &= (llr[:, 0, period - 1] >= own_cut - TIE_TOLERANCE) == (profile.a1 is Action.I)
                keep &= (llr[:, 1, period - 1] >= variant_cut - TIE_TOLERANCE) == (profile.a2 is Action.I)
                node = baseline.child(node, profile.code)

            phase = next_phase(scheme, phase, profile)

        kept = int(keep.sum())

        if kept == 0:
            return IndependenceReport(False, estimates, enumerated, False, f"history not reached under variant {index}")

        invests = int(np.count_nonzero(llr[keep, 0, t - 1] >= baseline.cuts(node)[0] - TIE_TOLERANCE))
        low, high = wilson_interval(invests, kept, confidence)
        estimates.append({"variant": index, "episodes": kept, "rate": invests / kept, "low": low, "high": high})

    overlap = max(e["low"] for e in estimates) <= min(e["high"] for e in estimates)
    covers = all(e["low"] - 1e-12 <= enumerated <= e["high"] + 1e-12 for e in estimates)

    return IndependenceReport(True, estimates, enumerated, overlap and covers)
