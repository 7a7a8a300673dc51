"""
Public investment histories.

Cool-offs are deterministic (both players play N), so the public history that matters
is the sequence of action profiles played in investment periods. Each node of the tree
is one investment period; it carries, for both players, the filter over that player's
cumulative own-signal LLR given the public history, from which the other player's
action evidence and the investment cut follow.

Outcomes are written player 1 first ("IN" means player 1 invested alone). A player's
policy sees the history in its own-first encoding, so one threshold table can serve
either seat.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from cool_off_solver.beliefs import OpponentFilter
from cool_off_solver.cooloff import PhaseState, next_phase
from cool_off_solver.errors import ParameterError
from cool_off_solver.game import Action, State
from cool_off_solver.lattice import DEFAULT_CLIP, DEFAULT_GRID_STEP, KernelPowers, model_step
from cool_off_solver.util.numbers import logit

OUTCOMES = ("II", "IN", "NI", "NN")
TIE_TOLERANCE = 1e-9
"""An own LLR within this distance below the cut still counts as reaching it."""


def swap_code(code):
    return code[::-1]


def encode(path, player):
    """The path in the given player's own-first encoding."""
    if player == 1:
        return ".".join(path)

    return ".".join(swap_code(code) for code in path)


def path_from_history(scheme, history):
    """
    Split an action history into its investment-period outcomes.

    Returns (path, phase state after the history). The phase state flags a deviation
    when anyone invested during a cool-off.
    """
    state = PhaseState()
    path = []

    for profile in history:
        if state.investment:
            path.append(profile.code)

        state = next_phase(scheme, state, profile)

    return tuple(path), state


@dataclass(eq=False)
class HistoryNode:
    path: tuple
    period: int
    filters: tuple
    children: dict = field(default_factory=dict, repr=False)
    spine: object = field(default=None, repr=False)
    _cuts: tuple = field(default=None, repr=False)

    @property
    def depth(self):
        return len(self.path)

    def key(self, player):
        return encode(self.path, player)

    def evidence_about(self, player):
        """Action evidence (log-likelihood ratio, H against L) of a player's record."""
        return self.filters[player - 1].evidence

    def reach(self, state):
        """P(the public path | state) under the tree's profile."""
        index = 0 if State(state) is State.H else 1

        return float(np.exp(sum(f.log_likelihood[index] for f in self.filters)))

    @property
    def off_path(self):
        return any(f.off_path for f in self.filters)


@dataclass(frozen=True)
class SpineSegment:
    """
    Consecutive nodes reached by (I, I) from a start node, with both players' cuts.
    When `absorbed`, every later (I, I) node repeats the last cuts and never fails in
    the filter model.
    """

    nodes: tuple
    cuts: np.ndarray
    absorbed: bool

    @property
    def periods(self):
        return self.nodes[0].period + np.arange(len(self.nodes))


class PublicTree:
    """
    Lazily built tree of investment-period nodes for one policy pair.

    The policies must offer `threshold_for(key)` and `is_tabulated(key)`.
    """

    def __init__(self, params, model, scheme, policies, grid_step=DEFAULT_GRID_STEP, clip=DEFAULT_CLIP):
        model.require_valid()

        self.params = params
        self.model = model
        self.scheme = scheme
        self.policies = tuple(policies)
        self.clip = float(clip)
        self.prior = params.prior_log_odds
        step = model_step(model, grid_step)
        self.step = step
        self._laws = {state: KernelPowers(model, state, step, trim=True) for state in State}
        self._root = None
        self.node_count = 0

        if len(self.policies) != 2:
            raise ParameterError("a public tree needs one policy per player")

    def _advance(self, filters, periods):
        kernels = {state: self._laws[state](periods) for state in State}
        advanced = []

        for f in filters:
            moved = f.advance(kernels)
            advanced.append(replace(moved, rows=tuple(row.normalized() for row in moved.rows)))

        return tuple(advanced)

    def _node(self, path, period, filters):
        self.node_count += 1

        return HistoryNode(path, period, filters)

    @property
    def root(self):
        if self._root is None:
            start = OpponentFilter.initial(self.model, self.step, self.clip)
            filters = self._advance((start, start), self.scheme.first_investment_period)
            self._root = self._node((), self.scheme.first_investment_period, filters)

        return self._root

    def threshold(self, node, player):
        return self.policies[player - 1].threshold_for(node.key(player))

    def cuts(self, node):
        """Own-LLR cuts (player 1, player 2) at which each player's belief hits its threshold."""
        if node._cuts is None:
            node._cuts = tuple(
                logit(self.threshold(node, player)) - self.prior - node.evidence_about(3 - player)
                for player in (1, 2)
            )

        return node._cuts

    def invest_probability(self, node, player, state):
        """P(player invests at the node | state, public path)."""
        cut = self.cuts(node)[player - 1]

        return node.filters[player - 1].row(state).mass_at_or_above(cut, TIE_TOLERANCE)

    def outcome_probability(self, node, outcome, state):
        probability = 1.0

        for player, action in zip((1, 2), outcome):
            invest = self.invest_probability(node, player, state)
            probability *= invest if action == "I" else 1 - invest

        return probability

    def periods_after(self, node, outcome):
        """Periods from the node to the next investment period after an outcome."""
        return 1 if outcome == "II" else self.scheme.T(node.period) + 1

    def child(self, node, outcome):
        if outcome not in OUTCOMES:
            raise ParameterError(f"unknown outcome code: {outcome!r}")

        found = node.children.get(outcome)

        if found is not None:
            return found

        cuts = self.cuts(node)
        observed = []

        for f, action, cut in zip(node.filters, outcome, cuts):
            updated, _ = f.observe(Action(action), cut)
            observed.append(updated)

        periods = self.periods_after(node, outcome)
        child = self._node(node.path + (outcome,), node.period + periods, self._advance(observed, periods))
        node.children[outcome] = child

        return child

    def node_for(self, path):
        node = self.root

        for outcome in path:
            node = self.child(node, outcome)

        return node

    def node_for_history(self, history):
        """The node of an action history a^(t-1) whose period t is an investment period."""
        path, state = path_from_history(self.scheme, history)

        if not state.investment:
            raise ParameterError("the history does not end in an investment phase")

        return self.node_for(path)

    def is_absorbing(self, node):
        """
        Both policies are past their tables and both cuts lie below the saturated
        support: (I, I) is then certain and uninformative at every later spine node.
        """
        for player in (1, 2):
            if self.policies[player - 1].is_tabulated(node.key(player)):
                return False

        return all(cut < -self.clip - 2 * self.step for cut in self.cuts(node))

    def jump(self, node, periods):
        """The node `periods` (I, I) steps down an absorbed spine."""
        if periods == 0:
            return node

        filters = self._advance(node.filters, periods)

        return self._node(node.path + ("II",) * periods, node.period + periods, filters)

    def spine_segment(self, node, until):
        """The (I, I) spine from a node up to period `until` or absorption."""
        segment = node.spine

        if segment is not None and (segment.absorbed or segment.nodes[-1].period >= until):
            return segment

        nodes = list(segment.nodes) if segment is not None else [node]
        absorbed = False

        while True:
            last = nodes[-1]

            if self.is_absorbing(last):
                absorbed = True
                break

            if last.period >= until:
                break

            nodes.append(self.child(last, "II"))

        cuts = np.array([self.cuts(n) for n in nodes])
        segment = SpineSegment(tuple(nodes), cuts, absorbed)
        node.spine = segment

        return segment
