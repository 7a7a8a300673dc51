"""
Bayesian belief machinery.

A player's private belief in H is kept in log-odds: the prior, plus the own-signal LLRs,
plus the evidence carried by the opponent's actions. The opponent's actions are
threshold-censored views of the opponent's private evidence, so the player tracks a
filter: per state, the distribution of the opponent's cumulative LLR given everything
the opponent did so far. The log-likelihood of the opponent's action record under each
state is the action evidence.
"""

from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb, inf, log

import numpy as np
from scipy.special import gammaln

from cool_off_solver.errors import OffPathError, ParameterError
from cool_off_solver.game import Action, State
from cool_off_solver.lattice import (
    DEFAULT_CLIP,
    DEFAULT_GRID_STEP,
    GridPMF,
    KernelPowers,
    check_resolution,
    model_step,
    signal_kernel,
)
from cool_off_solver.signals import log_likelihood_ratio
from cool_off_solver.util.numbers import logistic, logit

EXACT_ATOM_BUDGET = 20_000
"""Largest number of exact LLR atoms enumerated before merging onto the grid."""


@dataclass(frozen=True)
class OpponentFilter:
    """
    Per state, the law of the opponent's cumulative own-signal LLR given its observed
    actions, plus log P(observed actions | state).
    """

    rows: tuple
    log_likelihood: tuple = (0.0, 0.0)
    clip: float = DEFAULT_CLIP
    off_path: bool = False

    @classmethod
    def initial(cls, model, grid_step=DEFAULT_GRID_STEP, clip=DEFAULT_CLIP):
        step = model_step(model, grid_step)

        return cls((GridPMF.point(step), GridPMF.point(step)), (0.0, 0.0), clip)

    def row(self, state):
        return self.rows[0 if State(state) is State.H else 1]

    @property
    def step(self):
        return self.rows[0].step

    @property
    def evidence(self):
        """Log-likelihood ratio of the opponent's action record, H against L."""
        return self.log_likelihood[0] - self.log_likelihood[1]

    def advance(self, kernels):
        """Prediction step: the opponent draws signals; kernels maps state -> GridPMF."""
        return replace(
            self,
            rows=tuple(
                row.convolve(kernels[state], clip=self.clip)
                for row, state in zip(self.rows, (State.H, State.L))
            ),
        )

    def action_probabilities(self, cut):
        """P(opponent invests | state) when it invests iff its own LLR >= cut."""
        return tuple(row.mass_at_or_above(cut) for row in self.rows)

    def observe(self, observed, cut, off_path="other"):
        """
        Condition on the opponent's action under the cut rule.

        Returns the new filter and the per-state probabilities of the observed action.
        An action with probability zero in both states raises OffPathError when
        off_path="raise" and is otherwise treated as the other action.
        """
        observed = Action(observed)
        splits = [row.split(cut) for row in self.rows]
        pick = 0 if observed is Action.I else 1
        masses = [parts[pick].mass for parts in splits]

        if all(mass <= 0 for mass in masses):
            if off_path == "raise":
                raise OffPathError(f"opponent action {observed.value} has probability zero in both states")

            pick = 1 - pick
            masses = [parts[pick].mass for parts in splits]
            went_off_path = True

            if all(mass <= 0 for mass in masses):
                raise OffPathError("opponent filter has no mass on either action")
        else:
            went_off_path = self.off_path

        rows = []
        log_likelihood = []

        for row, parts, mass, previous in zip(self.rows, splits, masses, self.log_likelihood):
            if mass > 0:
                rows.append(parts[pick].normalized())
            else:
                rows.append(row)

            log_likelihood.append(previous + log(mass) if mass > 0 else -inf)

        return (
            replace(self, rows=tuple(rows), log_likelihood=tuple(log_likelihood), off_path=went_off_path),
            tuple(masses),
        )


@dataclass(frozen=True)
class BeliefState:
    """A player's private belief: prior, own evidence and the opponent filter."""

    prior_log_odds: float
    own_llr_sum: float
    opponent_filter: OpponentFilter

    @classmethod
    def initial(cls, params, model, grid_step=DEFAULT_GRID_STEP, clip=DEFAULT_CLIP):
        model.require_valid()

        return cls(params.prior_log_odds, 0.0, OpponentFilter.initial(model, grid_step, clip))

    @property
    def action_evidence(self):
        return self.opponent_filter.evidence

    @property
    def log_odds(self):
        return self.prior_log_odds + self.own_llr_sum + self.action_evidence

    @property
    def belief(self):
        return float(logistic(self.log_odds))


@dataclass(frozen=True)
class PhaseContext:
    """
    What a player knows about the opponent's decision problem at one period.

    `history_key` is the action history in the opponent's own-first encoding,
    `opponent_public_log_odds` the opponent's prior plus the evidence it holds about
    this player, and `deviated` whether anyone invested during a cool-off.
    """

    investment: bool
    history_key: str = ""
    opponent_public_log_odds: float = 0.0
    deviated: bool = False


def update_own_signal(belief, model, symbol):
    """Add one own signal's LLR to the belief."""
    return replace(belief, own_llr_sum=belief.own_llr_sum + log_likelihood_ratio(model, symbol))


@lru_cache(maxsize=64)
def one_period_kernels(model, grid_step=DEFAULT_GRID_STEP):
    """Per-state one-period LLR laws on the model's grid (split rounding)."""
    step = model_step(model, grid_step)

    return {state: signal_kernel(model, state, step) for state in State}


def advance_opponent_signal(belief, model, grid_step=DEFAULT_GRID_STEP):
    """The opponent drew this period's signal: convolve both filter rows."""
    kernels = one_period_kernels(model, grid_step)

    return replace(belief, opponent_filter=belief.opponent_filter.advance(kernels))


def opponent_cut(opponent_policy, context):
    """Own-LLR cut at which the opponent's belief reaches its threshold."""
    if not context.investment or context.deviated:
        return inf

    threshold = opponent_policy.threshold_for(context.history_key)

    return logit(threshold) - context.opponent_public_log_odds


def update_opponent_action(belief, observed, opponent_policy, context, off_path="raise"):
    """
    Update on the opponent's action. In a cool-off the prescribed N carries no
    information; in an investment phase the filter rows are truncated to the opponent
    evidence consistent with the action and the action's likelihoods enter the belief.

    An action impossible in both states raises OffPathError unless off_path="other",
    which updates as if the other action had been observed.
    """
    if not context.investment or context.deviated:
        return belief

    cut = opponent_cut(opponent_policy, context)
    new_filter, _ = belief.opponent_filter.observe(observed, cut, off_path)

    return replace(belief, opponent_filter=new_filter)


@lru_cache(maxsize=64)
def _kernel_powers(model, state, step, rounding):
    return KernelPowers(model, state, step, rounding=rounding, clip=None, trim=True)


def _compositions(total, parts):
    """All count vectors of `parts` non-negative integers summing to `total`."""
    for bars in combinations_with_replacement(range(parts), total):
        counts = [0] * parts

        for index in bars:
            counts[index] += 1

        yield counts


def llr_sum_law(model, n, state, rounding="down", grid_step=DEFAULT_GRID_STEP,
                atom_budget=EXACT_ATOM_BUDGET, tol=None):
    """
    Law of the sum of n own-signal LLRs under a state, as (values, probs, exact).

    Lattice models are exact on their lattice. Other models enumerate signal count
    vectors while there are at most `atom_budget` of them, and otherwise merge onto the
    grid with the chosen rounding; `tol` then bounds the admissible rounding error.
    """
    if n < 0:
        raise ParameterError("number of periods must be non-negative")

    model.require_valid()
    step = model.lattice_step()

    if step is not None:
        pmf = _kernel_powers(model, State(state), step, "split")(n)
        return pmf.values, pmf.probs, True

    size = model.size

    if comb(n + size - 1, size - 1) <= atom_budget:
        log_probs = np.log(model.probabilities(state))
        llrs = model.llrs
        counts = np.array(list(_compositions(n, size)), dtype=float)
        log_mass = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1) + counts @ log_probs

        return counts @ llrs, np.exp(log_mass), True

    if tol is not None:
        check_resolution(grid_step, n, exact=False, tol=tol)

    pmf = _kernel_powers(model, State(state), grid_step, rounding)(n)

    return pmf.values, pmf.probs, False


def expected_posterior_after_n(start_belief, model, n, state, rounding="down",
                               grid_step=DEFAULT_GRID_STEP, tol=None):
    """E[belief after n more own signals | state], starting from start_belief."""
    start = logit(start_belief)
    values, probs, _ = llr_sum_law(model, n, state, rounding, grid_step, tol=tol)

    return float(np.dot(probs, logistic(start + values)))


def belief_distribution_after_n(start_belief, model, n, state, rounding="down",
                                grid_step=DEFAULT_GRID_STEP, tol=None):
    """Beliefs after n own signals and their probabilities under a state."""
    start = logit(start_belief)
    values, probs, _ = llr_sum_law(model, n, state, rounding, grid_step, tol=tol)

    return logistic(start + values), probs


@dataclass(frozen=True)
class FiniteProbSpace:
    """
    Weighted atoms with named partitions. A partition is a tuple of cells, each cell a
    tuple of atom indices.
    """

    atoms: tuple
    partitions: dict

    def __post_init__(self):
        weights = [weight for weight, _ in self.atoms]

        if any(weight <= 0 for weight in weights):
            raise ParameterError("atom weights must be positive")

        if sum(weights) != 1 and abs(float(sum(weights)) - 1) > 1e-12:
            raise ParameterError("atom weights must sum to 1")

        everything = set(range(len(self.atoms)))

        for name, cells in self.partitions.items():
            covered = [index for cell in cells for index in cell]

            if len(covered) != len(set(covered)) or set(covered) != everything:
                raise ParameterError(f"partition {name!r} is not a partition of the atoms")

    def weight(self, indices):
        return sum((self.atoms[index][0] for index in indices), Fraction(0))

    def cell_of(self, name):
        """Map atom index -> cell (as a tuple) for a partition."""
        return {index: cell for cell in self.partitions[name] for index in cell}

    def refines(self, fine, coarse):
        """True when every cell of `fine` sits inside one cell of `coarse`."""
        coarse_of = self.cell_of(coarse)

        return all(len({coarse_of[index] for index in cell}) == 1 for cell in self.partitions[fine])

    def conditional(self, event, name):
        """Per atom, P(event | cell of the atom) in partition `name`."""
        event = set(event)
        values = {}

        for cell in self.partitions[name]:
            total = self.weight(cell)
            value = self.weight([index for index in cell if index in event]) / total

            for index in cell:
                values[index] = value

        return values


@dataclass(frozen=True)
class CellCheck:
    cell: tuple
    p: Fraction
    conditioned_mean: Fraction
    ratio: Fraction

    @property
    def equal(self):
        return self.conditioned_mean == self.ratio

    @property
    def at_least_prior(self):
        return self.conditioned_mean >= self.p


@dataclass(frozen=True)
class SubmartingaleRecord:
    cells: tuple
    skipped: tuple

    @property
    def holds(self):
        return all(check.equal and check.at_least_prior for check in self.cells)


def conditioned_posterior_mean(space, event, coarse="coarse", fine="fine"):
    """
    For p = P(E | coarse) and q = P(E | fine), check on every coarse cell C with
    P(E and C) > 0 that E[q | E, C] = E[q^2 | C] / E[q | C] >= p, in exact arithmetic.
    """
    event = set(event)

    if space.weight(event) == 0:
        raise ParameterError("cannot condition on a zero-probability event")

    if not space.refines(fine, coarse):
        raise ParameterError(f"partition {fine!r} does not refine {coarse!r}")

    p = space.conditional(event, coarse)
    q = space.conditional(event, fine)
    checks = []
    skipped = []

    for cell in space.partitions[coarse]:
        in_event = [index for index in cell if index in event]
        event_weight = space.weight(in_event)

        if event_weight == 0:
            skipped.append(tuple(cell))
            continue

        cell_weight = space.weight(cell)
        conditioned_mean = sum((space.atoms[i][0] * q[i] for i in in_event), Fraction(0)) / event_weight
        mean_q = sum((space.atoms[i][0] * q[i] for i in cell), Fraction(0)) / cell_weight
        mean_q2 = sum((space.atoms[i][0] * q[i] ** 2 for i in cell), Fraction(0)) / cell_weight

        checks.append(CellCheck(tuple(cell), p[cell[0]], conditioned_mean, mean_q2 / mean_q))

    return SubmartingaleRecord(tuple(checks), tuple(skipped))


def random_finite_space(rng, atoms=6, max_weight=20):
    """
    A random finite space with rational weights, a coarse partition, a refinement of it
    and a random event, for exercising conditioned_posterior_mean.
    """
    raw = rng.integers(1, max_weight + 1, size=atoms)
    total = int(raw.sum())
    weighted = tuple((Fraction(int(w), total), index) for index, w in enumerate(raw))

    order = rng.permutation(atoms)
    coarse_cuts = sorted(set(rng.integers(1, atoms, size=rng.integers(0, atoms)).tolist()))
    coarse = _cut(order, coarse_cuts)
    fine = []

    for cell in coarse:
        inner_cuts = sorted(set(rng.integers(1, max(len(cell), 2), size=rng.integers(0, len(cell) + 1)).tolist()))
        fine.extend(_cut(list(cell), [c for c in inner_cuts if c < len(cell)]))

    event = tuple(int(index) for index in np.flatnonzero(rng.random(atoms) < 0.5))

    if not event:
        event = (int(order[0]),)

    return FiniteProbSpace(weighted, {"coarse": tuple(coarse), "fine": tuple(fine)}), event


def _cut(sequence, cuts):
    pieces = []
    start = 0

    for cut in list(cuts) + [len(sequence)]:
        if cut > start:
            pieces.append(tuple(int(x) for x in sequence[start:cut]))
            start = cut

    return pieces


@dataclass(frozen=True)
class TailBoundRecord:
    applicable: bool
    holds: bool
    mean: object
    tail_probability: object
    eps: object


def markov_tail_bound_check(values, eps, probabilities=None):
    """
    For X in [0, 1] with E[X] >= 1 - eps^2, check P[X > 1 - eps] >= 1 - eps.

    `values` are equally weighted samples of X, or the support of its distribution when
    `probabilities` is given. Exact when given Fractions. An unmet precondition is
    reported, not failed.
    """
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")

    values = list(values)

    if not values:
        raise ParameterError("at least one value is required")

    if probabilities is None:
        probabilities = [Fraction(1, len(values))] * len(values)
    else:
        probabilities = list(probabilities)

        if len(probabilities) != len(values):
            raise ParameterError(f"{len(values)} values but {len(probabilities)} probabilities")

    if any(v < 0 or v > 1 for v in values):
        raise ParameterError("values must lie in [0, 1]")

    mean = sum(v * p for v, p in zip(values, probabilities))
    tail = sum(p for v, p in zip(values, probabilities) if v > 1 - eps)

    if mean < 1 - eps**2:
        return TailBoundRecord(False, True, mean, tail, eps)

    return TailBoundRecord(True, tail >= 1 - eps, mean, tail, eps)


def invest_probability_one_period(threshold, params, model, state):
    """P(belief after one signal from the prior >= threshold | state)."""
    beliefs = logistic(params.prior_log_odds + model.llrs)
    probs = model.probabilities(state)

    return float(probs[beliefs >= threshold - 1e-12].sum())


def one_shot_threshold_equilibria(params, model, starts=None, max_iters=200, tol=1e-12):
    """
    Symmetric threshold equilibria of the single-period game: a player invests iff
    p * P(opponent invests | H) >= c, so pi = c / P(p_j >= pi | H), capped at 1
    (never invest). Iterates the map from several starting thresholds and returns the
    distinct fixed points found, lowest first.
    """
    c = params.cf
    starts = starts or [c, 0.5, 1.0]
    found = []

    for threshold in starts:
        for _ in range(max_iters):
            rate = invest_probability_one_period(threshold, params, model, State.H)
            updated = 1.0 if rate <= 0 else min(1.0, c / rate)

            if abs(updated - threshold) <= tol:
                break

            threshold = updated

        if not any(abs(threshold - seen) <= 1e-9 for seen in found):
            found.append(threshold)

    return sorted(found)


def posterior_from_counts(params, model, counts):
    """Exact posterior on H from symbol counts, as a Fraction."""
    likelihood_h = Fraction(1)
    likelihood_l = Fraction(1)

    for index, count in enumerate(counts):
        likelihood_h *= model.fH[index] ** count
        likelihood_l *= model.fL[index] ** count

    weight_h = params.p0 * likelihood_h

    return weight_h / (weight_h + (1 - params.p0) * likelihood_l)


