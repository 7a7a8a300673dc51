"""
Cool-off schemes and the parameter derivations behind them.

A cool-off scheme splits action histories into cool-off and investment phases. Play
starts in a cool-off of length T(1); an investment phase lasts while both players
invest, and a failure at period s starts a cool-off of length T(s). A period t is an
investment period iff the history before it, a^(t-1), is classified as investment.

The derivations pick eps and T0 from the cost and discount inequalities, tabulate T(s)
from worst-case belief floors, and find T1 and delta_bar for the payoff-efficiency runs.
All inequalities are re-checked in exact rational arithmetic, and every discretization
errs toward longer cool-offs.
"""

import threading
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import floor, log

from cool_off_solver.errors import InfeasibleError, ParameterError
from cool_off_solver.game import Action, State
from cool_off_solver.lattice import DEFAULT_GRID_STEP, KernelPowers, expected_belief, model_step
from cool_off_solver.logger import log_debug, log_info
from cool_off_solver.signals import SignalModel, worst_case_llr
from cool_off_solver.util.numbers import logistic, logit, parse_fraction

DEFAULT_EPS_STEP = Fraction(1, 10**4)
DEFAULT_EPS_MAX = Fraction(1, 4)
DEFAULT_DELTA_STEP = Fraction(1, 10**4)

MAX_COOL_OFF = 10**6
"""Longest cool-off the derivations will search for before giving up."""

_MEMO_LIMIT = 100_000


class Phase(str, Enum):
    COOL_OFF = "CoolOff"
    INVESTMENT = "Investment"


@dataclass(frozen=True)
class PhaseState:
    """
    Classification of a history of `length` periods.

    `start` is the period at which the running cool-off began (None for the initial
    cool-off or inside an investment phase); `deviated` records an investment made
    during a cool-off.
    """

    investment: bool = False
    start: int = None
    length: int = 0
    deviated: bool = False

    @property
    def phase(self):
        return Phase.INVESTMENT if self.investment else Phase.COOL_OFF


class BeliefFloorRule:
    """
    Cool-off length rule from worst-case belief floors.

    For a cool-off starting at s the floor is the prior moved by s periods of the worst
    own-signal LLR of both players; the rule returns the smallest n for which the
    expected belief after n own signals from that floor, under H, exceeds the target.
    """

    def __init__(self, prior_log_odds, worst_llr, target, model, grid_step=DEFAULT_GRID_STEP):
        self.prior_log_odds = float(prior_log_odds)
        self.worst_llr = float(worst_llr)
        self.target = float(target)
        self.model = model
        self.grid_step = float(grid_step)
        self._powers = None
        self._last = (0, 0)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_powers"] = None
        state["_last"] = (0, 0)

        return state

    def floor_log_odds(self, s):
        return self.prior_log_odds + 2 * s * self.worst_llr

    def expected_after(self, s, n):
        """Expected belief under H after n signals from the floor of s."""
        if self._powers is None:
            step = model_step(self.model, self.grid_step)
            self._powers = KernelPowers(self.model, State.H, step, rounding="down", trim=True)

        return expected_belief(self.floor_log_odds(s), self._powers(n))

    def __call__(self, s):
        last_s, last_n = self._last
        n = last_n if s >= last_s else 0

        while self.expected_after(s, n) <= self.target:
            n += 1

            if n > MAX_COOL_OFF:
                raise InfeasibleError(
                    f"no cool-off of at most {MAX_COOL_OFF} periods lifts the belief floor "
                    f"of period {s} above {self.target}",
                    witness={"s": s, "target": self.target},
                )

        self._last = (s, n)

        return n

    def to_dict(self):
        return {
            "prior_log_odds": repr(self.prior_log_odds),
            "worst_llr": repr(self.worst_llr),
            "target": repr(self.target),
            "grid_step": repr(self.grid_step),
            "model": {
                "alphabet": list(self.model.alphabet),
                "fH": [str(p) for p in self.model.fH],
                "fL": [str(p) for p in self.model.fL],
            },
        }

    @classmethod
    def from_dict(cls, data):
        model = SignalModel.from_rows(data["model"]["alphabet"], data["model"]["fH"], data["model"]["fL"])

        return cls(
            float(data["prior_log_odds"]),
            float(data["worst_llr"]),
            float(data["target"]),
            model,
            float(data.get("grid_step", DEFAULT_GRID_STEP)),
        )


class CoolOffScheme:
    """
    A cool-off function T as a table of lengths T(1), T(2), ... plus an optional rule
    that extends the table on demand; without a rule the last length repeats.

    Classification results are memoized; inserts are serialized by a lock.
    """

    def __init__(self, lengths, T0_floor=1, rule=None, relax_first=False):
        lengths = [int(length) for length in lengths]

        if not lengths:
            raise ParameterError("a cool-off scheme needs at least T(1)")

        self.T0_floor = int(T0_floor)
        self.rule = rule
        self.relax_first = bool(relax_first)
        self._lengths = []
        self._memo = {}
        self._lock = threading.Lock()

        for length in lengths:
            self._append(length)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        state["_memo"] = {}

        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def _append(self, length):
        s = len(self._lengths) + 1

        if length < 1:
            raise ParameterError(f"cool-off length T({s}) must be positive, got {length}")

        if length < self.T0_floor and (s >= 2 or not self.relax_first):
            raise ParameterError(f"cool-off length T({s}) = {length} is below T0 = {self.T0_floor}")

        self._lengths.append(length)

    @classmethod
    def constant(cls, length, T0_floor=None):
        """The scheme with T(s) = length for every s."""
        return cls([length], length if T0_floor is None else T0_floor)

    @property
    def lengths(self):
        """The tabulated lengths T(1), T(2), ... computed so far."""
        return tuple(self._lengths)

    def T(self, s):
        if s < 1:
            raise ParameterError(f"cool-off start period must be positive, got {s}")

        if s > len(self._lengths):
            with self._lock:
                while len(self._lengths) < s:
                    if self.rule is None:
                        length = self._lengths[-1]
                    else:
                        length = max(self.T0_floor, self.rule(len(self._lengths) + 1))

                    self._append(length)

        return self._lengths[s - 1]

    @property
    def first_investment_period(self):
        return self.T(1) + 2

    def next_investment_period(self, t, both_invested):
        """The investment period following the one at t."""
        return t + 1 if both_invested else t + self.T(t) + 1

    def remember(self, key, label):
        with self._lock:
            if len(self._memo) >= _MEMO_LIMIT:
                self._memo.clear()

            self._memo[key] = label

    def recall(self, key):
        return self._memo.get(key)

    def to_dict(self):
        return {
            "lengths": list(self._lengths),
            "T0_floor": self.T0_floor,
            "relax_first": self.relax_first,
            "rule": self.rule.to_dict() if self.rule is not None else None,
        }

    @classmethod
    def from_dict(cls, data):
        rule = data.get("rule")

        return cls(
            data["lengths"],
            data.get("T0_floor", 1),
            BeliefFloorRule.from_dict(rule) if rule else None,
            data.get("relax_first", False),
        )


def next_phase(scheme, state, profile):
    """Classify the history extended by one action profile."""
    length = state.length + 1
    deviated = state.deviated or (not state.investment and any(action is Action.I for action in profile))

    if state.investment:
        if profile.both_invest:
            return PhaseState(True, None, length, deviated)

        # the longest investment subhistory ends at length - 1: the cool-off starts now
        return PhaseState(False, length, length, deviated)

    if state.start is None:
        return PhaseState(length > scheme.T(1), None, length, deviated)

    return PhaseState(length > state.start + scheme.T(state.start) - 1, state.start, length, deviated)


def phase_states(scheme, history):
    """Classification of every prefix a^0, a^1, ..., a^k of a history."""
    state = PhaseState()
    states = [state]

    for profile in history:
        state = next_phase(scheme, state, profile)
        states.append(state)

    return states


def classify_history(scheme, history):
    """Phase label of an action history (a sequence of ActionProfile)."""
    history = list(history)
    key = ".".join(profile.code for profile in history)
    label = scheme.recall(key)

    if label is None:
        label = phase_states(scheme, history)[-1].phase
        scheme.remember(key, label)

    return label


def acting_phase(scheme, t, history):
    """Phase in which period t is played, given the history a^(t-1)."""
    history = list(history)

    if len(history) != t - 1:
        raise ParameterError(f"period {t} needs a history of length {t - 1}, got {len(history)}")

    return classify_history(scheme, history)


def _exact(value):
    return value if isinstance(value, Fraction) else parse_fraction(value)


def discount_tail_holds(params, eps, T0):
    """delta^T0 < (1 - delta)(1 - c - eps)."""
    eps = _exact(eps)

    return params.delta**T0 < (1 - params.delta) * (1 - params.c - eps)


def investment_cutoff_bound(params, eps, T0):
    """
    Highest belief at which a player may still decline to invest when the opponent
    invests with probability at least 1 - eps: c / ((1 - eps) - (1 - c) delta^T0 / (1 - delta)).
    Infinite when the denominator is not positive.
    """
    eps = _exact(eps)
    denominator = (1 - eps) - (1 - params.c) * params.delta**T0 / (1 - params.delta)

    if denominator <= 0:
        return None

    return params.c / denominator


def cutoff_holds(params, eps, T0):
    """The cutoff bound lies below c(1 + 2 eps), which lies below 1 - eps."""
    eps = _exact(eps)
    bound = investment_cutoff_bound(params, eps, T0)
    p_bar = params.c * (1 + 2 * eps)

    return bound is not None and bound < p_bar < 1 - eps


def _smallest_period(predicate, estimate):
    n = max(1, estimate)

    while not predicate(n):
        n += 1

    while n > 1 and predicate(n - 1):
        n -= 1

    return n


def min_T0_discount(params, eps):
    """Smallest T0 with delta^T0 < (1 - delta)(1 - c - eps)."""
    eps = _exact(eps)
    rhs = (1 - params.delta) * (1 - params.c - eps)

    if rhs <= 0:
        raise InfeasibleError(
            "1 - c - eps must be positive for any T0 to exist",
            witness={"inequality": "discount_tail", "eps": str(eps), "c": str(params.c)},
        )

    estimate = floor(log(float(rhs)) / log(params.deltaf)) + 1

    return _smallest_period(lambda n: discount_tail_holds(params, eps, n), estimate)


def min_T0(params, eps):
    """Smallest T0 meeting both the discount-tail and the cutoff inequalities."""
    eps = _exact(eps)
    T0 = min_T0_discount(params, eps)
    # (1 - c) delta^T0 / (1 - delta) < (1 - eps) - 1 / (1 + 2 eps)
    slack = (1 - eps) - 1 / (1 + 2 * eps)

    if slack <= 0 or not params.c * (1 + 2 * eps) < 1 - eps:
        raise InfeasibleError(
            "no T0 brings the cutoff bound below c(1 + 2 eps) < 1 - eps",
            witness={"inequality": "cutoff", "eps": str(eps), "c": str(params.c)},
        )

    target = float(slack * (1 - params.delta) / (1 - params.c))
    estimate = max(T0, floor(log(target) / log(params.deltaf)) + 1)

    return _smallest_period(
        lambda n: n >= T0 and discount_tail_holds(params, eps, n) and cutoff_holds(params, eps, n),
        estimate,
    )


@dataclass(frozen=True)
class PayoffConditionReport:
    holds: bool
    high_state_bound: Fraction
    low_state_bound: Fraction
    witness: dict


def check_payoff_conditions(params, eps, Delta):
    """
    The eps conditions needed before deriving T1:

    (1 - eps)^2 ((1 - k)(1 - c) + k(-c)) > 1 - c - Delta with k = 2 eps / (1 - p_bar), and
    (1 - eps)(-Delta / 2) - eps c > -Delta.
    """
    eps = _exact(eps)
    Delta = _exact(Delta)

    if not 0 < Delta <= 1:
        raise ParameterError(f"Delta must lie in (0, 1], got {Delta}")

    p_bar = params.c * (1 + 2 * eps)
    witness = {}

    if p_bar >= 1:
        return PayoffConditionReport(False, None, None, {"inequality": "p_bar", "p_bar": str(p_bar)})

    k = 2 * eps / (1 - p_bar)
    high = (1 - eps) ** 2 * ((1 - k) * (1 - params.c) + k * (-params.c))
    low = (1 - eps) * (-Delta / 2) - eps * params.c

    if not high > 1 - params.c - Delta:
        witness["high_state"] = {"lhs": str(high), "rhs": str(1 - params.c - Delta)}

    if not low > -Delta:
        witness["low_state"] = {"lhs": str(low), "rhs": str(-Delta)}

    return PayoffConditionReport(not witness, high, low, witness)


def investment_floor(params):
    """(c - c delta) / (1 - c delta): below this belief investing is never a best response."""
    return (params.c - params.c * params.delta) / (1 - params.c * params.delta)


@dataclass(frozen=True)
class DerivedParams:
    eps: Fraction
    T0: int
    p_bar: Fraction
    p_floor: Fraction
    T1: int = None
    delta_bar: Fraction = None
    Delta: Fraction = None

    @property
    def epsf(self):
        return float(self.eps)

    @property
    def p_barf(self):
        return float(self.p_bar)

    def check(self, params):
        """Re-check every derived inequality exactly; returns the violated ones."""
        violations = []

        if not discount_tail_holds(params, self.eps, self.T0):
            violations.append("delta^T0 < (1 - delta)(1 - c - eps)")

        if not cutoff_holds(params, self.eps, self.T0):
            violations.append("cutoff bound < c(1 + 2 eps) < 1 - eps")

        if not 0 < self.p_floor < self.p_bar < 1:
            violations.append("0 < p_floor < p_bar < 1")

        if self.Delta is not None and not check_payoff_conditions(params, self.eps, self.Delta).holds:
            violations.append("payoff-slack conditions on eps")

        if self.delta_bar is not None and not self.delta_bar**self.T1 > 1 - self.eps:
            violations.append("delta_bar^T1 > 1 - eps")

        return violations

    def to_dict(self):
        return {
            "eps": str(self.eps),
            "T0": self.T0,
            "T1": self.T1,
            "delta_bar": None if self.delta_bar is None else str(self.delta_bar),
            "p_bar": str(self.p_bar),
            "p_floor": str(self.p_floor),
            "Delta": None if self.Delta is None else str(self.Delta),
        }

    @classmethod
    def from_dict(cls, data):
        def optional(key):
            return None if data.get(key) is None else parse_fraction(data[key])

        return cls(
            parse_fraction(data["eps"]),
            int(data["T0"]),
            parse_fraction(data["p_bar"]),
            parse_fraction(data["p_floor"]),
            None if data.get("T1") is None else int(data["T1"]),
            optional("delta_bar"),
            optional("Delta"),
        )


def derive_eps_T0(params, eps_seed=None, eps_step=DEFAULT_EPS_STEP, eps_max=DEFAULT_EPS_MAX, Delta=None):
    """
    Largest eps on the grid eps_step, 2 eps_step, ..., eps_max (starting at eps_seed when
    given) for which both inequalities admit a T0, with the smallest such T0. With Delta,
    eps must also meet the payoff-slack conditions.
    """
    eps_step = _exact(eps_step)
    top = _exact(eps_seed) if eps_seed is not None else _exact(eps_max)
    witness = {}

    for k in range(floor(top / eps_step), 0, -1):
        eps = k * eps_step

        if not params.c * (1 + 2 * eps) < 1 - eps:
            witness.setdefault("inequality", "c(1 + 2 eps) < 1 - eps")
            witness["eps"] = str(eps)
            continue

        if not 1 - params.c - eps > 0:
            witness.setdefault("inequality", "1 - c - eps > 0")
            witness["eps"] = str(eps)
            continue

        if Delta is not None and not check_payoff_conditions(params, eps, Delta).holds:
            witness.setdefault("inequality", "payoff-slack conditions")
            witness["eps"] = str(eps)
            continue

        T0 = min_T0(params, eps)
        derived = DerivedParams(
            eps,
            T0,
            params.c * (1 + 2 * eps),
            investment_floor(params),
            Delta=None if Delta is None else _exact(Delta),
        )
        log_debug(f"eps = **{eps}** ({float(eps):g}), T0 = **{T0}**")

        return derived

    raise InfeasibleError(
        f"no eps on the grid of step {eps_step} up to {top} satisfies the derivation inequalities",
        witness=witness,
    )


def derive_cooloff_function(params, derived, model, horizon, relax_first=False, grid_step=DEFAULT_GRID_STEP):
    """
    Tabulate T(1..horizon): T(s) is the larger of T0 and the belief-floor length for s.
    With relax_first, T(1) is the derived T1 (or the bare floor length) instead.
    Beyond the table the same rule extends T on demand.
    """
    if horizon < 1:
        raise ParameterError(f"horizon must be positive, got {horizon}")

    model.require_valid()
    worst, _ = worst_case_llr(model)
    rule = BeliefFloorRule(params.prior_log_odds, worst, 1 - derived.epsf**2, model, grid_step)
    lengths = []

    for s in range(1, horizon + 1):
        length = rule(s)

        if s == 1 and relax_first:
            lengths.append(derived.T1 if derived.T1 is not None else max(1, length))
        else:
            lengths.append(max(derived.T0, length))

    log_info(
        f"Tabulated T(1..{horizon}): T(1) = **{lengths[0]}**, T({horizon}) = **{lengths[-1]}**",
        indent=1,
    )

    return CoolOffScheme(lengths, derived.T0, rule, relax_first)


def _belief_laws(model, state, rounding, grid_step):
    step = model_step(model, grid_step)

    return KernelPowers(model, state, step, rounding=rounding, trim=True)


def derive_T1_delta_bar(params, derived, model, Delta, delta_step=DEFAULT_DELTA_STEP,
                        grid_step=DEFAULT_GRID_STEP, max_T1=MAX_COOL_OFF):
    """
    T1 is the smallest number of own signals after which, from the prior:
    the expected belief under H exceeds 1 - eps^2; both players' beliefs exceed 1 - eps
    with probability above 1 - eps under H; and both lie below Delta / (2(1 - c) + Delta)
    with probability above 1 - eps under L. delta_bar is the smallest grid value with
    delta_bar^T1 > 1 - eps.
    """
    Delta = _exact(Delta)
    conditions = check_payoff_conditions(params, derived.eps, Delta)

    if not conditions.holds:
        raise InfeasibleError(
            f"eps = {derived.eps} fails the payoff-slack conditions for Delta = {Delta}",
            witness=conditions.witness,
        )

    model.require_valid()
    eps = derived.epsf
    low_cut = float(Delta / (2 * (1 - params.c) + Delta))
    high_laws = _belief_laws(model, State.H, "down", grid_step)
    low_laws = _belief_laws(model, State.L, "up", grid_step)
    start = params.prior_log_odds
    high_cut = logit(1 - eps) - start
    low_cut_llr = logit(low_cut) - start

    for n in range(1, max_T1 + 1):
        high = high_laws(n)

        if expected_belief(start, high) <= 1 - eps**2:
            continue

        above = float(high.probs[high.values > high_cut + 1e-12].sum())

        if above**2 <= 1 - eps:
            continue

        low = low_laws(n)
        below = float(low.probs[low.values < low_cut_llr - 1e-12].sum())

        if below**2 > 1 - eps:
            T1 = n
            break
    else:
        raise InfeasibleError(
            f"no T1 up to {max_T1} meets the learning conditions",
            witness={"eps": str(derived.eps), "Delta": str(Delta)},
        )

    target = 1 - derived.eps
    estimate = floor(float(target) ** (1 / T1) / float(delta_step)) + 1
    k = max(1, estimate)

    while not (k * delta_step) ** T1 > target:
        k += 1

    while k > 1 and ((k - 1) * delta_step) ** T1 > target:
        k -= 1

    delta_bar = k * delta_step

    if delta_bar >= 1:
        raise InfeasibleError(
            f"no discount factor below 1 on the grid of step {delta_step} gives delta^{T1} > 1 - eps",
            witness={"T1": T1, "eps": str(derived.eps)},
        )

    log_info(f"T1 = **{T1}**, delta_bar = **{delta_bar}** ({float(delta_bar):.4f})", indent=1)

    return DerivedParams(
        derived.eps,
        derived.T0,
        derived.p_bar,
        derived.p_floor,
        T1,
        delta_bar,
        Delta,
    )


def belief_floor(params, model, s):
    """Worst-case belief at the start of a cool-off beginning in period s."""
    worst, _ = worst_case_llr(model)

    return float(logistic(params.prior_log_odds + 2 * s * worst))
