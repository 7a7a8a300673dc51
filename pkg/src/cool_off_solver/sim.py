"""
Monte Carlo play of the repeated investment game under a threshold policy pair.

Every episode draws its state and both players' signal streams from its own
SeedSequence([seed, episode, stream]) (stream 0 for the state, 1 and 2 for the players),
so results never depend on how episodes are spread over workers.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import ceil, sqrt

import numpy as np
from scipy.stats import norm

from cool_off_solver.cooloff import Phase, check_payoff_conditions, investment_floor
from cool_off_solver.game import State
from cool_off_solver.history import TIE_TOLERANCE, PublicTree
from cool_off_solver.logger import log_debug, log_info
from cool_off_solver.signals import sample_signals
from cool_off_solver.solver import SolverSettings, wilson_interval
from cool_off_solver.state import get_workers
from cool_off_solver.util.numbers import logistic

DEFAULT_HORIZON = 2000
DEFAULT_WINDOW = 100
CONFIDENCE = 0.99
TIME_QUANTILES = (0.5, 0.9, 0.99)

TRACE_COLUMNS = ("period", "phase", "x1", "x2", "p1", "p2", "a1", "a2", "u1", "u2")
METRIC_COLUMNS = (
    "state",
    "episodes",
    "invest_rate",
    "invest_low",
    "invest_high",
    "idle_rate",
    "idle_low",
    "idle_high",
    "payoff1",
    "payoff1_half_width",
    "payoff2",
    "payoff2_half_width",
    "switch_q50",
    "switch_q90",
    "switch_q99",
)


def episode_rngs(seed, episode):
    """Generators for the state draw and for players 1 and 2."""
    return [np.random.default_rng(np.random.SeedSequence([seed, episode, stream])) for stream in range(3)]


@dataclass
class EpisodeTrace:
    episode: int
    state: State
    horizon: int
    payoffs: tuple
    truncation_bound: float
    last_switch: int
    converged_invest: bool
    converged_idle: bool
    floor_violations: int
    cooloff_violations: int
    signals: np.ndarray = field(default=None, repr=False)
    beliefs: np.ndarray = field(default=None, repr=False)
    actions: np.ndarray = field(default=None, repr=False)
    investment: np.ndarray = field(default=None, repr=False)
    stage: np.ndarray = field(default=None, repr=False)

    @property
    def has_records(self):
        return self.actions is not None

    def phases(self):
        return [Phase.INVESTMENT if flag else Phase.COOL_OFF for flag in self.investment]

    def rows(self, model):
        """Per-period records in TRACE_COLUMNS order."""
        alphabet = model.alphabet

        for index in range(self.horizon):
            yield (
                index + 1,
                (Phase.INVESTMENT if self.investment[index] else Phase.COOL_OFF).value,
                alphabet[self.signals[0, index]],
                alphabet[self.signals[1, index]],
                repr(float(self.beliefs[0, index])),
                repr(float(self.beliefs[1, index])),
                "I" if self.actions[0, index] else "N",
                "I" if self.actions[1, index] else "N",
                repr(float(self.stage[0, index])),
                repr(float(self.stage[1, index])),
            )

    def stripped(self):
        """The trace without its per-period arrays."""
        return EpisodeTrace(
            self.episode,
            self.state,
            self.horizon,
            self.payoffs,
            self.truncation_bound,
            self.last_switch,
            self.converged_invest,
            self.converged_idle,
            self.floor_violations,
            self.cooloff_violations,
        )


class _Player:
    """Plays one policy pair on its public tree, caching per-segment evidence."""

    def __init__(self, tree):
        self.tree = tree
        self._evidence = {}

    def segment_evidence(self, segment):
        found = self._evidence.get(id(segment))

        if found is None or found[0] is not segment:
            evidence = np.array([[n.evidence_about(2) for n in segment.nodes], [n.evidence_about(1) for n in segment.nodes]])
            found = (segment, evidence)
            self._evidence[id(segment)] = found

        return found[1]

    def play(self, ell, horizon):
        """
        Actions, investment-period mask and action evidence (about the other player) per
        period, given both players' clamped cumulative LLRs.
        """
        tree = self.tree
        actions = np.zeros((2, horizon), dtype=bool)
        investment = np.zeros(horizon, dtype=bool)
        evidence = np.zeros((2, horizon))
        node = tree.root
        start = node.period

        evidence[:, : min(start - 1, horizon)] = [[node.evidence_about(2)], [node.evidence_about(1)]]

        while node.period <= horizon:
            segment = tree.spine_segment(node, horizon)
            periods = segment.periods
            count = int(np.searchsorted(periods, horizon, side="right"))
            index = periods[:count] - 1
            invests = ell[:, index] >= segment.cuts[:count].T - TIE_TOLERANCE
            failures = np.flatnonzero(~invests.all(axis=0))
            stop = failures[0] + 1 if failures.size else count
            spine_evidence = self.segment_evidence(segment)
            investment[index[:stop]] = True
            actions[:, index[:stop]] = invests[:, :stop]
            evidence[:, index[:stop]] = spine_evidence[:, :stop]

            if not failures.size:
                if segment.absorbed and periods[count - 1] < horizon:
                    rest = slice(int(periods[count - 1]), horizon)
                    investment[rest] = True
                    actions[:, rest] = True
                    evidence[:, rest] = spine_evidence[:, count - 1 : count]

                break

            failed = segment.nodes[failures[0]]
            code = "".join("I" if flag else "N" for flag in invests[:, failures[0]])
            node = tree.child(failed, code)
            cooloff = slice(failed.period, min(node.period - 1, horizon))
            evidence[:, cooloff] = [[node.evidence_about(2)], [node.evidence_about(1)]]

        return actions, investment, evidence


def _episode(player, params, model, horizon, seed, episode, force_state, window, trace):
    state_rng, *player_rngs = episode_rngs(seed, episode)
    drawn = State.H if state_rng.random() < params.p0f else State.L
    state = State(force_state) if force_state is not None else drawn
    signals = np.stack([sample_signals(model, state, horizon, rng) for rng in player_rngs])
    clip = player.tree.clip
    ell = np.clip(np.cumsum(model.llrs[signals], axis=1), -clip, clip)
    actions, investment, evidence = player.play(ell, horizon)

    c = params.cf
    success = (state is State.H) & actions[0] & actions[1]
    stage = np.where(actions, np.where(success, 1 - c, -c), 0.0)
    weights = (1 - params.deltaf) * np.power(params.deltaf, np.arange(horizon))
    payoffs = tuple(float(np.dot(weights, row)) for row in stage)
    beliefs = logistic(player.tree.prior + ell + evidence)

    floor = float(investment_floor(params))
    floor_violations = int(np.count_nonzero(actions & (beliefs < floor - 1e-9)))
    cooloff_violations = int(np.count_nonzero(actions[:, ~investment]))

    codes = 2 * actions[0].astype(int) + actions[1]
    switches = np.flatnonzero(np.diff(codes))
    last_switch = int(switches[-1]) + 2 if switches.size else 0
    tail = codes[-min(window, horizon) :]

    result = EpisodeTrace(
        episode,
        state,
        horizon,
        payoffs,
        params.deltaf**horizon,
        last_switch,
        bool(np.all(tail == 3)),
        bool(np.all(tail == 0)),
        floor_violations,
        cooloff_violations,
    )

    if trace:
        result.signals = signals
        result.beliefs = beliefs
        result.actions = actions
        result.investment = investment
        result.stage = stage

    return result


def _tree(profile, params, model, settings):
    first, second = profile

    return PublicTree(params, model, first.scheme, (first, second), settings.filter_step, settings.clip)


def run_episode(profile, params, model, horizon, seed, episode=0, force_state=None, window=DEFAULT_WINDOW,
                trace=True, settings=None, tree=None):
    """
    Play one episode: draw the state (or force it), then per period both signals, the
    public-history beliefs, both actions under the cool-off constraint, and the stage
    payoffs. Deterministic in (seed, episode).
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")

    settings = settings or SolverSettings()
    tree = tree or _tree(profile, params, model, settings)

    return _episode(_Player(tree), params, model, horizon, seed, episode, force_state, window, trace)


def _run_chunk(job):
    profile, params, model, horizon, seed, episodes, force_state, window, trace_below, settings = job
    player = _Player(_tree(profile, params, model, settings))
    results = []

    for episode in episodes:
        trace = episode < trace_below
        result = _episode(player, params, model, horizon, seed, episode, force_state, window, trace)
        results.append(result)

    return results


@dataclass
class StateMetrics:
    state: State
    episodes: int
    invest_rate: float
    invest_ci: tuple
    idle_rate: float
    idle_ci: tuple
    payoff_means: tuple
    payoff_half_widths: tuple
    switch_quantiles: dict

    def row(self):
        quantiles = [self.switch_quantiles.get(q) for q in TIME_QUANTILES]

        return (
            self.state.value,
            self.episodes,
            self.invest_rate,
            *self.invest_ci,
            self.idle_rate,
            *self.idle_ci,
            self.payoff_means[0],
            self.payoff_half_widths[0],
            self.payoff_means[1],
            self.payoff_half_widths[1],
            *quantiles,
        )


@dataclass
class BatchMetrics:
    n_episodes: int
    horizon: int
    window: int
    truncation_bound: float
    per_state: dict
    floor_violations: int
    cooloff_violations: int
    confidence: float = CONFIDENCE
    ci_method: str = "Wilson score for rates, normal for means"
    traces: list = field(default_factory=list, repr=False)

    def rows(self):
        return [self.per_state[state].row() for state in State if state in self.per_state]


def _half_width(values, confidence):
    if values.size < 2:
        return float("inf")

    return float(norm.ppf(0.5 + confidence / 2) * values.std(ddof=1) / sqrt(values.size))


def _state_metrics(state, episodes, confidence):
    count = len(episodes)
    invested = sum(e.converged_invest for e in episodes)
    idle = sum(e.converged_idle for e in episodes)
    payoffs = np.array([e.payoffs for e in episodes])
    switches = np.array([e.last_switch for e in episodes])

    return StateMetrics(
        state,
        count,
        invested / count,
        wilson_interval(invested, count, confidence),
        idle / count,
        wilson_interval(idle, count, confidence),
        tuple(float(np.mean(payoffs[:, k])) for k in range(2)),
        tuple(_half_width(payoffs[:, k], confidence) for k in range(2)),
        {q: float(np.quantile(switches, q)) for q in TIME_QUANTILES},
    )


def aggregate(results, horizon, window, delta, confidence=CONFIDENCE):
    """Batch metrics from episode results taken in episode order."""
    per_state = {}

    for state in State:
        episodes = [r for r in results if r.state is state]

        if episodes:
            per_state[state] = _state_metrics(state, episodes, confidence)

    return BatchMetrics(
        len(results),
        horizon,
        window,
        float(delta) ** horizon,
        per_state,
        sum(r.floor_violations for r in results),
        sum(r.cooloff_violations for r in results),
        confidence,
        traces=[r for r in results if r.has_records],
    )


def run_batch(profile, params, model, horizon, n, seed, force_state=None, window=DEFAULT_WINDOW, workers=None,
              trace_episodes=0, settings=None, confidence=CONFIDENCE):
    """
    Play n episodes and aggregate them. Convergence means the last `window` periods all
    show (I, I) (under H) or (N, N) (under L).
    """
    if n < 1:
        raise ValueError("a batch needs at least one episode")

    settings = settings or SolverSettings()
    workers = max(1, min(workers or get_workers(), n))
    chunk = max(1, ceil(n / (4 * workers)))
    jobs = [
        (profile, params, model, horizon, seed, range(start, min(start + chunk, n)), force_state, window,
         trace_episodes, settings)
        for start in range(0, n, chunk)
    ]
    log_info(f"Simulating **{n}** episodes over **{horizon}** periods with {workers} worker(s)")

    if workers == 1:
        chunks = [_run_chunk(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            chunks = list(executor.map(_run_chunk, jobs))

    results = [result for part in chunks for result in part]
    log_debug(f"Collected {len(results)} episodes in {len(jobs)} chunks", indent=1)

    return aggregate(results, horizon, window, params.deltaf, confidence)


@dataclass
class EfficiencyCheck:
    state: State
    player: int
    mean: float
    margin: float
    bound: float
    passed: bool


@dataclass
class EfficiencyReport:
    passed: bool
    vacuous: bool
    checks: list


def payoff_efficiency_check(metrics, params, Delta):
    """
    Mean discounted payoff, less the truncation bound and the CI half-width, must reach
    1 - c - Delta under H and -Delta under L for both players.
    """
    Delta = float(Delta)

    if Delta >= 1:
        return EfficiencyReport(True, True, [])

    targets = {State.H: 1 - params.cf - Delta, State.L: -Delta}
    checks = []

    for state, stats in metrics.per_state.items():
        for player in (1, 2):
            mean = stats.payoff_means[player - 1]
            margin = metrics.truncation_bound + stats.payoff_half_widths[player - 1]
            passed = mean - margin >= targets[state]
            checks.append(EfficiencyCheck(state, player, mean, margin, targets[state], passed))

    return EfficiencyReport(bool(checks) and all(c.passed for c in checks), False, checks)


def payoff_lower_bounds(params, eps, Delta):
    """Closed-form per-state payoff lower bounds implied by eps (and Delta under L)."""
    report = check_payoff_conditions(params, eps, Delta)
    bounds = {State.H: report.high_state_bound, State.L: report.low_state_bound}

    return {state: None if bound is None else float(bound) for state, bound in bounds.items()}
